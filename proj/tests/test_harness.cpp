#include <gtest/gtest.h>

#include <cmath>

#include "p2pmatch/harness.hpp"
#include "p2pmatch/oracles.hpp"
#include "p2pmatch/verify.hpp"

using namespace p2pmatch;

namespace {

// Two borrowers, one lender; u_l(b0) = 0.9 and u_l(b1) = 0.7 set directly.
MarketInstance two_by_one() {
  MarketInstance inst;
  inst.num_borrowers = 2;
  inst.num_lenders = 1;
  inst.request = {5, 5};
  inst.budget = {10};
  inst.rate = {0.5, 0.5};
  inst.borrower_utility = Matrix<double>(2, 1, 0.5);
  inst.lender_utility = Matrix<double>(1, 2);
  inst.lender_utility(0, 0) = 0.9;
  inst.lender_utility(0, 1) = 0.7;
  return inst;
}

OptBenchmark bench_on(const MarketInstance& inst, BorrowerIndex b) {
  OptBenchmark bench;
  bench.b_opt.assign(inst.num_lenders, b);
  bench.baseline_borrower.assign(inst.num_lenders, b);
  bench.fallback.assign(inst.num_lenders, 0);
  for (LenderIndex l = 0; l < inst.num_lenders; ++l) bench.baseline.push_back(inst.u_lender(l, b));
  return bench;
}

RunLog scripted(std::size_t N, const std::vector<std::optional<BorrowerIndex>>& lender0) {
  RunLog log;
  log.finalized_at.assign(N, std::nullopt);
  for (std::size_t t = 1; t <= lender0.size(); ++t) {
    RoundRecord rec;
    rec.t = t;
    rec.lender_match.assign(N, std::nullopt);
    rec.lender_match[0] = lender0[t - 1];
    rec.reward.assign(N, std::nullopt);
    log.rounds.push_back(rec);
  }
  return log;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.generation = {.num_borrowers = 2, .num_lenders = 4};
  c.algorithms = {Algorithm::kGsUcb, Algorithm::kGsBlemet, Algorithm::kGsBlemetFair};
  c.fair_lambda3_grid = {0.25};
  c.horizon = 25;
  c.runs = 4;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(CumulativeRegret, ThreeRoundsOnASecondChoice) {
  const auto inst = two_by_one();
  const auto trace = cumulative_regret({scripted(1, {1, 1, 1})}, bench_on(inst, 0), inst, 3);
  EXPECT_NEAR(trace.per_run[0](0, 2), 0.6, 1e-12);
  EXPECT_NEAR(trace.per_run[0](0, 0), 0.2, 1e-12);
}

TEST(CumulativeRegret, PlayingTheBenchmarkIsExactlyZero) {
  const auto inst = two_by_one();
  const auto trace = cumulative_regret({scripted(1, {0, 0, 0, 0})}, bench_on(inst, 0), inst, 4);
  for (double v : trace.per_run[0].data()) EXPECT_EQ(v, 0.0);
}

TEST(CumulativeRegret, CanDriftBelowZero) {
  const auto inst = two_by_one();
  const auto trace = cumulative_regret({scripted(1, {0, 0})}, bench_on(inst, 1), inst, 2);
  EXPECT_NEAR(trace.per_run[0](0, 1), -0.4, 1e-12);
}

TEST(CumulativeRegret, UnmatchedRoundsCostTheBaseline) {
  const auto inst = two_by_one();
  const auto trace = cumulative_regret({scripted(1, {std::nullopt, 0})}, bench_on(inst, 0), inst, 2);
  EXPECT_NEAR(trace.per_run[0](0, 1), 0.9, 1e-12);
}

TEST(CumulativeRegret, MissingRoundIsReported) {
  const auto inst = two_by_one();
  auto log = scripted(1, {0, 0, 0});
  log.rounds.erase(log.rounds.begin() + 1);
  try {
    cumulative_regret({scripted(1, {0, 0, 0}), log}, bench_on(inst, 0), inst, 3);
    FAIL() << "expected MissingRound";
  } catch (const MissingRound& e) {
    EXPECT_EQ(e.run, 1u);
    EXPECT_EQ(e.round, 2u);
  }
}

TEST(CumulativeRegret, FrozenAfterFinalizingAndAfterStop) {
  const auto inst = two_by_one();
  auto log = scripted(1, {1, 1, 1, 1});
  log.finalized_at[0] = 2;
  auto trace = cumulative_regret({log}, bench_on(inst, 0), inst, 4);
  EXPECT_NEAR(trace.per_run[0](0, 3), 0.4, 1e-12);
  EXPECT_EQ(trace.frozen_from[0][0], std::optional<std::size_t>(2));

  auto stopped = scripted(1, {1, 1});
  stopped.stopped_at = 2;
  trace = cumulative_regret({stopped}, bench_on(inst, 0), inst, 5);
  EXPECT_EQ(trace.per_run[0](0, 4), trace.per_run[0](0, 1));
}

TEST(CumulativeRegret, MomentsArePopulationStatistics) {
  const auto inst = two_by_one();
  const auto trace = cumulative_regret({scripted(1, {0}), scripted(1, {1})}, bench_on(inst, 0), inst, 1);
  EXPECT_NEAR(trace.mean(0, 0), 0.1, 1e-12);
  EXPECT_NEAR(trace.stddev(0, 0), 0.1, 1e-12);
  EXPECT_NEAR(trace.sum_stddev[0], 0.1, 1e-12);
}

TEST(OptBenchmark, AgreesWithEnumeration) {
  std::size_t compared = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const std::size_t K = 1 + seed % 2, N = 2 + seed % 2;
    const auto inst = draw_instance(K, N, seed);
    const auto prefs = PreferenceProfile::from_instance(inst);
    const auto brute = oracle::best_matching(inst, prefs, 0.5, 0.5,
                                             [&](BorrowerIndex b, LenderIndex l) { return total_utility(inst, b, l); });
    if (!brute.best) {
      EXPECT_THROW(compute_opt_benchmark(inst, 0.5, 0.5), std::runtime_error);
      continue;
    }
    const auto bench = compute_opt_benchmark(inst, 0.5, 0.5);
    double objective = 0.0;
    for (BorrowerIndex b = 0; b < K; ++b)
      for (LenderIndex l = 0; l < N; ++l) {
        if (bench.matching.matched(b, l)) objective += 0.5 * total_utility(inst, b, l);
        if (!inequality_holds(bench.matching, b, l, inst, prefs)) objective -= 0.5;
      }
    EXPECT_NEAR(objective, brute.objective, 1e-9) << "seed " << seed;
    for (LenderIndex l = 0; l < N; ++l) {
      EXPECT_EQ(bench.fallback[l] != 0, !bench.b_opt[l].has_value());
      EXPECT_EQ(bench.baseline[l], inst.u_lender(l, bench.baseline_borrower[l]));
    }
    ++compared;
  }
  EXPECT_GT(compared, 20u);
}

TEST(MatchCounts, SumToMatchedLenders) {
  const auto result = run_experiment(small_config());
  for (const auto& a : result.algorithms) {
    const auto& m = a.matches;
    for (std::size_t t = 1; t <= m.horizon; ++t) {
      std::uint32_t total = 0;
      std::size_t matched = 0;
      for (LenderIndex l = 0; l < m.num_lenders; ++l) {
        std::uint32_t row = 0;
        for (BorrowerIndex b = 0; b < m.num_borrowers; ++b) row += m(t, l, b);
        EXPECT_LE(row, a.logs.size());
        total += row;
      }
      for (const auto& log : a.logs)
        if (t <= log.rounds.size())
          for (const auto& b : log.rounds[t - 1].lender_match) matched += b.has_value();
      EXPECT_EQ(total, matched);
    }
  }
}

TEST(Experiment, IncrementsAreBoundedByTheBaseline) {
  const auto result = run_experiment(small_config());
  double top = 0.0;
  for (double u : result.instance.lender_utility.data()) top = std::max(top, u);
  for (const auto& a : result.algorithms)
    for (const auto& r : a.regret.per_run)
      for (LenderIndex l = 0; l < r.rows(); ++l)
        for (std::size_t t = 1; t < r.cols(); ++t) EXPECT_LE(std::abs(r(l, t) - r(l, t - 1)), top + 1e-12);
}

TEST(Experiment, OptimalPlayHasZeroRegret) {
  auto c = small_config();
  c.algorithms = {Algorithm::kOptimal};
  const auto result = run_experiment(c);
  for (const auto& r : result.algorithms[0].regret.per_run)
    for (double v : r.data()) EXPECT_EQ(v, 0.0);
}

TEST(Experiment, NoiselessRunsAgree) {
  auto c = small_config();
  c.sigma = 0.0;
  const auto result = run_experiment(c);
  for (const auto& a : result.algorithms) {
    for (double v : a.regret.stddev.data()) EXPECT_EQ(v, 0.0);
    for (double v : a.regret.sum_stddev) EXPECT_EQ(v, 0.0);
  }
}

TEST(Experiment, IndependentOfThreadCount) {
  auto c = small_config();
  const auto one = run_experiment(c);
  c.threads = 3;
  const auto three = run_experiment(c);
  ASSERT_EQ(one.algorithms.size(), three.algorithms.size());
  for (std::size_t i = 0; i < one.algorithms.size(); ++i) {
    const auto& a = one.algorithms[i];
    const auto& b = three.algorithms[i];
    EXPECT_EQ(a.spec.name, b.spec.name);
    EXPECT_EQ(a.matches.counts, b.matches.counts);
    EXPECT_EQ(a.regret.mean.data(), b.regret.mean.data());
    for (std::size_t r = 0; r < a.logs.size(); ++r) {
      ASSERT_EQ(a.logs[r].rounds.size(), b.logs[r].rounds.size());
      for (std::size_t t = 0; t < a.logs[r].rounds.size(); ++t) {
        EXPECT_EQ(a.logs[r].rounds[t].lender_match, b.logs[r].rounds[t].lender_match);
        EXPECT_EQ(a.logs[r].rounds[t].reward, b.logs[r].rounds[t].reward);
      }
    }
  }
}

TEST(Experiment, FairGridExpandsWithComplementaryPenalty) {
  ExperimentConfig c;
  c.algorithms = {Algorithm::kGsUcb, Algorithm::kGsBlemetFair};
  const auto specs = expand_algorithms(c);
  ASSERT_EQ(specs.size(), 4u);
  EXPECT_EQ(specs[1].name, "gs_blemet_fair_l3_0.1");
  EXPECT_DOUBLE_EQ(specs[1].lambda2, 0.4);
  EXPECT_EQ(specs[3].name, "gs_blemet_fair_l3_0.4");
  c.fair_lambda3_grid.clear();
  c.lambda2 = 0.3;
  EXPECT_EQ(c.warnings().size(), 1u);
}

TEST(Experiment, InvalidConfigNamesTheKey) {
  auto c = small_config();
  c.runs = 0;
  try {
    run_experiment(c);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("experiment.runs"), std::string::npos);
  }
}
