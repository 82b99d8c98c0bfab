#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "p2pmatch/blemet.hpp"
#include "p2pmatch/generation.hpp"
#include "p2pmatch/harness.hpp"

using namespace p2pmatch;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

MarketInstance market(std::vector<double> c, std::vector<double> q, Matrix<double> ub) {
  MarketInstance inst;
  inst.num_borrowers = c.size();
  inst.num_lenders = q.size();
  inst.request = std::move(c);
  inst.budget = std::move(q);
  inst.rate.assign(inst.num_borrowers, 0.5);
  inst.borrower_utility = std::move(ub);
  inst.lender_utility = lender_utilities(inst.rate, inst.budget);
  return inst;
}

BlemetConfig quiet(std::size_t horizon) {
  BlemetConfig cfg;
  cfg.bandit.horizon = horizon;
  cfg.bandit.sigma = 0.0;
  return cfg;
}

}  // namespace

TEST(Lcb, SpotValues) {
  auto inst = market({10}, {10}, Matrix<double>(1, 1, 0.5));
  auto s = BlemetState::initial(inst);
  EXPECT_EQ(lcb(s, 0, 0, 100), -kInf);
  s.bandit.mu_hat(0, 0) = 0.4;
  s.bandit.t_count(0, 0) = 10;
  EXPECT_NEAR(lcb(s, 0, 0, 100), -0.43113, 1e-5);
  s.bandit.t_count(0, 0) = 1;
  EXPECT_EQ(lcb(s, 0, 0, 1), 0.4);
}

TEST(EarlyTerminateCheck, Examples) {
  // Lender 0 matched to borrower 0 together with lenders 1 and 2.
  auto inst = market({10, 10, 10}, {10, 10, 10, 10}, Matrix<double>(3, 4, 0.5));
  auto s = BlemetState::initial(inst);
  const std::vector<LenderIndex> matched{0, 1, 2};
  EXPECT_FALSE(early_terminate_check(s, 0, 0, matched));  // no samples yet

  s.set_bounds(0, 0, 0.9, 0.7);
  s.set_bounds(0, 1, 0.6, 0.1);
  s.set_bounds(0, 2, 0.55, 0.1);
  s.set_bounds(1, 0, 0.65, 0.2);
  s.set_bounds(2, 0, 0.5, 0.2);
  EXPECT_TRUE(early_terminate_check(s, 0, 0, matched));

  s.set_bounds(0, 2, 0.75, 0.1);
  EXPECT_FALSE(early_terminate_check(s, 0, 0, matched));  // another borrower looks better
  s.set_bounds(0, 2, 0.55, 0.1);

  s.set_bounds(2, 0, 0.7, 0.2);
  EXPECT_FALSE(early_terminate_check(s, 0, 0, matched));  // strict comparison
  s.set_bounds(2, 0, 0.5, 0.2);

  // A closed borrower no longer competes.
  s.set_bounds(0, 1, 0.95, 0.1);
  EXPECT_FALSE(early_terminate_check(s, 0, 0, matched));
  s.borrower_open[1] = 0;
  EXPECT_TRUE(early_terminate_check(s, 0, 0, matched));

  // Scope: lender 3 is not matched to borrower 0 but still has an infinite bound.
  EXPECT_TRUE(early_terminate_check(s, 0, 0, matched, UpsilonScope::kMatched));
  EXPECT_FALSE(early_terminate_check(s, 0, 0, matched, UpsilonScope::kAll));
  s.lender_open[3] = 0;
  EXPECT_TRUE(early_terminate_check(s, 0, 0, matched, UpsilonScope::kAll));
}

TEST(EarlyTerminateCheck, EmptyComparisonSetsPass) {
  auto inst = market({10}, {10, 10}, Matrix<double>(1, 2, 0.5));
  auto s = BlemetState::initial(inst);
  s.set_bounds(0, 0, 0.5, 0.1);
  EXPECT_TRUE(early_terminate_check(s, 0, 0, {0}));
}

TEST(GsBlemet, FirstRoundIsAPlainRound) {
  auto inst = generate_instance({.num_borrowers = 3, .num_lenders = 7}, 4);
  auto cfg = quiet(1);
  auto rng = derive_stream(4, 0, StreamPurpose::kRewards);
  auto run = gs_blemet_run(inst, cfg, rng);
  ASSERT_EQ(run.log.rounds.size(), 1u);
  for (const auto& e : run.log.events) EXPECT_NE(e.kind, EventKind::kFinalize);
  BanditConfig ucb;
  ucb.horizon = 1;
  auto rng2 = derive_stream(4, 0, StreamPurpose::kRewards);
  EXPECT_EQ(run.log.rounds[0].matching.z, gs_ucb_run(inst, ucb, rng2).rounds[0].matching.z);
}

// Both lenders fund the single borrower every round; with constant rewards the
// bounds follow in closed form, so the finalizing round can be computed by hand.
TEST(GsBlemet, PreferredLenderFinalizesWhenBoundsSeparate) {
  Matrix<double> ub(1, 2);
  ub(0, 0) = 0.9;
  ub(0, 1) = 0.1;
  auto inst = market({10}, {10, 10}, ub);
  auto cfg = quiet(200);
  auto rng = derive_stream(0, 0, StreamPurpose::kRewards);
  auto run = gs_blemet_run(inst, cfg, rng);

  // After round t each lender has t samples; bounds use the t - 1 earlier ones.
  std::size_t expected = 0;
  for (std::size_t t = 2; t < 200 && !expected; ++t) {
    const double tt = static_cast<double>(t);
    const double radius = std::sqrt(3.0 * std::log(tt) / (2.0 * (tt - 1.0)));
    const double mu0 = inst.u_lender(0, 0) + 0.9 * tt / (1.0 + tt);
    const double mu1 = inst.u_lender(1, 0) + 0.1 * tt / (1.0 + tt);
    if (mu0 - radius > mu1 + radius) expected = t + 1;
  }
  ASSERT_GT(expected, 0u);
  ASSERT_EQ(run.log.finalized_at[0], std::optional<std::size_t>(expected));
  EXPECT_FALSE(run.log.finalized_at[1]);
  for (std::size_t t = 1; t < expected; ++t) {
    EXPECT_EQ(run.log.rounds[t - 1].lender_match[0], std::optional<BorrowerIndex>(0));
    EXPECT_EQ(run.log.rounds[t - 1].lender_match[1], std::optional<BorrowerIndex>(0));
  }
  EXPECT_DOUBLE_EQ(run.state.residual[0], 0.0);
  EXPECT_EQ(run.state.final_match_l[0], std::optional<BorrowerIndex>(0));
  EXPECT_EQ(run.log.stopped_at, std::optional<std::size_t>(expected));
  EXPECT_FALSE(run.log.rounds.back().reward[0]);
  EXPECT_TRUE(run.log.rounds.back().reward[1]);
  ASSERT_GE(run.log.events.size(), 3u);
  const auto n = run.log.events.size();
  EXPECT_EQ(run.log.events[n - 3].kind, EventKind::kFinalize);
  EXPECT_EQ(run.log.events[n - 2].kind, EventKind::kBorrowerDone);
  EXPECT_EQ(run.log.events[n - 1].kind, EventKind::kBroadcast);
  EXPECT_EQ(run.log.events[n - 1].value, std::optional<std::size_t>(0));
}

TEST(GsBlemet, StructuralPropertiesOnRandomMarkets) {
  std::size_t finalized = 0;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    // Single-borrower markets are where lenders can finalize early.
    auto inst = generate_instance({.num_borrowers = seed % 2 ? 1u : 2u, .num_lenders = 5}, seed);
    auto cfg = quiet(150);
    cfg.bandit.sigma = seed % 2 ? 0.0 : 0.2;
    cfg.fair = seed % 3 == 0;
    auto rng = derive_stream(seed, 0, StreamPurpose::kRewards);
    auto run = gs_blemet_run(inst, cfg, rng);
    const auto bench = compute_opt_benchmark(inst, 0.5, 0.5);
    const auto regret = cumulative_regret({run.log}, bench, inst, cfg.bandit.horizon);
    const auto bad = check_blemet_run(run.log, regret.per_run[0], inst);
    EXPECT_TRUE(bad.empty()) << "seed " << seed << ": " << bad.front();

    const auto& s = run.state;
    for (LenderIndex l = 0; l < inst.num_lenders; ++l) {
      finalized += s.final_match_l[l].has_value();
      EXPECT_NE(s.lender_open[l] != 0, s.final_match_l[l].has_value());
      for (BorrowerIndex b = 0; b < inst.num_borrowers; ++b) {
        EXPECT_EQ(s.upsilon(b, l), s.bandit.cu(l, b));
        EXPECT_EQ(s.theta(l, b), s.bandit.cu(l, b));
      }
    }
    for (BorrowerIndex b = 0; b < inst.num_borrowers; ++b) {
      double expected = inst.request[b];
      for (LenderIndex l : s.final_match_b[b]) expected -= inst.budget[l];
      EXPECT_DOUBLE_EQ(s.residual[b], expected);
    }
    // Rows of finalized lenders stop changing.
    for (LenderIndex l = 0; l < inst.num_lenders; ++l) {
      if (!run.log.finalized_at[l]) continue;
      std::size_t after = 0;
      for (const auto& rec : run.log.rounds) after += rec.t >= *run.log.finalized_at[l] && rec.reward[l];
      EXPECT_EQ(after, 0u);
    }
  }
  EXPECT_GT(finalized, 0u);
}

TEST(GsBlemet, UnfairModelIsTheRestrictedPerRoundProgram) {
  auto inst = generate_instance({.num_borrowers = 3, .num_lenders = 7}, 8);
  auto state = BlemetState::initial(inst);
  state.set_bounds(2, 1, 0.8, 0.3);
  state.lender_open[4] = 0;
  state.borrower_open[0] = 0;
  state.residual[1] -= 5.0;
  const auto borrowers = state.open_borrowers();
  const auto lenders = state.open_lenders();
  const auto sub = restrict_instance(inst, borrowers, lenders, state.residual);
  BlemetConfig cfg;
  const auto model = blemet_round_model(sub, state, cfg, borrowers, lenders, 3);
  Matrix<double> cu(lenders.size(), borrowers.size());
  for (std::size_t j = 0; j < lenders.size(); ++j)
    for (std::size_t i = 0; i < borrowers.size(); ++i) cu(j, i) = state.bandit.cu(lenders[j], borrowers[i]);
  const auto expected = build_mq1(sub, cu, sub.borrower_utility, 0.5, 0.5);
  ASSERT_EQ(model.vars.size(), expected.vars.size());
  ASSERT_EQ(model.constraints.size(), expected.constraints.size());
  for (std::size_t j = 0; j < model.vars.size(); ++j) EXPECT_EQ(model.vars[j].objective, expected.vars[j].objective);
  for (std::size_t r = 0; r < model.constraints.size(); ++r) {
    EXPECT_EQ(model.constraints[r].index, expected.constraints[r].index);
    EXPECT_EQ(model.constraints[r].coef, expected.constraints[r].coef);
    EXPECT_EQ(model.constraints[r].rhs, expected.constraints[r].rhs);
  }
  EXPECT_EQ(sub.request[0], inst.request[1] - 5.0);
}

TEST(GsBlemet, InfeasibleFundingIsSoftenedOnce) {
  auto inst = market({10, 10}, {30, 5}, Matrix<double>(2, 2, 0.5));
  auto cfg = quiet(5);
  auto rng = derive_stream(0, 0, StreamPurpose::kRewards);
  auto run = gs_blemet_run(inst, cfg, rng);
  std::size_t softened = 0;
  for (const auto& e : run.log.events)
    if (e.kind == EventKind::kSoftened) {
      ++softened;
      EXPECT_EQ(e.t, 1u);
      EXPECT_EQ(e.value, std::optional<std::size_t>(static_cast<std::size_t>(FundingMode::kDropped)));
    }
  EXPECT_EQ(softened, 1u);
  EXPECT_EQ(run.log.rounds[0].funding, FundingMode::kDropped);
}

TEST(GsBlemet, FairVariantRuns) {
  auto inst = generate_instance({.num_borrowers = 3, .num_lenders = 7}, 6);
  auto cfg = quiet(20);
  cfg.fair = true;
  cfg.lambda3 = 0.4;
  cfg.bandit.lambda2 = 0.1;
  auto rng = derive_stream(6, 0, StreamPurpose::kRewards);
  auto run = gs_blemet_run(inst, cfg, rng);
  EXPECT_EQ(run.log.rounds.size(), run.log.stopped_at.value_or(20));
  for (const auto& rec : run.log.rounds) EXPECT_EQ(rec.status, SolveStatus::kOptimal);
}
