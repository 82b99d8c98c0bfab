#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "p2pmatch/bandit.hpp"
#include "p2pmatch/generation.hpp"
#include "p2pmatch/stability.hpp"

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

// E[clamp(X, 0, 1)] for X ~ N(mu, sigma^2), written out independently of the sampler.
double clamped_gaussian_mean(double mu, double sigma) {
  auto Phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
  auto phi = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); };
  const double a = -mu / sigma, b = (1.0 - mu) / sigma;
  return mu * (Phi(b) - Phi(a)) + sigma * (phi(a) - phi(b)) + (1.0 - Phi(b));
}

}  // namespace

TEST(ConfidenceBounds, SpotValues) {
  EXPECT_NEAR(upper_bound(0.4, 100.0, 10), 1.23113, 1e-5);
  EXPECT_NEAR(lower_bound(0.4, 100.0, 10), -0.43113, 1e-5);
  EXPECT_EQ(upper_bound(0.4, 100.0, 0), kInf);
  EXPECT_EQ(lower_bound(0.4, 100.0, 0), -kInf);
  EXPECT_EQ(upper_bound(0.4, 1.0, 1), 0.4);
  EXPECT_EQ(lower_bound(0.4, 1.0, 1), 0.4);
}

TEST(ConfidenceBounds, BonusMonotoneInCountAndTime) {
  for (std::uint64_t n = 1; n < 50; ++n) {
    EXPECT_GE(confidence_radius(200.0, n), confidence_radius(200.0, n + 1));
    for (double t = 1.0; t < 300.0; t += 7.0) EXPECT_LE(confidence_radius(t, n), confidence_radius(t + 7.0, n));
  }
}

TEST(UpdateMean, Examples) {
  auto inst = market({10}, {10, 10}, Matrix<double>(1, 2, 0.5));
  auto state = BanditState::initial(inst);
  EXPECT_EQ(state.mu_hat(0, 0), inst.u_lender(0, 0));

  inst.lender_utility(0, 0) = 0.3;
  state.t_count(0, 0) = 1;
  EXPECT_DOUBLE_EQ(update_mean(state, inst, 0, 0, 0.6), 0.6);

  inst.lender_utility(1, 0) = 0.2;
  record_reward(state, inst, 1, 0, 0.4);
  record_reward(state, inst, 1, 0, 0.8);
  EXPECT_EQ(state.t_count(1, 0), 2u);
  EXPECT_DOUBLE_EQ(state.mu_hat(1, 0), 0.6);
}

TEST(SampleReward, DegenerateAndBounded) {
  auto inst = market({10}, {10, 10}, Matrix<double>(1, 2, 0.37));
  RandomStream rng(5);
  EXPECT_EQ(sample_reward({0.0, &inst}, 1, 0, rng), 0.37);
  for (int i = 0; i < 10000; ++i) {
    const double r = sample_reward({1.0, &inst}, 0, 0, rng);
    ASSERT_GE(r, 0.0);
    ASSERT_LE(r, 1.0);
  }
}

TEST(SampleReward, ClampedMeanMatchesClosedForm) {
  EXPECT_NEAR(clamped_gaussian_mean(0.5, 1.0), 0.5, 1e-12);
  EXPECT_NEAR(clamped_gaussian_mean(0.3, 1.0), 0.42388186530659966, 1e-12);
  EXPECT_NEAR(clamped_gaussian_mean(0.8, 0.5), 0.6964015655063549, 1e-12);
  for (double mu : {0.5, 0.3, 0.9}) {
    Matrix<double> ub(1, 1, mu);
    auto inst = market({10}, {10}, ub);
    RandomStream rng(static_cast<std::uint64_t>(mu * 1000));
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) sum += sample_reward({1.0, &inst}, 0, 0, rng);
    EXPECT_NEAR(sum / n, clamped_gaussian_mean(mu, 1.0), 0.01) << "mu " << mu;
  }
}

TEST(GsUcb, FirstRoundSeesOnlyInfiniteBounds) {
  auto inst = generate_instance({.num_borrowers = 3, .num_lenders = 6}, 2);
  BanditConfig cfg;
  cfg.horizon = 1;
  auto rng = derive_stream(2, 0, StreamPurpose::kRewards);
  auto log = gs_ucb_run(inst, cfg, rng);
  ASSERT_EQ(log.rounds.size(), 1u);
  // The round-1 matching is the optimum of the program with all cu infinite.
  auto state = BanditState::initial(inst);
  auto expected = solve_ip(build_mq1(inst, state.cu, inst.borrower_utility, 0.5, 0.5));
  EXPECT_EQ(log.rounds[0].matching.z, expected.matching.z);
}

TEST(GsUcb, DeterministicWithoutNoise) {
  auto inst = generate_instance({.num_borrowers = 3, .num_lenders = 7}, 11);
  BanditConfig cfg;
  cfg.horizon = 30;
  cfg.sigma = 0.0;
  auto r1 = derive_stream(1, 0, StreamPurpose::kRewards);
  auto r2 = derive_stream(99, 3, StreamPurpose::kRewards);
  auto a = gs_ucb_run(inst, cfg, r1);
  auto b = gs_ucb_run(inst, cfg, r2);
  ASSERT_EQ(a.rounds.size(), b.rounds.size());
  for (std::size_t i = 0; i < a.rounds.size(); ++i) {
    EXPECT_EQ(a.rounds[i].matching.z, b.rounds[i].matching.z);
    EXPECT_EQ(a.rounds[i].reward, b.rounds[i].reward);
  }
  EXPECT_EQ(a.snapshots.back().state.mu_hat, b.snapshots.back().state.mu_hat);
}

TEST(GsUcb, ConstantRewardsFollowTheMeanUpdate) {
  Matrix<double> ub(1, 2);
  ub(0, 0) = 0.9;
  ub(0, 1) = 0.1;
  auto inst = market({10}, {10, 10}, ub);
  BanditConfig cfg;
  cfg.horizon = 50;
  cfg.sigma = 0.0;
  auto rng = derive_stream(0, 0, StreamPurpose::kRewards);
  auto log = gs_ucb_run(inst, cfg, rng);
  const auto& s = log.snapshots.back().state;
  for (LenderIndex l = 0; l < 2; ++l) {
    const auto n = static_cast<double>(s.t_count(l, 0));
    if (n == 0) continue;
    EXPECT_NEAR(s.mu_hat(l, 0), inst.u_lender(l, 0) + inst.u_borrower(0, l) * n / (1.0 + n), 1e-12);
  }
  EXPECT_GT(s.t_count(0, 0) + s.t_count(1, 0), 0u);
}

TEST(GsUcb, StateInvariantsAndRoundConstraints) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto inst = generate_instance({.num_borrowers = 3, .num_lenders = 7}, seed);
    BanditConfig cfg;
    cfg.horizon = 40;
    cfg.snapshot_every = 1;
    auto rng = derive_stream(seed, 0, StreamPurpose::kRewards);
    auto log = gs_ucb_run(inst, cfg, rng);
    ASSERT_EQ(log.snapshots.size(), 40u);
    Matrix<std::uint64_t> matched(inst.num_lenders, inst.num_borrowers, 0);
    const BanditState* before = nullptr;
    for (std::size_t i = 0; i < log.rounds.size(); ++i) {
      const auto& rec = log.rounds[i];
      const auto& m = rec.matching;
      for (LenderIndex l = 0; l < inst.num_lenders; ++l) {
        int count = 0;
        for (BorrowerIndex b = 0; b < inst.num_borrowers; ++b) count += m.z(b, l);
        EXPECT_LE(count, 1);
        EXPECT_EQ(rec.reward[l].has_value(), rec.lender_match[l].has_value());
        if (rec.lender_match[l]) ++matched(l, *rec.lender_match[l]);
      }
      for (BorrowerIndex b = 0; b < inst.num_borrowers; ++b) EXPECT_GE(m.funded_amount(inst, b), inst.request[b]);
      const auto& s = log.snapshots[i].state;
      EXPECT_EQ(s.t_count, matched);
      for (LenderIndex l = 0; l < inst.num_lenders; ++l) {
        std::uint64_t step = 0;
        for (BorrowerIndex b = 0; b < inst.num_borrowers; ++b) {
          EXPECT_EQ(s.cu(l, b) == kInf, s.t_count(l, b) == 0);
          if (s.t_count(l, b) > 0) {
            EXPECT_LE(s.cl(l, b), s.mu_hat(l, b));
            EXPECT_LE(s.mu_hat(l, b), s.cu(l, b));
          }
          if (before) {
            EXPECT_GE(s.t_count(l, b), before->t_count(l, b));
            step += s.t_count(l, b) - before->t_count(l, b);
          }
        }
        EXPECT_LE(step, 1u);
      }
      before = &s;
    }
  }
}

// With fixed rewards the mean after n matches is u_l + r n / (1 + n): strictly
// increasing in r, and 1-Lipschitz in r.
TEST(GsUcb, MonotoneAndSmoothInTheRewardMean) {
  auto run_with = [](double mean) {
    Matrix<double> ub(1, 1, mean);
    auto inst = market({10}, {10}, ub);
    BanditConfig cfg;
    cfg.horizon = 25;
    cfg.sigma = 0.0;
    auto rng = derive_stream(0, 0, StreamPurpose::kRewards);
    return gs_ucb_run(inst, cfg, rng).snapshots.back().state;
  };
  double last = -kInf;
  for (double u = 0.05; u < 1.0; u += 0.1) {
    const auto a = run_with(u);
    const auto b = run_with(u + 0.03);
    ASSERT_EQ(a.t_count, b.t_count);
    EXPECT_GT(a.mu_hat(0, 0), last);
    EXPECT_LE(std::abs(b.mu_hat(0, 0) - a.mu_hat(0, 0)), 0.03 + 1e-12);
    last = a.mu_hat(0, 0);
  }
}

TEST(GsUcb, ZeroHorizonRejected) {
  auto inst = generate_instance({.num_borrowers = 2, .num_lenders = 4}, 1);
  BanditConfig cfg;
  cfg.horizon = 0;
  auto rng = derive_stream(0, 0, StreamPurpose::kRewards);
  EXPECT_THROW(gs_ucb_run(inst, cfg, rng), std::invalid_argument);
}
