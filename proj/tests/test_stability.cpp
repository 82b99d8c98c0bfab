#include <gtest/gtest.h>

#include <random>

#include "p2pmatch/generation.hpp"
#include "p2pmatch/oracles.hpp"
#include "p2pmatch/stability.hpp"

using namespace p2pmatch;

namespace {

MarketInstance tiny(std::vector<double> c, std::vector<double> q, Matrix<double> ub, Matrix<double> ul) {
  MarketInstance inst;
  inst.num_borrowers = c.size();
  inst.num_lenders = q.size();
  inst.request = std::move(c);
  inst.budget = std::move(q);
  inst.rate.assign(inst.num_borrowers, 0.5);
  inst.borrower_utility = std::move(ub);
  inst.lender_utility = std::move(ul);
  return inst;
}

Matching from_rows(std::size_t K, std::size_t N, std::initializer_list<int> cells) {
  Matrix<std::uint8_t> z(K, N, 0);
  std::size_t i = 0;
  for (int v : cells) {
    z(i / N, i % N) = static_cast<std::uint8_t>(v);
    ++i;
  }
  return Matching::from_assignment(std::move(z));
}

MarketInstance random_instance(std::mt19937_64& rng, std::size_t K, std::size_t N) {
  std::uniform_real_distribution<double> c_d(10, 50), q_d(1, 30), u_d(0.01, 0.99);
  MarketInstance inst;
  inst.num_borrowers = K;
  inst.num_lenders = N;
  inst.borrower_utility = Matrix<double>(K, N);
  for (std::size_t b = 0; b < K; ++b) {
    inst.request.push_back(c_d(rng));
    inst.rate.push_back(u_d(rng));
    for (std::size_t l = 0; l < N; ++l) inst.borrower_utility(b, l) = u_d(rng);
  }
  for (std::size_t l = 0; l < N; ++l) inst.budget.push_back(q_d(rng));
  inst.lender_utility = lender_utilities(inst.rate, inst.budget);
  return inst;
}

}  // namespace

TEST(BlockingPair, SinglePairExamples) {
  auto inst = tiny({10}, {10}, Matrix<double>(1, 1, 0.5), Matrix<double>(1, 1, 0.5));
  auto prefs = PreferenceProfile::from_instance(inst);
  EXPECT_FALSE(is_blocking_pair(from_rows(1, 1, {1}), 0, 0, inst, prefs));
  EXPECT_TRUE(is_blocking_pair(from_rows(1, 1, {0}), 0, 0, inst, prefs));
  EXPECT_TRUE(inequality_holds(from_rows(1, 1, {1}), 0, 0, inst, prefs));
  EXPECT_FALSE(inequality_holds(from_rows(1, 1, {0}), 0, 0, inst, prefs));
}

TEST(BlockingPair, PreferredUnusedLenderBlocksFundedBorrower) {
  Matrix<double> ub(1, 2);
  ub(0, 0) = 0.9;
  ub(0, 1) = 0.1;
  auto inst = tiny({10}, {10, 10}, ub, Matrix<double>(2, 1, 0.5));
  auto prefs = PreferenceProfile::from_instance(inst);
  auto z = from_rows(1, 2, {0, 1});
  EXPECT_TRUE(is_blocking_pair(z, 0, 0, inst, prefs));
  EXPECT_FALSE(is_blocking_pair(z, 0, 1, inst, prefs));
}

TEST(Inequality, PreferredMatchedLenderSatisfiesRow) {
  Matrix<double> ub(1, 2);
  ub(0, 0) = 0.9;
  ub(0, 1) = 0.1;
  auto inst = tiny({10}, {10, 10}, ub, Matrix<double>(2, 1, 0.5));
  auto prefs = PreferenceProfile::from_instance(inst);
  auto z = from_rows(1, 2, {1, 0});
  EXPECT_EQ(stability_lhs(z, 0, 1, inst, prefs), 10.0);
  EXPECT_TRUE(inequality_holds(z, 0, 1, inst, prefs));
}

TEST(StabilityEquivalence, TrivialCases) {
  auto inst = tiny({10}, {10}, Matrix<double>(1, 1, 0.5), Matrix<double>(1, 1, 0.5));
  auto prefs = PreferenceProfile::from_instance(inst);
  auto stable = verify_theorem1(from_rows(1, 1, {1}), inst, prefs);
  EXPECT_TRUE(stable.is_stable);
  EXPECT_TRUE(stable.blocking_pairs.empty());
  EXPECT_TRUE(stable.inequality_violations.empty());

  auto empty = verify_theorem1(from_rows(1, 1, {0}), inst, prefs);
  EXPECT_FALSE(empty.is_stable);
  EXPECT_TRUE(empty.sets_agree());
  EXPECT_EQ(empty.blocking_pairs.size(), 1u);
}

TEST(StabilityEquivalence, EmptyMatchingSetsAgree) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng, 3, 4);
    auto prefs = PreferenceProfile::from_instance(inst);
    auto report = verify_theorem1(Matching::from_assignment(Matrix<std::uint8_t>(3, 4, 0)), inst, prefs);
    EXPECT_TRUE(report.sets_agree());
    EXPECT_EQ(report.blocking_pairs.size(), 12u);
  }
}

// A borrower holding a preferred lender whose budget does not cover the
// request is still under-funded, so an unmatched lender blocks with it while
// the inequality is met through the preferred-lender term.
TEST(StabilityEquivalence, UnderFundedBorrowerWithPreferredLenderDisagrees) {
  Matrix<double> ub(1, 2);
  ub(0, 0) = 0.9;
  ub(0, 1) = 0.1;
  auto inst = tiny({10}, {4, 4}, ub, Matrix<double>(2, 1, 0.5));
  auto prefs = PreferenceProfile::from_instance(inst);
  auto report = verify_theorem1(from_rows(1, 2, {1, 0}), inst, prefs);
  EXPECT_EQ(report.blocking_pairs, (std::vector<AgentPair>{{0, 1}}));
  EXPECT_TRUE(report.inequality_violations.empty());
  EXPECT_FALSE(report.sets_agree());
}

// A lender holding a borrower it prefers never blocks, but its budget term
// q_l can fall short of c_b.
TEST(StabilityEquivalence, SmallBudgetOfCommittedLenderDisagrees) {
  Matrix<double> ul(1, 2);
  ul(0, 0) = 0.9;
  ul(0, 1) = 0.1;
  auto inst = tiny({5, 10}, {6}, Matrix<double>(2, 1, 0.5), ul);
  auto prefs = PreferenceProfile::from_instance(inst);
  auto report = verify_theorem1(from_rows(2, 1, {1, 0}), inst, prefs);
  EXPECT_TRUE(report.blocking_pairs.empty());
  EXPECT_EQ(report.inequality_violations, (std::vector<AgentPair>{{1, 0}}));
}

// Every disagreement between the two sets falls in one of the two classes
// above; no other kind occurs.
TEST(StabilityEquivalence, DisagreementsAreExactlyTheTwoKnownClasses) {
  std::mt19937_64 rng(17);
  std::size_t disagreements = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t K = 1 + trial % 3, N = 2 + trial % 3;
    auto inst = random_instance(rng, K, N);
    auto prefs = PreferenceProfile::from_instance(inst);
    oracle::for_each_assignment(K, N, [&](const Matching& z) {
      for (BorrowerIndex b = 0; b < K; ++b)
        for (LenderIndex l = 0; l < N; ++l) {
          const bool blocking = is_blocking_pair(z, b, l, inst, prefs);
          const bool violated = !inequality_holds(z, b, l, inst, prefs);
          if (blocking == violated) continue;
          ++disagreements;
          bool has_better = false;
          for (auto other : z.borrower_match[b]) has_better |= prefs.borrower_prefers(b, other, l);
          if (blocking) {
            EXPECT_TRUE(has_better);
          } else {
            ASSERT_TRUE(z.lender_match[l].has_value());
            EXPECT_TRUE(prefs.lender_prefers(l, *z.lender_match[l], b));
            EXPECT_LT(inst.budget[l], inst.request[b]);
            EXPECT_FALSE(has_better);
          }
        }
    });
  }
  EXPECT_GT(disagreements, 0u);
}

// With every budget covering every request and each borrower holding at most
// one lender, the two characterisations coincide.
TEST(StabilityEquivalence, EquivalentForUnitDemandMarkets) {
  std::mt19937_64 rng(23);
  std::size_t checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng, 2, 3);
    for (auto& q : inst.budget) q = 60.0;
    inst.lender_utility = lender_utilities(inst.rate, inst.budget);
    auto prefs = PreferenceProfile::from_instance(inst);
    oracle::for_each_assignment(2, 3, [&](const Matching& z) {
      for (const auto& m : z.borrower_match)
        if (m.size() > 1) return;
      ++checked;
      EXPECT_TRUE(verify_theorem1(z, inst, prefs).sets_agree());
    });
  }
  EXPECT_EQ(checked, 20u * 13u);
}

TEST(Stability, MatchingAPairRemovesItsBlock) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto inst = random_instance(rng, 2, 3);
    auto prefs = PreferenceProfile::from_instance(inst);
    oracle::for_each_assignment(2, 3, [&](const Matching& z) {
      for (BorrowerIndex b = 0; b < 2; ++b)
        for (LenderIndex l = 0; l < 3; ++l) {
          if (z.matched(b, l) || z.lender_match[l]) continue;
          auto flipped = z.z;
          flipped(b, l) = 1;
          EXPECT_FALSE(is_blocking_pair(Matching::from_assignment(flipped), b, l, inst, prefs));
        }
    });
  }
}

TEST(Stability, InequalityMonotoneInAssignments) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    auto inst = random_instance(rng, 3, 3);
    auto prefs = PreferenceProfile::from_instance(inst);
    oracle::for_each_assignment(3, 3, [&](const Matching& z) {
      for (BorrowerIndex b = 0; b < 3; ++b)
        for (LenderIndex l = 0; l < 3; ++l) {
          const double base = stability_lhs(z, b, l, inst, prefs);
          for (BorrowerIndex b2 = 0; b2 < 3; ++b2)
            for (LenderIndex l2 = 0; l2 < 3; ++l2) {
              if (z.lender_match[l2]) continue;
              auto more = z.z;
              more(b2, l2) = 1;
              EXPECT_GE(stability_lhs(Matching::from_assignment(more), b, l, inst, prefs), base);
            }
        }
    });
  }
}

TEST(Matching, ViewsReconstructAssignment) {
  auto z = from_rows(2, 3, {1, 0, 1, 0, 1, 0});
  EXPECT_EQ(z.lender_match[0], std::optional<std::size_t>(0));
  EXPECT_EQ(z.lender_match[1], std::optional<std::size_t>(1));
  EXPECT_EQ(z.borrower_match[0], (std::vector<std::size_t>{0, 2}));
  Matrix<std::uint8_t> bad(2, 1, 1);
  EXPECT_THROW(Matching::from_assignment(bad), std::invalid_argument);
}
