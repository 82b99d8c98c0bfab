#pragma once

// Exhaustive checks behind the `verify` command: blocking pairs against the
// stability inequality, and both solver routes against enumeration.

#include <cstddef>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "p2pmatch/rng.hpp"
#include "p2pmatch/models.hpp"
#include "p2pmatch/oracles.hpp"
#include "p2pmatch/stability.hpp"

namespace p2pmatch {

/// Same ranges as generated markets but without the fundability redraw, so
/// infeasible markets are checked too.
inline MarketInstance draw_instance(std::size_t K, std::size_t N, std::uint64_t seed) {
  RandomStream rng(seed);
  std::uniform_real_distribution<double> c_d(10.0, 50.0), q_d(1.0, 30.0), u_d(0.0, 1.0);
  auto open_unit = [&] {
    double v = 0.0;
    while (v == 0.0) v = u_d(rng);
    return v;
  };
  MarketInstance inst;
  inst.num_borrowers = K;
  inst.num_lenders = N;
  inst.seed = seed;
  for (std::size_t b = 0; b < K; ++b) inst.request.push_back(c_d(rng));
  for (std::size_t l = 0; l < N; ++l) inst.budget.push_back(q_d(rng));
  for (std::size_t b = 0; b < K; ++b) inst.rate.push_back(open_unit());
  inst.borrower_utility = Matrix<double>(K, N);
  for (std::size_t b = 0; b < K; ++b)
    for (std::size_t l = 0; l < N; ++l) inst.borrower_utility(b, l) = open_unit();
  inst.lender_utility = lender_utilities(inst.rate, inst.budget);
  return inst;
}

struct EquivalenceSummary {
  std::size_t instances = 0;
  std::size_t cases = 0;  // (instance, z) pairs
  std::size_t pairs = 0;  // (instance, z, b, l)
  std::size_t mismatched_cases = 0;
  std::size_t mismatched_pairs = 0;
  std::vector<std::string> counterexamples;
};

inline std::string describe_z(const Matching& m) {
  std::ostringstream out;
  out << '[';
  for (std::size_t b = 0; b < m.num_borrowers(); ++b) {
    if (b) out << ';';
    for (std::size_t l = 0; l < m.num_lenders(); ++l) out << int(m.z(b, l));
  }
  out << ']';
  return out.str();
}

/// Every column-feasible z of `instances` generated markets of shape K x N.
/// `corrupt` replaces the inequality by its strict form (a failure-path hook).
inline EquivalenceSummary verify_equivalence_suite(std::size_t instances, std::size_t K, std::size_t N,
                                             std::uint64_t seed, bool corrupt = false) {
  EquivalenceSummary s;
  for (std::size_t i = 0; i < instances; ++i) {
    const auto inst = draw_instance(K, N, seed + i);
    const auto prefs = PreferenceProfile::from_instance(inst);
    ++s.instances;
    oracle::for_each_assignment(K, N, [&](const Matching& m) {
      ++s.cases;
      bool case_bad = false;
      for (BorrowerIndex b = 0; b < K; ++b)
        for (LenderIndex l = 0; l < N; ++l) {
          ++s.pairs;
          const bool blocking = is_blocking_pair(m, b, l, inst, prefs);
          const double lhs = stability_lhs(m, b, l, inst, prefs);
          const bool violated = corrupt ? !(lhs > inst.request[b]) : !(lhs >= inst.request[b]);
          if (blocking == violated) continue;
          ++s.mismatched_pairs;
          case_bad = true;
          std::ostringstream out;
          out << "equivalence counterexample: seed " << inst.seed << " z=" << describe_z(m) << " pair (b" << b << ",l"
              << l << ") blocking=" << blocking << " violated=" << violated << " lhs=" << lhs
              << " c_b=" << inst.request[b] << " q_l=" << inst.budget[l];
          s.counterexamples.push_back(out.str());
        }
      s.mismatched_cases += case_bad;
    });
  }
  return s;
}

struct SolverSummary {
  std::size_t instances = 0;
  std::size_t solves = 0;
  std::size_t gaps = 0;
  std::vector<std::string> counterexamples;
};

/// Random markets with K <= k_max, N <= n_max; each is solved as the
/// per-round program with random scores by the ranked search and by LP
/// branching, and compared exactly with enumeration.
inline SolverSummary verify_solver_suite(std::size_t instances, std::size_t k_max, std::size_t n_max,
                                         std::uint64_t seed) {
  SolverSummary s;
  RandomStream rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SolveOptions ranked;
  ranked.enumeration_limit = 0;
  SolveOptions branching = ranked;
  branching.ranked_search = false;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t K = 1 + i % k_max;
    const std::size_t N = K + (i / k_max) % (n_max - K + 1);
    const auto inst = draw_instance(K, N, seed + i);
    Matrix<double> lender_scores(N, K), borrower_scores(K, N);
    for (auto* m : {&lender_scores, &borrower_scores})
      for (std::size_t r = 0; r < m->rows(); ++r)
        for (std::size_t c = 0; c < m->cols(); ++c) (*m)(r, c) = unit(rng);
    const double lambda2 = i % 4 == 3 ? 0.0 : 0.5;
    const auto model = build_mq1(inst, lender_scores, borrower_scores, 0.5, lambda2);
    const auto prefs = PreferenceProfile::from_scores(lender_scores, borrower_scores);
    const auto expected = oracle::best_matching(inst, prefs, 0.5, lambda2,
                                                [&](BorrowerIndex b, LenderIndex l) { return lender_scores(l, b); });
    ++s.instances;
    for (const auto* options : {&ranked, &branching}) {
      ++s.solves;
      const auto got = solve_ip(model, *options);
      const bool ok = expected.best ? got.status == SolveStatus::kOptimal && got.objective == expected.objective
                                    : got.status == SolveStatus::kInfeasible;
      if (ok) continue;
      ++s.gaps;
      std::ostringstream out;
      out << "solver counterexample: seed " << inst.seed << " K=" << K << " N=" << N << " route "
          << (options->ranked_search ? "ranked" : "lp") << " status " << to_string(got.status) << " objective "
          << got.objective << " expected " << expected.objective;
      s.counterexamples.push_back(out.str());
    }
  }
  return s;
}

}  // namespace p2pmatch
