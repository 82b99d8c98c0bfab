#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2pmatch/matrix.hpp"

namespace p2pmatch {

using BorrowerIndex = std::size_t;
using LenderIndex = std::size_t;

inline constexpr std::size_t kNotRanked = std::numeric_limits<std::size_t>::max();

/// The immutable problem: K borrowers with requests c and rates eta, N lenders
/// with budgets q, and the two utility matrices u_b(l) (K x N) and u_l(b) (N x K).
struct MarketInstance {
  std::size_t num_borrowers = 0;
  std::size_t num_lenders = 0;
  std::vector<double> request;      // c_b
  std::vector<double> budget;       // q_l
  std::vector<double> rate;         // eta_b
  Matrix<double> borrower_utility;  // (b, l) -> u_b(l)
  Matrix<double> lender_utility;    // (l, b) -> u_l(b)
  std::uint64_t seed = 0;

  double u_borrower(BorrowerIndex b, LenderIndex l) const { return borrower_utility(b, l); }
  double u_lender(LenderIndex l, BorrowerIndex b) const { return lender_utility(l, b); }

  /// Checks shapes and value ranges. `require_market_shape` adds K <= N and
  /// sum(q) >= sum(c), which hold for generated instances but not for the
  /// residual sub-markets built during early termination.
  void validate(bool require_market_shape = true) const {
    const auto K = num_borrowers;
    const auto N = num_lenders;
    if (request.size() != K || rate.size() != K || budget.size() != N ||
        borrower_utility.rows() != K || borrower_utility.cols() != N ||
        lender_utility.rows() != N || lender_utility.cols() != K) {
      throw std::invalid_argument("market instance: inconsistent dimensions");
    }
    if (require_market_shape) {
      if (K > N) throw std::invalid_argument("market instance: more borrowers than lenders");
      if (std::accumulate(budget.begin(), budget.end(), 0.0) <
          std::accumulate(request.begin(), request.end(), 0.0)) {
        throw std::invalid_argument("market instance: total budget below total request");
      }
      for (double c : request)
        if (!(c > 0.0)) throw std::invalid_argument("market instance: non-positive request");
    }
    for (double q : budget)
      if (!(q > 0.0)) throw std::invalid_argument("market instance: non-positive budget");
    for (double u : borrower_utility.data())
      if (!(u >= 0.0 && u <= 1.0)) throw std::invalid_argument("market instance: u_b outside [0,1]");
    for (double u : lender_utility.data())
      if (!(u >= 0.0 && u <= 1.0)) throw std::invalid_argument("market instance: u_l outside [0,1]");
  }

  friend bool operator==(const MarketInstance&, const MarketInstance&) = default;
};

/// u_bl = u_b(l) + u_l(b).
inline double total_utility(const MarketInstance& instance, BorrowerIndex b, LenderIndex l) {
  return instance.u_borrower(b, l) + instance.u_lender(l, b);
}

/// Lender utilities eta_b * q_l, divided by the largest entry so the result
/// lies in (0, 1]. Returned as an N x K matrix.
inline Matrix<double> lender_utilities(std::span<const double> rate, std::span<const double> budget) {
  Matrix<double> u(budget.size(), rate.size());
  double largest = 0.0;
  for (std::size_t l = 0; l < budget.size(); ++l) {
    for (std::size_t b = 0; b < rate.size(); ++b) {
      u(l, b) = rate[b] * budget[l];
      largest = std::max(largest, u(l, b));
    }
  }
  if (largest > 0.0) {
    for (std::size_t l = 0; l < budget.size(); ++l)
      for (std::size_t b = 0; b < rate.size(); ++b) u(l, b) /= largest;
  }
  return u;
}

/// Strict order of agents by descending score. Equal scores go to the lower
/// index; +infinity sorts first; agents flagged in `removed` are left out.
inline std::vector<std::size_t> rank_from_scores(std::span<const double> scores,
                                                 const std::vector<bool>& removed = {}) {
  std::vector<std::size_t> order;
  order.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i < removed.size() && removed[i]) continue;
    order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

/// Strict preference orders for both sides, derived from score matrices.
struct PreferenceProfile {
  std::vector<std::vector<BorrowerIndex>> lender_ranking;  // per lender, best borrower first
  std::vector<std::vector<LenderIndex>> borrower_ranking;  // per borrower, best lender first
  Matrix<double> lender_scores;                            // N x K
  Matrix<double> borrower_scores;                          // K x N
  Matrix<std::size_t> lender_position;                     // (l, b) -> rank of b for l
  Matrix<std::size_t> borrower_position;                   // (b, l) -> rank of l for b

  static PreferenceProfile from_scores(Matrix<double> lender_scores, Matrix<double> borrower_scores) {
    PreferenceProfile p;
    const auto N = lender_scores.rows();
    const auto K = lender_scores.cols();
    if (borrower_scores.rows() != K || borrower_scores.cols() != N) {
      throw std::invalid_argument("preference profile: score matrices disagree on dimensions");
    }
    p.lender_position = Matrix<std::size_t>(N, K, kNotRanked);
    p.borrower_position = Matrix<std::size_t>(K, N, kNotRanked);
    p.lender_ranking.resize(N);
    p.borrower_ranking.resize(K);
    for (std::size_t l = 0; l < N; ++l) {
      p.lender_ranking[l] = rank_from_scores(lender_scores.row(l));
      for (std::size_t r = 0; r < K; ++r) p.lender_position(l, p.lender_ranking[l][r]) = r;
    }
    for (std::size_t b = 0; b < K; ++b) {
      p.borrower_ranking[b] = rank_from_scores(borrower_scores.row(b));
      for (std::size_t r = 0; r < N; ++r) p.borrower_position(b, p.borrower_ranking[b][r]) = r;
    }
    p.lender_scores = std::move(lender_scores);
    p.borrower_scores = std::move(borrower_scores);
    return p;
  }

  /// Preferences induced by the instance's own utilities.
  static PreferenceProfile from_instance(const MarketInstance& instance) {
    return from_scores(instance.lender_utility, instance.borrower_utility);
  }

  std::size_t num_lenders() const { return lender_ranking.size(); }
  std::size_t num_borrowers() const { return borrower_ranking.size(); }

  /// b1 strictly preferred to b2 by lender l.
  bool lender_prefers(LenderIndex l, BorrowerIndex b1, BorrowerIndex b2) const {
    return lender_position(l, b1) < lender_position(l, b2);
  }
  /// l1 strictly preferred to l2 by borrower b.
  bool borrower_prefers(BorrowerIndex b, LenderIndex l1, LenderIndex l2) const {
    return borrower_position(b, l1) < borrower_position(b, l2);
  }
};

/// One round's assignment z (K x N), blocking indicators w and objective value,
/// plus the lender- and borrower-side views of z.
struct Matching {
  Matrix<std::uint8_t> z;
  Matrix<std::uint8_t> w;
  double objective_value = 0.0;
  std::vector<std::optional<BorrowerIndex>> lender_match;  // m_l
  std::vector<std::vector<LenderIndex>> borrower_match;    // m_b

  /// Builds the row/column views. Throws if a lender is assigned twice.
  static Matching from_assignment(Matrix<std::uint8_t> z, Matrix<std::uint8_t> w = {},
                                  double objective_value = 0.0) {
    Matching m;
    const auto K = z.rows();
    const auto N = z.cols();
    m.lender_match.assign(N, std::nullopt);
    m.borrower_match.assign(K, {});
    for (std::size_t b = 0; b < K; ++b) {
      for (std::size_t l = 0; l < N; ++l) {
        if (!z(b, l)) continue;
        if (m.lender_match[l]) {
          throw std::invalid_argument("matching: lender " + std::to_string(l) +
                                      " assigned to more than one borrower");
        }
        m.lender_match[l] = b;
        m.borrower_match[b].push_back(l);
      }
    }
    if (w.empty()) w = Matrix<std::uint8_t>(K, N, 0);
    m.z = std::move(z);
    m.w = std::move(w);
    m.objective_value = objective_value;
    return m;
  }

  std::size_t num_borrowers() const { return z.rows(); }
  std::size_t num_lenders() const { return z.cols(); }
  bool matched(BorrowerIndex b, LenderIndex l) const { return z(b, l) != 0; }

  double funded_amount(const MarketInstance& instance, BorrowerIndex b) const {
    double total = 0.0;
    for (LenderIndex l : borrower_match[b]) total += instance.budget[l];
    return total;
  }
};

/// Sub-market over surviving agents with residual requests. Index i of the
/// result corresponds to borrowers[i] / lenders[i] of the parent.
inline MarketInstance restrict_instance(const MarketInstance& parent,
                                        std::span<const BorrowerIndex> borrowers,
                                        std::span<const LenderIndex> lenders,
                                        std::span<const double> residual_request) {
  MarketInstance sub;
  sub.num_borrowers = borrowers.size();
  sub.num_lenders = lenders.size();
  sub.seed = parent.seed;
  sub.borrower_utility = Matrix<double>(borrowers.size(), lenders.size());
  sub.lender_utility = Matrix<double>(lenders.size(), borrowers.size());
  for (std::size_t i = 0; i < borrowers.size(); ++i) {
    sub.request.push_back(residual_request[borrowers[i]]);
    sub.rate.push_back(parent.rate[borrowers[i]]);
  }
  for (std::size_t j = 0; j < lenders.size(); ++j) sub.budget.push_back(parent.budget[lenders[j]]);
  for (std::size_t i = 0; i < borrowers.size(); ++i) {
    for (std::size_t j = 0; j < lenders.size(); ++j) {
      sub.borrower_utility(i, j) = parent.borrower_utility(borrowers[i], lenders[j]);
      sub.lender_utility(j, i) = parent.lender_utility(lenders[j], borrowers[i]);
    }
  }
  return sub;
}

}  // namespace p2pmatch
