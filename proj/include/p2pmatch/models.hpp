#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "p2pmatch/ip.hpp"
#include "p2pmatch/market.hpp"

namespace p2pmatch {

enum class KappaMode : std::uint8_t { kStatic, kAllocationDependent };

/// Worst clamped residual scaled by exp(omega * t / T).
inline double kappa(std::span<const double> residual, double t, double horizon, double omega) {
  double worst = 0.0;
  for (double r : residual) worst = std::max(worst, r);
  const double growth = horizon > 0.0 ? std::exp(omega * t / horizon) : 1.0;
  return worst * growth;
}

namespace detail {

inline std::string pair_name(const char* prefix, BorrowerIndex b, LenderIndex l) {
  return std::string(prefix) + "_b" + std::to_string(b) + "_l" + std::to_string(l);
}

/// Infinite scores are replaced by (largest finite score + 1), or 1 when no
/// score is finite.
inline Matrix<double> cap_infinite(const Matrix<double>& scores) {
  double largest = -std::numeric_limits<double>::infinity();
  for (double s : scores.data())
    if (std::isfinite(s)) largest = std::max(largest, s);
  const double sentinel = std::isfinite(largest) ? largest + 1.0 : 1.0;
  Matrix<double> capped = scores;
  for (std::size_t r = 0; r < capped.rows(); ++r)
    for (std::size_t c = 0; c < capped.cols(); ++c)
      if (!std::isfinite(capped(r, c))) capped(r, c) = sentinel;
  return capped;
}

/// Variables and the constraint set shared by every matching program:
/// lender capacity, borrower funding and the relaxed stability rows.
/// `z_value(b, l)` gives the objective weight of assignment (b, l).
template <typename ZValue>
IPModel build_matching_core(const MarketInstance& instance, const PreferenceProfile& prefs, double lambda1,
                            double lambda2, ZValue&& z_value) {
  IPModel model;
  const auto K = instance.num_borrowers;
  const auto N = instance.num_lenders;
  model.num_borrowers = K;
  model.num_lenders = N;
  model.vars.reserve(2 * K * N + 1);
  for (BorrowerIndex b = 0; b < K; ++b)
    for (LenderIndex l = 0; l < N; ++l)
      model.add_variable({pair_name("z", b, l), VarKind::kAssignment, true, 0.0, 1.0, lambda1 * z_value(b, l), b, l});
  for (BorrowerIndex b = 0; b < K; ++b)
    for (LenderIndex l = 0; l < N; ++l)
      model.add_variable({pair_name("w", b, l), VarKind::kBlocking, true, 0.0, 1.0, -lambda2, b, l});

  for (LenderIndex l = 0; l < N; ++l) {
    Constraint c{"cap_l" + std::to_string(l), ConstraintRole::kLenderCapacity, {}, {}, lp::Sense::kLessEqual, 1.0};
    for (BorrowerIndex b = 0; b < K; ++b) {
      c.index.push_back(model.z_index(b, l));
      c.coef.push_back(1.0);
    }
    model.constraints.push_back(std::move(c));
  }
  for (BorrowerIndex b = 0; b < K; ++b) {
    Constraint c{"fund_b" + std::to_string(b), ConstraintRole::kFunding, {}, {}, lp::Sense::kGreaterEqual,
                 instance.request[b]};
    for (LenderIndex l = 0; l < N; ++l) {
      c.index.push_back(model.z_index(b, l));
      c.coef.push_back(instance.budget[l]);
    }
    model.constraints.push_back(std::move(c));
  }
  // c_b z_bl + c_b sum_{l' >_b l} z_bl' + q_l sum_{b' >_l b} z_b'l >= c_b (1 - w_bl)
  for (BorrowerIndex b = 0; b < K; ++b) {
    const double c_b = instance.request[b];
    for (LenderIndex l = 0; l < N; ++l) {
      Constraint c{pair_name("block", b, l), ConstraintRole::kBlocking, {}, {}, lp::Sense::kGreaterEqual, c_b};
      c.index.push_back(model.z_index(b, l));
      c.coef.push_back(c_b);
      for (LenderIndex better : prefs.borrower_ranking[b]) {
        if (better == l) break;
        c.index.push_back(model.z_index(b, better));
        c.coef.push_back(c_b);
      }
      for (BorrowerIndex better : prefs.lender_ranking[l]) {
        if (better == b) break;
        c.index.push_back(model.z_index(better, l));
        c.coef.push_back(instance.budget[l]);
      }
      c.index.push_back(model.w_index(b, l));
      c.coef.push_back(c_b);
      model.constraints.push_back(std::move(c));
    }
  }
  return model;
}

}  // namespace detail

/// Per-round matching program: maximise lambda1 * sum v_l(b) z_bl - lambda2 * sum w_bl.
/// Preferences inside the stability rows come from the score matrices (lender
/// scores N x K, borrower scores K x N); the objective uses `lender_values`
/// (N x K) when given, else the lender scores with infinities capped.
inline IPModel build_mq1(const MarketInstance& instance, const Matrix<double>& lender_scores,
                         const Matrix<double>& borrower_scores, double lambda1, double lambda2,
                         const Matrix<double>* lender_values = nullptr) {
  const auto prefs = PreferenceProfile::from_scores(lender_scores, borrower_scores);
  const Matrix<double> values = lender_values ? *lender_values : detail::cap_infinite(lender_scores);
  return detail::build_matching_core(instance, prefs, lambda1, lambda2,
                                     [&](BorrowerIndex b, LenderIndex l) { return values(l, b); });
}

struct FairnessTerm {
  double lambda3 = 0.0;
  double omega = 1.0;
  double t = 0.0;
  double horizon = 1.0;
  KappaMode mode = KappaMode::kAllocationDependent;
};

/// Fairness-penalised program: objective lambda1 * sum (u_b(l) + v_l(b)) z_bl
/// - lambda2 * sum w_bl - lambda3 * kappa, where v_l(b) is `lender_values` or
/// the instance's u_l(b). With allocation-dependent kappa a continuous variable
/// k >= (residual_b - sum_l q_l z_bl) * exp(omega t / T), k >= 0 is added.
inline IPModel build_m2(const MarketInstance& instance, const Matrix<double>& lender_scores,
                        const Matrix<double>& borrower_scores, double lambda1, double lambda2,
                        std::span<const double> residual, const FairnessTerm& fairness,
                        const Matrix<double>* lender_values = nullptr) {
  const auto prefs = PreferenceProfile::from_scores(lender_scores, borrower_scores);
  auto model = detail::build_matching_core(instance, prefs, lambda1, lambda2, [&](BorrowerIndex b, LenderIndex l) {
    const double v = lender_values ? (*lender_values)(l, b) : instance.u_lender(l, b);
    return instance.u_borrower(b, l) + v;
  });
  const double growth = std::exp(fairness.omega * fairness.t / fairness.horizon);
  if (fairness.mode == KappaMode::kStatic) {
    model.objective_offset = -fairness.lambda3 * kappa(residual, fairness.t, fairness.horizon, fairness.omega);
    return model;
  }
  const auto k = model.add_variable(
      {"kappa", VarKind::kAuxiliary, false, 0.0, lp::kInfinity, -fairness.lambda3, 0, 0});
  for (BorrowerIndex b = 0; b < instance.num_borrowers; ++b) {
    Constraint c{"kappa_b" + std::to_string(b), ConstraintRole::kFairness, {k}, {1.0}, lp::Sense::kGreaterEqual,
                 residual[b] * growth};
    for (LenderIndex l = 0; l < instance.num_lenders; ++l) {
      c.index.push_back(model.z_index(b, l));
      c.coef.push_back(instance.budget[l] * growth);
    }
    model.constraints.push_back(std::move(c));
  }
  return model;
}

/// Hindsight benchmark: total utility u_bl in the objective, preferences from
/// the instance's own utilities, same constraint set as the per-round program.
inline IPModel build_opt(const MarketInstance& instance, double lambda1, double lambda2) {
  const auto prefs = PreferenceProfile::from_instance(instance);
  return detail::build_matching_core(instance, prefs, lambda1, lambda2,
                                     [&](BorrowerIndex b, LenderIndex l) { return total_utility(instance, b, l); });
}

/// Replace funding right-hand sides by min(c_b, total budget on offer), or drop
/// them entirely.
inline void relax_funding(IPModel& model, const MarketInstance& instance, FundingMode mode) {
  const double offered = std::accumulate(instance.budget.begin(), instance.budget.end(), 0.0);
  for (auto& c : model.constraints) {
    if (c.role != ConstraintRole::kFunding) continue;
    if (mode == FundingMode::kReachable) c.rhs = std::min(c.rhs, offered);
    else if (mode == FundingMode::kDropped) c.rhs = 0.0;
  }
  model.funding_mode = mode;
}

/// True when some assignment meets lender capacity and every funding row
/// (stability rows never bind with w free).
inline bool feasibility_check(const MarketInstance& instance, const SolveOptions& options = {}) {
  IPModel model;
  const auto K = instance.num_borrowers;
  const auto N = instance.num_lenders;
  model.num_borrowers = K;
  model.num_lenders = N;
  for (BorrowerIndex b = 0; b < K; ++b)
    for (LenderIndex l = 0; l < N; ++l)
      model.add_variable({detail::pair_name("z", b, l), VarKind::kAssignment, true, 0.0, 1.0, 0.0, b, l});
  for (BorrowerIndex b = 0; b < K; ++b)
    for (LenderIndex l = 0; l < N; ++l)
      model.add_variable({detail::pair_name("w", b, l), VarKind::kBlocking, true, 0.0, 1.0, 0.0, b, l});
  for (LenderIndex l = 0; l < N; ++l) {
    Constraint c{"cap_l" + std::to_string(l), ConstraintRole::kLenderCapacity, {}, {}, lp::Sense::kLessEqual, 1.0};
    for (BorrowerIndex b = 0; b < K; ++b) {
      c.index.push_back(model.z_index(b, l));
      c.coef.push_back(1.0);
    }
    model.constraints.push_back(std::move(c));
  }
  for (BorrowerIndex b = 0; b < K; ++b) {
    Constraint c{"fund_b" + std::to_string(b), ConstraintRole::kFunding, {}, {}, lp::Sense::kGreaterEqual,
                 instance.request[b]};
    for (LenderIndex l = 0; l < N; ++l) {
      c.index.push_back(model.z_index(b, l));
      c.coef.push_back(instance.budget[l]);
    }
    model.constraints.push_back(std::move(c));
  }
  return solve_ip(model, options).status == SolveStatus::kOptimal;
}

}  // namespace p2pmatch
