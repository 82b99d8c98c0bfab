#pragma once

// Lender-side bandit learning and the GS-UCB loop.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2pmatch/ip.hpp"
#include "p2pmatch/market.hpp"
#include "p2pmatch/models.hpp"
#include "p2pmatch/rng.hpp"

namespace p2pmatch {

/// Which match count enters the confidence radius at the end of round t:
/// kAlg1 uses the count including round t, kAlg2 the count before it.
enum class CountConvention : std::uint8_t { kAlg1, kAlg2 };

/// Gaussian rewards around u_b(l), clamped to [0, 1].
struct RewardModel {
  double sigma = 1.0;
  const MarketInstance* instance = nullptr;

  double mean(LenderIndex l, BorrowerIndex b) const { return instance->u_borrower(b, l); }
};

inline double sample_reward(const RewardModel& model, LenderIndex l, BorrowerIndex b, RandomStream& rng) {
  const double mu = model.mean(l, b);
  if (model.sigma == 0.0) return mu;
  const double draw = std::normal_distribution<double>(mu, model.sigma)(rng);
  return std::clamp(draw, 0.0, 1.0);
}

/// Radius sqrt(3 ln t / (2 n)).
inline double confidence_radius(double t, std::uint64_t n) {
  return std::sqrt(3.0 * std::log(t) / (2.0 * static_cast<double>(n)));
}

inline double upper_bound(double mu_hat, double t, std::uint64_t n) {
  return n == 0 ? std::numeric_limits<double>::infinity() : mu_hat + confidence_radius(t, n);
}

inline double lower_bound(double mu_hat, double t, std::uint64_t n) {
  return n == 0 ? -std::numeric_limits<double>::infinity() : mu_hat - confidence_radius(t, n);
}

/// Per-(lender, borrower) estimates, all N x K.
struct BanditState {
  Matrix<double> mu_hat;
  Matrix<double> reward_sum;
  Matrix<std::uint64_t> t_count;
  Matrix<std::uint64_t> bound_count;  // count the confidence bounds were last computed with
  Matrix<double> cu;
  Matrix<double> cl;
  std::size_t step = 0;

  static BanditState initial(const MarketInstance& instance) {
    const auto N = instance.num_lenders;
    const auto K = instance.num_borrowers;
    BanditState s;
    s.mu_hat = instance.lender_utility;
    s.reward_sum = Matrix<double>(N, K, 0.0);
    s.t_count = Matrix<std::uint64_t>(N, K, 0);
    s.bound_count = Matrix<std::uint64_t>(N, K, 0);
    s.cu = Matrix<double>(N, K, std::numeric_limits<double>::infinity());
    s.cl = Matrix<double>(N, K, -std::numeric_limits<double>::infinity());
    return s;
  }
};

/// mu_hat(l, b) = u_l(b) + reward_sum / (1 + t_count).
inline double update_mean(BanditState& state, const MarketInstance& instance, LenderIndex l, BorrowerIndex b,
                          double reward_sum_matched) {
  state.reward_sum(l, b) = reward_sum_matched;
  state.mu_hat(l, b) =
      instance.u_lender(l, b) + reward_sum_matched / (1.0 + static_cast<double>(state.t_count(l, b)));
  return state.mu_hat(l, b);
}

/// Counts the match and folds the reward into the mean.
inline void record_reward(BanditState& state, const MarketInstance& instance, LenderIndex l, BorrowerIndex b,
                          double reward) {
  ++state.t_count(l, b);
  update_mean(state, instance, l, b, state.reward_sum(l, b) + reward);
}

inline double ucb(const BanditState& state, LenderIndex l, BorrowerIndex b, std::size_t t) {
  return upper_bound(state.mu_hat(l, b), static_cast<double>(t), state.t_count(l, b));
}

inline double lcb(const BanditState& state, LenderIndex l, BorrowerIndex b, std::size_t t) {
  return lower_bound(state.mu_hat(l, b), static_cast<double>(t), state.t_count(l, b));
}

/// Recomputes cu and cl for lender l at round t. `counts_before_round` holds
/// the counts at the start of round t and is used under kAlg2.
inline void refresh_bounds(BanditState& state, LenderIndex l, std::size_t t, CountConvention convention,
                           const Matrix<std::uint64_t>& counts_before_round) {
  for (BorrowerIndex b = 0; b < state.mu_hat.cols(); ++b) {
    const auto n = convention == CountConvention::kAlg1 ? state.t_count(l, b) : counts_before_round(l, b);
    state.bound_count(l, b) = n;
    state.cu(l, b) = upper_bound(state.mu_hat(l, b), static_cast<double>(t), n);
    state.cl(l, b) = lower_bound(state.mu_hat(l, b), static_cast<double>(t), n);
  }
}

struct BanditConfig {
  std::size_t horizon = 2000;
  double lambda1 = 0.5;
  double lambda2 = 0.5;
  double sigma = 1.0;
  CountConvention count_convention = CountConvention::kAlg1;
  /// 0 keeps only the final state.
  std::size_t snapshot_every = 0;
  std::chrono::duration<double> time_limit{60.0};
};

struct StateSnapshot {
  std::size_t t = 0;
  BanditState state;
};

/// One round as seen by the harness. Indices are those of the full instance.
struct RoundRecord {
  std::size_t t = 0;
  Matching matching;
  std::vector<std::optional<BorrowerIndex>> lender_match;  // size N
  std::vector<std::optional<double>> reward;               // size N, empty when no reward was drawn
  double objective = 0.0;
  SolveStatus status = SolveStatus::kOptimal;
  std::size_t nodes = 0;
  FundingMode funding = FundingMode::kStrict;
};

enum class EventKind : std::uint8_t { kFinalize, kBorrowerDone, kBroadcast, kSoftened };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::kFinalize: return "FINALIZE";
    case EventKind::kBorrowerDone: return "BORROWER_DONE";
    case EventKind::kBroadcast: return "BROADCAST";
    case EventKind::kSoftened: return "SOFTENED";
  }
  return "?";
}

/// FINALIZE(l, b, t), BORROWER_DONE(b, t), BROADCAST(size, t) and
/// SOFTENED(mode, t); unused fields stay empty.
struct Event {
  EventKind kind = EventKind::kFinalize;
  std::size_t t = 0;
  std::optional<LenderIndex> lender;
  std::optional<BorrowerIndex> borrower;
  std::optional<std::size_t> value;
};

struct RunLog {
  std::vector<RoundRecord> rounds;
  std::vector<StateSnapshot> snapshots;
  std::vector<Event> events;
  /// Round at which each lender left the game (early termination), if any.
  std::vector<std::optional<std::size_t>> finalized_at;
  /// residual_c after each round, and the set of borrowers still unmatched.
  std::vector<std::vector<double>> residual_trace;
  std::vector<std::vector<BorrowerIndex>> active_borrowers_trace;
  /// Last round played when the game ended before the horizon.
  std::optional<std::size_t> stopped_at;
};

class SolverFailure : public std::runtime_error {
 public:
  SolverFailure(std::size_t t, const std::string& what)
      : std::runtime_error("round " + std::to_string(t) + ": " + what), round(t) {}
  std::size_t round;
};

namespace detail {

inline void maybe_snapshot(RunLog& log, const BanditState& state, std::size_t t, std::size_t horizon,
                           std::size_t every) {
  if (t == horizon || (every > 0 && t % every == 0)) log.snapshots.push_back({t, state});
}

}  // namespace detail

/// Sequential matching with UCB lender preferences. Each round solves the
/// per-round program with lender scores cu and borrower scores u_b, draws a
/// reward for every matched lender and refreshes all bounds.
inline RunLog gs_ucb_run(const MarketInstance& instance, const BanditConfig& config, RandomStream& rng) {
  if (config.horizon == 0) throw std::invalid_argument("gs_ucb: horizon must be at least 1");
  const auto N = instance.num_lenders;
  RunLog log;
  log.finalized_at.assign(N, std::nullopt);
  auto state = BanditState::initial(instance);
  const RewardModel rewards{config.sigma, &instance};
  std::optional<std::vector<std::uint8_t>> previous;
  FundingCache cache;

  for (std::size_t t = 1; t <= config.horizon; ++t) {
    state.step = t;
    const auto model = build_mq1(instance, state.cu, instance.borrower_utility, config.lambda1, config.lambda2);
    SolveOptions options;
    options.time_limit = config.time_limit;
    options.warm_start = previous;
    options.funding_cache = &cache;
    auto solved = solve_ip(model, options);
    if (!solved.has_solution()) throw SolverFailure(t, std::string("per-round program ") + to_string(solved.status));
    previous = std::vector<std::uint8_t>(solved.matching.z.data());

    RoundRecord rec;
    rec.t = t;
    rec.objective = solved.objective;
    rec.status = solved.status;
    rec.nodes = solved.nodes_explored;
    rec.lender_match = solved.matching.lender_match;
    rec.reward.assign(N, std::nullopt);
    const auto counts_before = state.t_count;
    for (LenderIndex l = 0; l < N; ++l) {
      const auto& b = rec.lender_match[l];
      if (!b) continue;
      const double r = sample_reward(rewards, l, *b, rng);
      rec.reward[l] = r;
      record_reward(state, instance, l, *b, r);
    }
    for (LenderIndex l = 0; l < N; ++l) refresh_bounds(state, l, t, config.count_convention, counts_before);
    rec.matching = std::move(solved.matching);
    log.rounds.push_back(std::move(rec));
    detail::maybe_snapshot(log, state, t, config.horizon, config.snapshot_every);
  }
  return log;
}

}  // namespace p2pmatch
