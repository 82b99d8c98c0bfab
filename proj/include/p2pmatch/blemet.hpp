#pragma once

// Matching with early termination of lender-borrower pairs, and the variant
// with the fairness-penalised objective.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "p2pmatch/bandit.hpp"
#include "p2pmatch/ip.hpp"
#include "p2pmatch/market.hpp"
#include "p2pmatch/models.hpp"
#include "p2pmatch/rng.hpp"

namespace p2pmatch {

/// Which lenders the "contesting lenders" test compares against: those matched
/// to b this round, or every surviving lender.
enum class UpsilonScope : std::uint8_t { kMatched, kAll };

struct BlemetConfig {
  BanditConfig bandit = [] {
    BanditConfig c;
    c.count_convention = CountConvention::kAlg2;
    return c;
  }();
  UpsilonScope upsilon_scope = UpsilonScope::kMatched;
  bool fair = false;
  double lambda3 = 0.25;
  double omega = 1.0;
  KappaMode kappa_mode = KappaMode::kAllocationDependent;
};

struct BlemetState {
  std::vector<std::uint8_t> borrower_open;  // K, membership in the unmatched borrower set
  std::vector<std::uint8_t> lender_open;    // N
  std::vector<double> residual;             // K, c_b minus finalized budgets
  BanditState bandit;
  Matrix<double> upsilon;  // K x N, (b, l) -> cu(l, b)
  Matrix<double> theta;    // N x K, (l, b) -> cu(l, b)
  std::vector<std::vector<LenderIndex>> final_match_b;
  std::vector<std::optional<BorrowerIndex>> final_match_l;

  static BlemetState initial(const MarketInstance& instance) {
    const auto K = instance.num_borrowers;
    const auto N = instance.num_lenders;
    BlemetState s;
    s.borrower_open.assign(K, 1);
    s.lender_open.assign(N, 1);
    s.residual = instance.request;
    s.bandit = BanditState::initial(instance);
    s.upsilon = Matrix<double>(K, N, std::numeric_limits<double>::infinity());
    s.theta = Matrix<double>(N, K, std::numeric_limits<double>::infinity());
    s.final_match_b.assign(K, {});
    s.final_match_l.assign(N, std::nullopt);
    return s;
  }

  std::vector<BorrowerIndex> open_borrowers() const {
    std::vector<BorrowerIndex> out;
    for (BorrowerIndex b = 0; b < borrower_open.size(); ++b)
      if (borrower_open[b]) out.push_back(b);
    return out;
  }

  std::vector<LenderIndex> open_lenders() const {
    std::vector<LenderIndex> out;
    for (LenderIndex l = 0; l < lender_open.size(); ++l)
      if (lender_open[l]) out.push_back(l);
    return out;
  }

  /// Sets cu and cl of one pair and copies cu into both tables.
  void set_bounds(LenderIndex l, BorrowerIndex b, double cu, double cl) {
    bandit.cu(l, b) = cu;
    bandit.cl(l, b) = cl;
    upsilon(b, l) = cu;
    theta(l, b) = cu;
  }
};

inline double lcb(const BlemetState& state, LenderIndex l, BorrowerIndex b, std::size_t t) {
  return lcb(state.bandit, l, b, t);
}

/// Both dominance tests of lender l matched to b. `matched_to_b` is this
/// round's lender set of b (full indices). The maximum over an empty set is
/// -inf, so an empty comparison set passes.
inline bool early_terminate_check(const BlemetState& state, LenderIndex l, BorrowerIndex b,
                                  const std::vector<LenderIndex>& matched_to_b,
                                  UpsilonScope scope = UpsilonScope::kMatched) {
  const double cl = state.bandit.cl(l, b);
  if (cl == -std::numeric_limits<double>::infinity()) return false;
  for (BorrowerIndex other = 0; other < state.borrower_open.size(); ++other)
    if (other != b && state.borrower_open[other] && !(cl > state.theta(l, other))) return false;
  if (scope == UpsilonScope::kMatched) {
    for (LenderIndex other : matched_to_b)
      if (other != l && !(cl > state.upsilon(b, other))) return false;
  } else {
    for (LenderIndex other = 0; other < state.lender_open.size(); ++other)
      if (other != l && state.lender_open[other] && !(cl > state.upsilon(b, other))) return false;
  }
  return true;
}

struct BlemetRun {
  RunLog log;
  BlemetState state;
};

namespace detail {

template <typename T>
Matrix<T> submatrix(const Matrix<T>& m, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  Matrix<T> out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = m(rows[i], cols[j]);
  return out;
}

}  // namespace detail

/// The per-round model over the surviving agents, indexed like `sub`.
/// `sub` is restrict_instance over the surviving agents with residual requests.
inline IPModel blemet_round_model(const MarketInstance& sub, const BlemetState& state, const BlemetConfig& config,
                                  std::span<const BorrowerIndex> borrowers, std::span<const LenderIndex> lenders,
                                  std::size_t t) {
  const auto cu = detail::submatrix(state.bandit.cu, lenders, borrowers);
  const auto& ub = sub.borrower_utility;
  if (!config.fair) return build_mq1(sub, cu, ub, config.bandit.lambda1, config.bandit.lambda2);
  const auto values = detail::cap_infinite(cu);
  FairnessTerm f{config.lambda3, config.omega, static_cast<double>(t), static_cast<double>(config.bandit.horizon),
                 config.kappa_mode};
  return build_m2(sub, cu, ub, config.bandit.lambda1, config.bandit.lambda2, sub.request, f, &values);
}

/// Sequential matching with early termination. Each round solves the program
/// over the unmatched agents; a matched lender whose lower bound beats every
/// competing upper bound is finalized (no reward that round), the others draw
/// a reward and update that pair's bounds. Borrowers whose residual request
/// reaches zero leave, and the game ends when either side is empty. When the
/// surviving market cannot meet its residual requests, funding rows are
/// softened to the reachable budget, then dropped.
inline BlemetRun gs_blemet_run(const MarketInstance& instance, const BlemetConfig& config, RandomStream& rng) {
  const auto& bc = config.bandit;
  if (bc.horizon == 0) throw std::invalid_argument("gs_blemet: horizon must be at least 1");
  const auto K = instance.num_borrowers;
  const auto N = instance.num_lenders;
  BlemetRun run;
  auto& log = run.log;
  auto& state = run.state;
  state = BlemetState::initial(instance);
  log.finalized_at.assign(N, std::nullopt);
  const RewardModel rewards{bc.sigma, &instance};
  FundingCache cache;
  FundingMode mode = FundingMode::kStrict;  // valid while the surviving sets are unchanged
  std::optional<std::vector<std::uint8_t>> previous;

  for (std::size_t t = 1; t <= bc.horizon; ++t) {
    state.bandit.step = t;
    const auto borrowers = state.open_borrowers();
    const auto lenders = state.open_lenders();
    const auto sub = restrict_instance(instance, borrowers, lenders, state.residual);

    SolveOptions options;
    options.time_limit = bc.time_limit;
    options.funding_cache = &cache;
    options.warm_start = previous;
    SolveResult solved;
    FundingMode used = mode;
    for (;;) {
      auto model = blemet_round_model(sub, state, config, borrowers, lenders, t);
      relax_funding(model, sub, used);
      solved = solve_ip(model, options);
      if (solved.has_solution() || used == FundingMode::kDropped) break;
      used = used == FundingMode::kStrict ? FundingMode::kReachable : FundingMode::kDropped;
      options.warm_start.reset();
    }
    if (!solved.has_solution()) throw SolverFailure(t, std::string("per-round program ") + to_string(solved.status));
    if (used != mode)
      log.events.push_back({EventKind::kSoftened, t, std::nullopt, std::nullopt, static_cast<std::size_t>(used)});
    mode = used;
    previous = std::vector<std::uint8_t>(solved.matching.z.data());

    // Back to full indices.
    Matrix<std::uint8_t> z(K, N, 0), w(K, N, 0);
    for (std::size_t i = 0; i < borrowers.size(); ++i)
      for (std::size_t j = 0; j < lenders.size(); ++j) {
        z(borrowers[i], lenders[j]) = solved.matching.z(i, j);
        w(borrowers[i], lenders[j]) = solved.matching.w(i, j);
      }
    RoundRecord rec;
    rec.t = t;
    rec.objective = solved.objective;
    rec.status = solved.status;
    rec.nodes = solved.nodes_explored;
    rec.funding = used;
    rec.matching = Matching::from_assignment(std::move(z), std::move(w), solved.objective);
    rec.lender_match = rec.matching.lender_match;
    rec.reward.assign(N, std::nullopt);

    bool sets_changed = false;
    for (BorrowerIndex b : borrowers) {
      const auto& matched = rec.matching.borrower_match[b];
      for (LenderIndex l : matched) {
        if (early_terminate_check(state, l, b, matched, config.upsilon_scope)) {
          state.lender_open[l] = 0;
          state.final_match_l[l] = b;
          state.final_match_b[b].push_back(l);
          state.residual[b] -= instance.budget[l];
          log.finalized_at[l] = t;
          log.events.push_back({EventKind::kFinalize, t, l, b, std::nullopt});
          sets_changed = true;
          continue;
        }
        const double r = sample_reward(rewards, l, b, rng);
        rec.reward[l] = r;
        const auto before = state.bandit.t_count(l, b);
        record_reward(state.bandit, instance, l, b, r);
        const auto n = bc.count_convention == CountConvention::kAlg1 ? state.bandit.t_count(l, b) : before;
        state.bandit.bound_count(l, b) = n;
        const double mu = state.bandit.mu_hat(l, b);
        state.set_bounds(l, b, upper_bound(mu, static_cast<double>(t), n), lower_bound(mu, static_cast<double>(t), n));
      }
    }
    for (BorrowerIndex b : borrowers)
      if (state.residual[b] <= 0.0) {
        state.borrower_open[b] = 0;
        log.events.push_back({EventKind::kBorrowerDone, t, std::nullopt, b, std::nullopt});
        sets_changed = true;
      }
    const auto survivors = state.open_borrowers();
    log.events.push_back({EventKind::kBroadcast, t, std::nullopt, std::nullopt, survivors.size()});
    log.residual_trace.push_back(state.residual);
    log.active_borrowers_trace.push_back(survivors);
    log.rounds.push_back(std::move(rec));
    detail::maybe_snapshot(log, state.bandit, t, bc.horizon, bc.snapshot_every);
    if (sets_changed) {
      mode = FundingMode::kStrict;
      previous.reset();
    }
    if (survivors.empty() || state.open_lenders().empty()) {
      log.stopped_at = t;
      if (t != bc.horizon) log.snapshots.push_back({t, state.bandit});
      break;
    }
  }
  return run;
}

}  // namespace p2pmatch
