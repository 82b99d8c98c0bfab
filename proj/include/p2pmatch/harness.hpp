#pragma once

// Multi-run experiments: hindsight benchmark, per-lender cumulative regret,
// cross-run aggregation and match counts.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "p2pmatch/bandit.hpp"
#include "p2pmatch/blemet.hpp"
#include "p2pmatch/generation.hpp"
#include "p2pmatch/models.hpp"

namespace p2pmatch {

struct OptBenchmark {
  Matching matching;
  std::vector<std::optional<BorrowerIndex>> b_opt;  // N
  /// Borrower whose u_l enters the baseline: b_opt, or the lender's favourite
  /// borrower when the benchmark leaves it unmatched (flagged in `fallback`).
  std::vector<BorrowerIndex> baseline_borrower;
  std::vector<double> baseline;  // u_l(baseline_borrower)
  std::vector<std::uint8_t> fallback;
};

inline OptBenchmark compute_opt_benchmark(const MarketInstance& instance, double lambda1, double lambda2,
                                          const SolveOptions& options = {}) {
  const auto solved = solve_ip(build_opt(instance, lambda1, lambda2), options);
  if (!solved.has_solution())
    throw std::runtime_error(std::string("benchmark program ") + to_string(solved.status));
  OptBenchmark out;
  out.matching = solved.matching;
  out.b_opt = solved.matching.lender_match;
  const auto N = instance.num_lenders;
  out.baseline_borrower.assign(N, 0);
  out.baseline.assign(N, 0.0);
  out.fallback.assign(N, 0);
  for (LenderIndex l = 0; l < N; ++l) {
    BorrowerIndex b = 0;
    if (out.b_opt[l]) {
      b = *out.b_opt[l];
    } else {
      out.fallback[l] = 1;
      for (BorrowerIndex c = 1; c < instance.num_borrowers; ++c)
        if (instance.u_lender(l, c) > instance.u_lender(l, b)) b = c;
    }
    out.baseline_borrower[l] = b;
    out.baseline[l] = instance.u_lender(l, b);
  }
  return out;
}

class MissingRound : public std::runtime_error {
 public:
  MissingRound(std::size_t run, std::size_t t)
      : std::runtime_error("MissingRound: run " + std::to_string(run) + " has no round " + std::to_string(t)),
        run(run),
        round(t) {}
  std::size_t run;
  std::size_t round;
};

/// Per-run traces are N x T with column t-1 holding round t.
struct RegretTrace {
  std::vector<Matrix<double>> per_run;
  Matrix<double> mean;
  Matrix<double> stddev;  // population standard deviation across runs
  std::vector<std::vector<std::optional<std::size_t>>> frozen_from;  // run -> lender -> last live round
  std::vector<std::vector<double>> sum_per_run;                      // run -> sum over lenders, per round
  std::vector<double> sum_mean, sum_stddev;
};

/// Fills the cross-run statistics and per-run sums from `per_run`.
inline void aggregate(RegretTrace& trace) {
  const auto R = trace.per_run.size();
  if (R == 0) return;
  const auto N = trace.per_run.front().rows();
  const auto T = trace.per_run.front().cols();
  auto moments = [&](auto&& value, double& mean, double& sd) {
    double s = 0.0;
    for (std::size_t r = 0; r < R; ++r) s += value(r);
    mean = s / static_cast<double>(R);
    double v = 0.0;
    for (std::size_t r = 0; r < R; ++r) v += (value(r) - mean) * (value(r) - mean);
    sd = std::sqrt(v / static_cast<double>(R));
  };
  trace.mean = Matrix<double>(N, T, 0.0);
  trace.stddev = Matrix<double>(N, T, 0.0);
  for (std::size_t l = 0; l < N; ++l)
    for (std::size_t t = 0; t < T; ++t)
      moments([&](std::size_t r) { return trace.per_run[r](l, t); }, trace.mean(l, t), trace.stddev(l, t));
  trace.sum_per_run.assign(R, std::vector<double>(T, 0.0));
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t l = 0; l < N; ++l)
      for (std::size_t t = 0; t < T; ++t) trace.sum_per_run[r][t] += trace.per_run[r](l, t);
  trace.sum_mean.assign(T, 0.0);
  trace.sum_stddev.assign(T, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    moments([&](std::size_t r) { return trace.sum_per_run[r][t]; }, trace.sum_mean[t], trace.sum_stddev[t]);
}

/// regret_l(t) = t u_l(b_opt) - sum_{i <= t} u_l(b_alg(l, i)) with the
/// instance's static utilities; unmatched rounds add nothing. A lender that
/// left the game keeps its last value.
inline RegretTrace cumulative_regret(const std::vector<RunLog>& logs, const OptBenchmark& bench,
                                     const MarketInstance& instance, std::size_t horizon) {
  const auto N = instance.num_lenders;
  const auto R = logs.size();
  RegretTrace trace;
  for (std::size_t run = 0; run < R; ++run) {
    const auto& log = logs[run];
    const std::size_t played = log.stopped_at ? *log.stopped_at : horizon;
    if (played > horizon) throw std::invalid_argument("cumulative_regret: log longer than horizon");
    for (std::size_t t = 1; t <= played; ++t)
      if (log.rounds.size() < t || log.rounds[t - 1].t != t) throw MissingRound(run, t);
    Matrix<double> regret(N, horizon, 0.0);
    std::vector<std::optional<std::size_t>> frozen(N);
    for (LenderIndex l = 0; l < N; ++l) {
      std::size_t live = played;
      if (l < log.finalized_at.size() && log.finalized_at[l]) live = std::min(live, *log.finalized_at[l]);
      if (live < horizon) frozen[l] = live;
      // Summed as per-round gaps so that matching b_opt adds exactly zero.
      double value = 0.0;
      for (std::size_t t = 1; t <= horizon; ++t) {
        if (t <= live) {
          const auto& b = log.rounds[t - 1].lender_match[l];
          value += bench.baseline[l] - (b ? instance.u_lender(l, *b) : 0.0);
        }
        regret(l, t - 1) = value;
      }
    }
    trace.per_run.push_back(std::move(regret));
    trace.frozen_from.push_back(std::move(frozen));
  }
  aggregate(trace);
  return trace;
}

/// counts(t, l, b): runs in which lender l was matched to b at round t.
struct MatchCountTensor {
  std::size_t horizon = 0, num_lenders = 0, num_borrowers = 0;
  std::vector<std::uint32_t> counts;

  MatchCountTensor() = default;
  MatchCountTensor(std::size_t T, std::size_t N, std::size_t K)
      : horizon(T), num_lenders(N), num_borrowers(K), counts(T * N * K, 0) {}

  std::uint32_t& operator()(std::size_t t, LenderIndex l, BorrowerIndex b) {
    return counts[((t - 1) * num_lenders + l) * num_borrowers + b];
  }
  std::uint32_t operator()(std::size_t t, LenderIndex l, BorrowerIndex b) const {
    return counts[((t - 1) * num_lenders + l) * num_borrowers + b];
  }
};

inline MatchCountTensor count_matches(const std::vector<RunLog>& logs, std::size_t horizon, std::size_t N,
                                      std::size_t K) {
  MatchCountTensor tensor(horizon, N, K);
  for (const auto& log : logs)
    for (const auto& rec : log.rounds)
      for (LenderIndex l = 0; l < N; ++l)
        if (const auto& b = rec.lender_match[l]) ++tensor(rec.t, l, *b);
  return tensor;
}

enum class Algorithm : std::uint8_t { kGsUcb, kGsBlemet, kGsBlemetFair, kOptimal };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kGsUcb: return "gs_ucb";
    case Algorithm::kGsBlemet: return "gs_blemet";
    case Algorithm::kGsBlemetFair: return "gs_blemet_fair";
    case Algorithm::kOptimal: return "optimal";
  }
  return "?";
}

inline std::optional<Algorithm> parse_algorithm(const std::string& name) {
  for (auto a : {Algorithm::kGsUcb, Algorithm::kGsBlemet, Algorithm::kGsBlemetFair, Algorithm::kOptimal})
    if (name == to_string(a)) return a;
  return std::nullopt;
}

struct ExperimentConfig {
  GenerationConfig generation{.num_borrowers = 5, .num_lenders = 12};
  std::vector<Algorithm> algorithms{Algorithm::kGsUcb, Algorithm::kGsBlemet};
  std::size_t horizon = 2000;
  std::size_t runs = 20;
  double lambda1 = 0.5;
  double lambda2 = 0.5;
  double lambda3 = 0.25;
  /// When non-empty, the fair variant runs once per value with
  /// lambda2 = 0.5 - lambda3; otherwise lambda2 and lambda3 are used as given.
  std::vector<double> fair_lambda3_grid{0.1, 0.25, 0.4};
  double omega = 1.0;
  double sigma = 1.0;
  KappaMode kappa_mode = KappaMode::kAllocationDependent;
  /// Unset keeps each algorithm's own convention (alg1 for GS-UCB, alg2 for
  /// the early-termination variants).
  std::optional<CountConvention> count_convention;
  UpsilonScope upsilon_scope = UpsilonScope::kMatched;
  std::size_t snapshot_every = 0;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  double time_limit = 60.0;  // seconds per solve
  std::size_t threads = 1;

  void validate() const {
    generation.validate();
    auto fail = [](const std::string& key, const std::string& why) {
      throw std::invalid_argument(key + ": " + why);
    };
    if (algorithms.empty()) fail("experiment.algorithms", "must name at least one algorithm");
    if (horizon < 1) fail("experiment.horizon", "must be at least 1");
    if (runs < 1) fail("experiment.runs", "must be at least 1");
    if (threads < 1) fail("experiment.threads", "must be at least 1");
    if (!(lambda1 >= 0.0)) fail("objective.lambda1", "must be non-negative");
    if (!(lambda2 >= 0.0)) fail("objective.lambda2", "must be non-negative");
    if (!(lambda3 >= 0.0)) fail("objective.lambda3", "must be non-negative");
    for (double l3 : fair_lambda3_grid)
      if (!(l3 >= 0.0 && l3 <= 0.5)) fail("objective.fair_lambda3_grid", "values must lie in [0, 0.5]");
    if (!(sigma >= 0.0)) fail("bandit.sigma", "must be non-negative");
    if (!(time_limit > 0.0)) fail("experiment.time_limit", "must be positive");
  }

  /// Soft checks on the fair setting.
  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    if (std::find(algorithms.begin(), algorithms.end(), Algorithm::kGsBlemetFair) == algorithms.end()) return out;
    if (lambda1 != 0.5) out.push_back("fair setting expects lambda1 = 0.5");
    if (fair_lambda3_grid.empty() && std::abs(lambda2 + lambda3 - 0.5) > 1e-12)
      out.push_back("fair setting expects lambda2 + lambda3 = 0.5");
    return out;
  }
};

/// One concrete algorithm of an experiment; the fair variant expands into one
/// entry per grid value.
struct AlgorithmSpec {
  Algorithm kind = Algorithm::kGsUcb;
  double lambda2 = 0.5;
  double lambda3 = 0.0;
  std::string name;
};

inline std::string format_lambda(double v) {
  std::string s = std::to_string(v);
  while (s.size() > 1 && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

inline std::vector<AlgorithmSpec> expand_algorithms(const ExperimentConfig& config) {
  std::vector<AlgorithmSpec> out;
  for (auto a : config.algorithms) {
    if (a != Algorithm::kGsBlemetFair) {
      out.push_back({a, config.lambda2, 0.0, to_string(a)});
    } else if (config.fair_lambda3_grid.empty()) {
      out.push_back({a, config.lambda2, config.lambda3, to_string(a)});
    } else {
      for (double l3 : config.fair_lambda3_grid)
        out.push_back({a, 0.5 - l3, l3, std::string(to_string(a)) + "_l3_" + format_lambda(l3)});
    }
  }
  return out;
}

/// Every round the benchmark borrower of each lender.
inline RunLog optimal_play(const OptBenchmark& bench, const MarketInstance& instance, std::size_t horizon) {
  const auto K = instance.num_borrowers;
  const auto N = instance.num_lenders;
  Matrix<std::uint8_t> z(K, N, 0);
  for (LenderIndex l = 0; l < N; ++l) z(bench.baseline_borrower[l], l) = 1;
  const auto m = Matching::from_assignment(std::move(z));
  RunLog log;
  log.finalized_at.assign(N, std::nullopt);
  for (std::size_t t = 1; t <= horizon; ++t) {
    RoundRecord rec;
    rec.t = t;
    rec.matching = m;
    rec.lender_match = m.lender_match;
    rec.reward.assign(N, std::nullopt);
    log.rounds.push_back(std::move(rec));
  }
  return log;
}

struct AlgorithmResult {
  AlgorithmSpec spec;
  std::vector<RunLog> logs;  // by run index
  RegretTrace regret;
  MatchCountTensor matches;
};

struct ExperimentResult {
  MarketInstance instance;
  OptBenchmark benchmark;
  std::vector<AlgorithmResult> algorithms;
};

class ExperimentError : public std::runtime_error {
 public:
  ExperimentError(const std::string& algorithm, std::size_t run, std::optional<std::size_t> round,
                  const std::string& what)
      : std::runtime_error(algorithm + " run " + std::to_string(run) +
                           (round ? " round " + std::to_string(*round) : std::string()) + ": " + what),
        algorithm(algorithm),
        run(run),
        round(round) {}
  std::string algorithm;
  std::size_t run;
  std::optional<std::size_t> round;
};

/// Logs are trimmed to what the harness and the writers read.
inline void trim_log(RunLog& log) {
  for (auto& rec : log.rounds) rec.matching = {};
}

inline RunLog play_once(const AlgorithmSpec& spec, const ExperimentConfig& config, const MarketInstance& instance,
                        const OptBenchmark& bench, std::size_t run) {
  if (spec.kind == Algorithm::kOptimal) return optimal_play(bench, instance, config.horizon);
  // Every algorithm sees the same reward stream for a given run.
  auto rng = derive_stream(config.seed, run, StreamPurpose::kRewards);
  BanditConfig bandit;
  bandit.horizon = config.horizon;
  bandit.lambda1 = config.lambda1;
  bandit.lambda2 = spec.lambda2;
  bandit.sigma = config.sigma;
  bandit.snapshot_every = config.snapshot_every;
  bandit.time_limit = std::chrono::duration<double>(config.time_limit);
  if (spec.kind == Algorithm::kGsUcb) {
    bandit.count_convention = config.count_convention.value_or(CountConvention::kAlg1);
    return gs_ucb_run(instance, bandit, rng);
  }
  BlemetConfig blemet;
  bandit.count_convention = config.count_convention.value_or(CountConvention::kAlg2);
  blemet.bandit = bandit;
  blemet.upsilon_scope = config.upsilon_scope;
  blemet.fair = spec.kind == Algorithm::kGsBlemetFair;
  blemet.lambda3 = spec.lambda3;
  blemet.omega = config.omega;
  blemet.kappa_mode = config.kappa_mode;
  return gs_blemet_run(instance, blemet, rng).log;
}

/// Generates the instance from the root seed, then runs every algorithm R
/// times. Runs are independent tasks spread over `config.threads` workers and
/// stored by run index, so the result does not depend on scheduling.
inline ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  ExperimentResult result;
  result.instance = generate_instance(config.generation, config.seed);
  SolveOptions bench_options;
  bench_options.time_limit = std::chrono::duration<double>(config.time_limit);
  result.benchmark = compute_opt_benchmark(result.instance, config.lambda1, config.lambda2, bench_options);
  const auto specs = expand_algorithms(config);
  const auto R = config.runs;
  for (const auto& s : specs) {
    AlgorithmResult a;
    a.spec = s;
    a.logs.resize(R);
    result.algorithms.push_back(std::move(a));
  }

  const std::size_t tasks = specs.size() * R;
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(tasks);
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks; i = next++) {
      const auto& spec = specs[i / R];
      const auto run = i % R;
      try {
        auto log = play_once(spec, config, result.instance, result.benchmark, run);
        trim_log(log);
        result.algorithms[i / R].logs[run] = std::move(log);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto workers = std::min(config.threads, tasks);
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (std::size_t i = 0; i < tasks; ++i) {
    if (!errors[i]) continue;
    const auto& name = specs[i / R].name;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const SolverFailure& e) {
      throw ExperimentError(name, i % R, e.round, e.what());
    } catch (const std::exception& e) {
      throw ExperimentError(name, i % R, std::nullopt, e.what());
    }
  }

  for (auto& a : result.algorithms) {
    a.regret = cumulative_regret(a.logs, result.benchmark, result.instance, config.horizon);
    a.matches = count_matches(a.logs, config.horizon, result.instance.num_lenders, result.instance.num_borrowers);
  }
  return result;
}

/// Structural checks on an early-termination run; returns one message per
/// violation.
inline std::vector<std::string> check_blemet_run(const RunLog& log, const Matrix<double>& regret,
                                                 const MarketInstance& instance) {
  std::vector<std::string> bad;
  const auto K = instance.num_borrowers;
  const auto N = instance.num_lenders;
  auto say = [&](const std::string& s) { bad.push_back(s); };
  for (LenderIndex l = 0; l < N; ++l) {
    if (!log.finalized_at[l]) continue;
    const auto t0 = *log.finalized_at[l];
    for (const auto& rec : log.rounds)
      if (rec.t > t0 && rec.lender_match[l])
        say("lender " + std::to_string(l) + " matched at round " + std::to_string(rec.t) + " after finalizing");
    for (std::size_t t = t0 + 1; t <= regret.cols(); ++t)
      if (regret(l, t - 1) != regret(l, t0 - 1))
        say("lender " + std::to_string(l) + " regret moves at round " + std::to_string(t) + " after finalizing");
    if (t0 <= log.rounds.size() && log.rounds[t0 - 1].reward[l])
      say("lender " + std::to_string(l) + " drew a reward in its finalizing round");
  }
  std::vector<double> previous = instance.request;
  std::vector<std::uint8_t> open(K, 1);
  for (std::size_t i = 0; i < log.residual_trace.size(); ++i) {
    const auto& residual = log.residual_trace[i];
    const auto& active = log.active_borrowers_trace[i];
    std::vector<std::uint8_t> now(K, 0);
    for (auto b : active) now[b] = 1;
    for (BorrowerIndex b = 0; b < K; ++b) {
      if (residual[b] > previous[b]) say("residual of borrower " + std::to_string(b) + " grows at round " +
                                         std::to_string(i + 1));
      const bool should_leave = open[b] && residual[b] <= 0.0;
      if (open[b] && !now[b] && !should_leave)
        say("borrower " + std::to_string(b) + " removed with positive residual at round " + std::to_string(i + 1));
      if (should_leave && now[b])
        say("borrower " + std::to_string(b) + " kept with residual <= 0 at round " + std::to_string(i + 1));
      if (!open[b] && now[b]) say("borrower " + std::to_string(b) + " re-entered at round " + std::to_string(i + 1));
    }
    previous = residual;
    open = now;
  }
  return bad;
}

}  // namespace p2pmatch
