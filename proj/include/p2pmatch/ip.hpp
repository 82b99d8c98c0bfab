#pragma once

// 0-1 integer programs over matching variables and their exact solution.
// Matching programs go through a ranked combinatorial search; anything else,
// or ranked_search = false, uses best-first branch-and-bound on LP relaxations.

#include <algorithm>
#include <array>
#include <bit>
#include <cassert>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <queue>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "p2pmatch/lp.hpp"
#include "p2pmatch/market.hpp"

namespace p2pmatch {

enum class VarKind : std::uint8_t { kAssignment, kBlocking, kAuxiliary };

struct Variable {
  std::string name;
  VarKind kind = VarKind::kAssignment;
  bool integer = true;
  double lower = 0.0;
  double upper = 1.0;
  double objective = 0.0;
  BorrowerIndex borrower = 0;
  LenderIndex lender = 0;
};

enum class ConstraintRole : std::uint8_t { kLenderCapacity, kFunding, kBlocking, kFairness, kOther };

struct Constraint {
  std::string name;
  ConstraintRole role = ConstraintRole::kOther;
  std::vector<std::size_t> index;
  std::vector<double> coef;
  lp::Sense sense = lp::Sense::kLessEqual;
  double rhs = 0.0;

  friend bool operator==(const Constraint&, const Constraint&) = default;
};

/// How funding rows were relaxed when the strict model had no solution.
enum class FundingMode : std::uint8_t { kStrict, kReachable, kDropped };

/// A maximisation model. Assignment variable (b, l) sits at index b * N + l and
/// blocking variable (b, l) at K * N + b * N + l; auxiliaries follow.
struct IPModel {
  std::size_t num_borrowers = 0;
  std::size_t num_lenders = 0;
  std::vector<Variable> vars;
  std::vector<Constraint> constraints;
  double objective_offset = 0.0;
  FundingMode funding_mode = FundingMode::kStrict;

  std::size_t num_z_vars() const { return num_borrowers * num_lenders; }
  std::size_t z_index(BorrowerIndex b, LenderIndex l) const { return b * num_lenders + l; }
  std::size_t w_index(BorrowerIndex b, LenderIndex l) const { return num_z_vars() + b * num_lenders + l; }

  std::size_t add_variable(Variable v) {
    vars.push_back(std::move(v));
    return vars.size() - 1;
  }

  /// Objective of a full assignment, summed in variable order.
  double evaluate(const std::vector<double>& x) const {
    double value = objective_offset;
    for (std::size_t j = 0; j < vars.size(); ++j) value += vars[j].objective * x[j];
    return value;
  }

  bool satisfies(const std::vector<double>& x, double tol = 1e-9) const {
    for (std::size_t j = 0; j < vars.size(); ++j) {
      if (x[j] < vars[j].lower - tol || x[j] > vars[j].upper + tol) return false;
      if (vars[j].integer && std::abs(x[j] - std::round(x[j])) > tol) return false;
    }
    for (const auto& c : constraints) {
      double lhs = 0.0;
      for (std::size_t k = 0; k < c.index.size(); ++k) lhs += c.coef[k] * x[c.index[k]];
      const double slack = tol * std::max(1.0, std::abs(c.rhs));
      if (c.sense == lp::Sense::kLessEqual && lhs > c.rhs + slack) return false;
      if (c.sense == lp::Sense::kGreaterEqual && lhs < c.rhs - slack) return false;
      if (c.sense == lp::Sense::kEqual && std::abs(lhs - c.rhs) > slack) return false;
    }
    return true;
  }

  /// Throws if a constraint names an undeclared variable.
  void validate() const {
    for (const auto& c : constraints) {
      if (c.index.size() != c.coef.size()) throw std::invalid_argument("ip model: ragged constraint " + c.name);
      for (auto j : c.index)
        if (j >= vars.size()) throw std::invalid_argument("ip model: constraint " + c.name + " references undeclared variable");
    }
    if (vars.size() < 2 * num_z_vars()) throw std::invalid_argument("ip model: missing assignment/blocking variables");
  }
};

enum class SolveStatus : std::uint8_t { kOptimal, kInfeasible, kTimeLimit };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "Optimal";
    case SolveStatus::kInfeasible: return "Infeasible";
    case SolveStatus::kTimeLimit: return "TimeLimit";
  }
  return "?";
}

struct SolveResult {
  Matching matching;
  double objective = -std::numeric_limits<double>::infinity();
  SolveStatus status = SolveStatus::kInfeasible;
  std::size_t nodes_explored = 0;
  std::chrono::duration<double> wall_time{0.0};
  std::vector<double> values;  // full variable vector of the returned solution
  bool used_enumeration = false;
  bool used_ranked_search = false;

  bool has_solution() const { return !values.empty(); }
};

/// Integer funding feasibility of lender-to-borrower reachability patterns,
/// shared between solves of models with the same budgets and requests.
class FundingCache {
 public:
  /// Forgets everything unless `fingerprint` matches the stored one.
  void bind(const std::vector<double>& fingerprint) {
    if (fingerprint == fingerprint_) return;
    fingerprint_ = fingerprint;
    known_.clear();
  }
  std::optional<bool> find(const std::string& key) const {
    const auto it = known_.find(key);
    if (it == known_.end()) return std::nullopt;
    return it->second;
  }
  void store(std::string key, bool feasible) { known_.emplace(std::move(key), feasible); }
  std::size_t size() const { return known_.size(); }

 private:
  std::vector<double> fingerprint_;
  std::unordered_map<std::string, bool> known_;
};

struct SolveOptions {
  std::chrono::duration<double> time_limit{60.0};
  /// Enumerate assignments instead of branching when K * N is at most this.
  std::size_t enumeration_limit = 16;
  /// Assignment (z only, b-major) tried as the first incumbent.
  std::optional<std::vector<std::uint8_t>> warm_start;
  /// Search nodes allowed per covering-row feasibility probe.
  std::size_t covering_budget = 2000;
  /// Rounds of cover-cut separation at the root.
  std::size_t cut_rounds = 10;
  /// Solve models with the matching structure by the ranked search instead of
  /// LP-based branching.
  bool ranked_search = true;
  /// Optional memo for the ranked search; owned by the caller.
  FundingCache* funding_cache = nullptr;
};

namespace detail {

/// Each non-assignment variable shares rows only with assignment variables and
/// is penalised, so its best value for a fixed z is the smallest feasible one.
inline bool is_separable(const IPModel& model) {
  const auto nz = model.num_z_vars();
  for (std::size_t j = nz; j < model.vars.size(); ++j)
    if (model.vars[j].objective > 0.0) return false;
  for (const auto& c : model.constraints) {
    std::size_t extra = 0;
    for (std::size_t k = 0; k < c.index.size(); ++k) {
      if (c.index[k] < nz) continue;
      ++extra;
      const double a = c.coef[k];
      const bool pushes_up = (c.sense == lp::Sense::kGreaterEqual && a > 0.0) ||
                             (c.sense == lp::Sense::kLessEqual && a < 0.0);
      if (!pushes_up) return false;
    }
    if (extra > 1) return false;
  }
  for (std::size_t j = 0; j < nz; ++j)
    if (!model.vars[j].integer) return false;
  return true;
}

/// Smallest feasible completion of the non-assignment variables for a fixed
/// z. Empty when z violates a row no completion can repair.
inline std::optional<std::vector<double>> complete(const IPModel& model, const std::vector<double>& z) {
  const auto nz = model.num_z_vars();
  std::vector<double> x(model.vars.size());
  for (std::size_t j = 0; j < nz; ++j) x[j] = z[j];
  for (std::size_t j = nz; j < model.vars.size(); ++j) x[j] = model.vars[j].lower;
  for (const auto& c : model.constraints) {
    double fixed = 0.0;
    std::size_t free_var = model.vars.size();
    double free_coef = 0.0;
    for (std::size_t k = 0; k < c.index.size(); ++k) {
      if (c.index[k] < nz) {
        fixed += c.coef[k] * x[c.index[k]];
      } else {
        free_var = c.index[k];
        free_coef = c.coef[k];
      }
    }
    if (free_var == model.vars.size()) continue;
    const double need = (c.rhs - fixed) / free_coef;
    x[free_var] = std::max(x[free_var], need);
  }
  const double tol = 1e-9;
  for (std::size_t j = nz; j < model.vars.size(); ++j) {
    if (model.vars[j].integer) {
      const double r = std::round(x[j]);
      x[j] = (std::abs(x[j] - r) <= tol) ? r : std::ceil(x[j]);
    }
    if (x[j] > model.vars[j].upper + tol) return std::nullopt;
  }
  if (!model.satisfies(x)) return std::nullopt;
  return x;
}

/// LP relaxation rows. For >= rows over binaries with non-negative
/// coefficients: coefficients above the right-hand side are clamped to it, and
/// a group whose largest attainable contribution (respecting <= 1 packing rows)
/// stays below the right-hand side is dropped when every remaining coefficient
/// alone satisfies the row. Both steps keep every integer point. Rows are then
/// scaled to unit largest coefficient.
inline lp::Problem relaxation(const IPModel& model) {
  lp::Problem p;
  const auto n = model.vars.size();
  p.objective.resize(n);
  p.lower.resize(n);
  p.upper.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    p.objective[j] = model.vars[j].objective;
    p.lower[j] = model.vars[j].lower;
    p.upper[j] = model.vars[j].upper;
  }

  // packing_group[j]: first "sum x <= 1" row (unit coefficients) holding j.
  std::vector<std::size_t> packing_group(n, std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < model.constraints.size(); ++i) {
    const auto& c = model.constraints[i];
    if (c.sense != lp::Sense::kLessEqual || c.rhs != 1.0) continue;
    const bool unit = std::all_of(c.coef.begin(), c.coef.end(), [](double a) { return a == 1.0; });
    if (!unit) continue;
    for (auto j : c.index)
      if (packing_group[j] == std::numeric_limits<std::size_t>::max() && model.vars[j].integer &&
          model.vars[j].lower >= 0.0 && model.vars[j].upper <= 1.0)
        packing_group[j] = i;
  }

  for (const auto& c : model.constraints) {
    lp::Row row;
    row.sense = c.sense;
    row.rhs = c.rhs;
    row.index = c.index;
    row.value = c.coef;

    const bool binary_ge = c.sense == lp::Sense::kGreaterEqual && c.rhs > 0.0 &&
                           std::all_of(c.index.begin(), c.index.end(), [&](std::size_t j) {
                             const auto& v = model.vars[j];
                             return v.integer && v.lower >= 0.0 && v.upper <= 1.0;
                           }) &&
                           std::all_of(c.coef.begin(), c.coef.end(), [](double a) { return a >= 0.0; });
    if (binary_ge) {
      for (auto& a : row.value) a = std::min(a, row.rhs);
      // Largest attainable contribution of the sub-rhs coefficients.
      double attainable = 0.0;
      std::vector<std::pair<std::size_t, double>> group_max;
      for (std::size_t k = 0; k < row.index.size(); ++k) {
        const double a = row.value[k];
        if (a >= row.rhs) continue;
        const auto g = packing_group[row.index[k]];
        if (g == std::numeric_limits<std::size_t>::max()) {
          attainable += a;
          continue;
        }
        auto it = std::find_if(group_max.begin(), group_max.end(), [&](const auto& e) { return e.first == g; });
        if (it == group_max.end()) group_max.emplace_back(g, a);
        else it->second = std::max(it->second, a);
      }
      for (const auto& e : group_max) attainable += e.second;
      if (attainable < row.rhs) {
        lp::Row kept;
        kept.sense = row.sense;
        kept.rhs = row.rhs;
        for (std::size_t k = 0; k < row.index.size(); ++k) {
          if (row.value[k] < row.rhs) continue;
          kept.index.push_back(row.index[k]);
          kept.value.push_back(row.value[k]);
        }
        row = std::move(kept);
      }
    }

    double scale = 0.0;
    for (double a : row.value) scale = std::max(scale, std::abs(a));
    if (scale > 0.0) {
      for (auto& a : row.value) a /= scale;
      row.rhs /= scale;
    }
    p.rows.push_back(std::move(row));
  }
  return p;
}

/// Lexicographic order on the assignment block.
inline bool z_less(const std::vector<double>& a, const std::vector<double>& b, std::size_t nz) {
  for (std::size_t j = 0; j < nz; ++j) {
    if (a[j] != b[j]) return a[j] < b[j];
  }
  return false;
}

inline Matching to_matching(const IPModel& model, const std::vector<double>& x, double objective) {
  const auto K = model.num_borrowers;
  const auto N = model.num_lenders;
  Matrix<std::uint8_t> z(K, N, 0), w(K, N, 0);
  for (std::size_t b = 0; b < K; ++b) {
    for (std::size_t l = 0; l < N; ++l) {
      z(b, l) = x[model.z_index(b, l)] > 0.5 ? 1 : 0;
      w(b, l) = x[model.w_index(b, l)] > 0.5 ? 1 : 0;
    }
  }
  return Matching::from_assignment(std::move(z), std::move(w), objective);
}

class Incumbent {
 public:
  explicit Incumbent(std::size_t nz) : nz_(nz) {}

  double value() const { return value_; }
  bool has() const { return !x_.empty(); }
  const std::vector<double>& x() const { return x_; }

  double tolerance() const { return 1e-9 * std::max(1.0, std::abs(value_)); }

  /// Accepts a strictly better solution, or an equal one with smaller z.
  bool offer(std::vector<double> x, double value) {
    if (!has() || value > value_ + 1e-9 * std::max(1.0, std::abs(value_))) {
      x_ = std::move(x);
      value_ = value;
      return true;
    }
    if (value >= value_ - tolerance() && z_less(x, x_, nz_)) {
      x_ = std::move(x);
      value_ = std::max(value_, value);
      return true;
    }
    return false;
  }

 private:
  std::size_t nz_;
  std::vector<double> x_;
  double value_ = -std::numeric_limits<double>::infinity();
};

/// Cover inequalities for covering rows sum a_j z_j >= rhs over binaries:
/// if S is a set with a(S) < rhs, any feasible z takes at least k variables
/// outside S, k being the fewest whose largest coefficients make up the
/// difference. S is grown greedily in order of decreasing LP value; the cut is
/// returned when x violates it.
inline std::vector<lp::Row> separate_cover_cuts(const IPModel& model, std::span<const double> x) {
  std::vector<lp::Row> cuts;
  const auto nz = model.num_z_vars();
  for (const auto& c : model.constraints) {
    if (c.sense != lp::Sense::kGreaterEqual || !(c.rhs > 0.0)) continue;
    const bool covering = std::all_of(c.index.begin(), c.index.end(), [&](std::size_t j) { return j < nz; }) &&
                          std::all_of(c.coef.begin(), c.coef.end(), [](double a) { return a >= 0.0; });
    if (!covering) continue;
    std::vector<std::size_t> order;
    for (std::size_t k = 0; k < c.index.size(); ++k)
      if (c.coef[k] > 0.0) order.push_back(k);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return x[c.index[a]] > x[c.index[b]]; });
    double in_s = 0.0;
    std::vector<bool> chosen(c.index.size(), false);
    for (auto k : order) {
      if (in_s + c.coef[k] < c.rhs) {
        in_s += c.coef[k];
        chosen[k] = true;
      }
    }
    std::vector<double> rest;
    lp::Row row;
    row.sense = lp::Sense::kGreaterEqual;
    double lhs = 0.0;
    for (auto k : order) {
      if (chosen[k]) continue;
      row.index.push_back(c.index[k]);
      row.value.push_back(1.0);
      rest.push_back(c.coef[k]);
      lhs += x[c.index[k]];
    }
    std::sort(rest.rbegin(), rest.rend());
    double need = c.rhs - in_s, got = 0.0;
    std::size_t count = 0;
    while (count < rest.size() && got < need) got += rest[count++];
    if (got < need || count == 0) continue;  // the row itself is unsatisfiable; leave it to the LP
    row.rhs = static_cast<double>(count);
    if (lhs < row.rhs - 1e-6) {
      std::vector<std::pair<std::size_t, double>> sorted;
      for (std::size_t k = 0; k < row.index.size(); ++k) sorted.emplace_back(row.index[k], row.value[k]);
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t k = 0; k < sorted.size(); ++k) {
        row.index[k] = sorted[k].first;
        row.value[k] = sorted[k].second;
      }
      cuts.push_back(std::move(row));
    }
  }
  return cuts;
}

/// Depth-first search over the assignment block that keeps only the unit
/// packing rows and the covering rows (>= rows over assignment variables with
/// non-negative coefficients). Every integer point of the model satisfies
/// these rows, so a node whose bounds leave no such assignment can be pruned;
/// an assignment it does find is a candidate incumbent.
class CoveringSearch {
 public:
  enum class Outcome : std::uint8_t { kFeasible, kInfeasible, kUnknown };

  explicit CoveringSearch(const IPModel& model) : nz_(model.num_z_vars()) {
    constexpr auto kNone = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> group_of(nz_, kNone);
    for (const auto& c : model.constraints) {
      if (c.sense != lp::Sense::kLessEqual || c.rhs != 1.0) continue;
      const bool unit_z = std::all_of(c.index.begin(), c.index.end(), [&](std::size_t j) { return j < nz_; }) &&
                          std::all_of(c.coef.begin(), c.coef.end(), [](double a) { return a == 1.0; });
      if (!unit_z) continue;
      std::vector<std::size_t> members;
      for (auto j : c.index)
        if (group_of[j] == kNone) members.push_back(j);
      if (members.empty()) continue;
      for (auto j : members) group_of[j] = groups_.size();
      groups_.push_back(std::move(members));
    }
    for (std::size_t j = 0; j < nz_; ++j)
      if (group_of[j] == kNone) groups_.push_back({j});

    touches_.resize(nz_);
    for (const auto& c : model.constraints) {
      if (c.sense != lp::Sense::kGreaterEqual || !(c.rhs > 0.0)) continue;
      const bool covering = std::all_of(c.index.begin(), c.index.end(), [&](std::size_t j) { return j < nz_; }) &&
                            std::all_of(c.coef.begin(), c.coef.end(), [](double a) { return a >= 0.0; });
      if (!covering) continue;
      const auto r = rhs_.size();
      rhs_.push_back(c.rhs);
      tol_.push_back(1e-9 * std::max(1.0, std::abs(c.rhs)));
      for (std::size_t k = 0; k < c.index.size(); ++k)
        if (c.coef[k] > 0.0) touches_[c.index[k]].emplace_back(r, c.coef[k]);
    }
    objective_.resize(nz_);
    for (std::size_t j = 0; j < nz_; ++j) objective_[j] = model.vars[j].objective;
  }

  bool active() const { return !rhs_.empty(); }

  /// Looks for an assignment within the bounds `lower`/`upper` (indexed like
  /// the model's variables). On success `z` holds it, with groups the covering
  /// rows did not need filled by their best-objective admissible variable.
  Outcome find(std::span<const double> lower, std::span<const double> upper, std::size_t budget,
               std::vector<double>& z) {
    lower_ = lower;
    upper_ = upper;
    budget_ = budget;
    visited_ = 0;
    deficit_ = rhs_;
    z.assign(nz_, 0.0);

    // Forced variables first; groups with a forced member are settled.
    open_.clear();
    for (const auto& g : groups_) {
      std::size_t forced = std::numeric_limits<std::size_t>::max();
      std::size_t forced_count = 0;
      for (auto j : g)
        if (lower[j] > 0.5) {
          forced = j;
          ++forced_count;
        }
      if (forced_count > 1) return Outcome::kInfeasible;
      if (forced_count == 1) {
        z[forced] = 1.0;
        for (const auto& [r, a] : touches_[forced]) deficit_[r] -= a;
        continue;
      }
      Open o;
      for (auto j : g)
        if (upper[j] > 0.5) o.options.push_back(j);
      if (o.options.empty()) continue;
      for (auto j : o.options) {
        double total = 0.0;
        for (const auto& [r, a] : touches_[j]) total += a;
        o.reach = std::max(o.reach, total);
      }
      open_.push_back(std::move(o));
    }
    std::stable_sort(open_.begin(), open_.end(), [](const Open& a, const Open& b) { return a.reach > b.reach; });

    // potential_[r]: largest total the undecided groups can still add to row r.
    potential_.assign(rhs_.size(), 0.0);
    for (auto& o : open_) {
      for (auto j : o.options)
        for (const auto& [r, a] : touches_[j]) o.row_max.emplace_back(r, a);
      std::sort(o.row_max.begin(), o.row_max.end());
      std::vector<std::pair<std::size_t, double>> merged;
      for (const auto& e : o.row_max) {
        if (!merged.empty() && merged.back().first == e.first) merged.back().second = std::max(merged.back().second, e.second);
        else merged.push_back(e);
      }
      o.row_max = std::move(merged);
      for (const auto& [r, a] : o.row_max) potential_[r] += a;
    }
    aggregate_ = 0.0;
    for (const auto& o : open_) aggregate_ += o.reach;

    chosen_.assign(open_.size(), kUnset);
    const auto outcome = dfs(0);
    if (outcome != Outcome::kFeasible) return outcome;
    for (std::size_t k = 0; k < open_.size(); ++k) {
      if (chosen_[k] != kUnset) {
        if (chosen_[k] != kLeaveEmpty) z[chosen_[k]] = 1.0;
        continue;
      }
      std::size_t best = kLeaveEmpty;
      for (auto j : open_[k].options)
        if (objective_[j] > 0.0 && (best == kLeaveEmpty || objective_[j] > objective_[best])) best = j;
      if (best != kLeaveEmpty) z[best] = 1.0;
    }
    return Outcome::kFeasible;
  }

 private:
  static constexpr std::size_t kUnset = std::numeric_limits<std::size_t>::max();
  static constexpr std::size_t kLeaveEmpty = kUnset - 1;

  struct Open {
    std::vector<std::size_t> options;
    std::vector<std::pair<std::size_t, double>> row_max;
    double reach = 0.0;
  };

  bool satisfied() const {
    for (std::size_t r = 0; r < rhs_.size(); ++r)
      if (deficit_[r] > tol_[r]) return false;
    return true;
  }

  bool hopeless() const {
    double total = 0.0;
    for (std::size_t r = 0; r < rhs_.size(); ++r) {
      if (deficit_[r] <= tol_[r]) continue;
      if (deficit_[r] > potential_[r] + tol_[r]) return true;
      total += deficit_[r];
    }
    return total > aggregate_ * (1.0 + 1e-12) + 1e-9;
  }

  Outcome dfs(std::size_t k) {
    if (satisfied()) return Outcome::kFeasible;
    if (k == open_.size() || hopeless()) return Outcome::kInfeasible;
    if (++visited_ > budget_) return Outcome::kUnknown;

    auto& o = open_[k];
    for (const auto& [r, a] : o.row_max) potential_[r] -= a;
    aggregate_ -= o.reach;

    // Options that cut the outstanding deficit most come first.
    std::vector<std::pair<double, std::size_t>> order;
    order.reserve(o.options.size());
    for (auto j : o.options) {
      double gain = 0.0;
      for (const auto& [r, a] : touches_[j]) gain += std::min(a, std::max(0.0, deficit_[r]));
      order.emplace_back(-gain, j);
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    Outcome result = Outcome::kInfeasible;
    for (const auto& [neg_gain, j] : order) {
      for (const auto& [r, a] : touches_[j]) deficit_[r] -= a;
      chosen_[k] = j;
      const auto sub = dfs(k + 1);
      for (const auto& [r, a] : touches_[j]) deficit_[r] += a;
      if (sub == Outcome::kFeasible) return sub;
      if (sub == Outcome::kUnknown) result = sub;
      if (result == Outcome::kUnknown) break;
    }
    if (result != Outcome::kUnknown) {
      chosen_[k] = kLeaveEmpty;
      const auto sub = dfs(k + 1);
      if (sub == Outcome::kFeasible) return sub;
      if (sub == Outcome::kUnknown) result = sub;
    }
    chosen_[k] = kUnset;
    for (const auto& [r, a] : o.row_max) potential_[r] += a;
    aggregate_ += o.reach;
    return result;
  }

  std::size_t nz_;
  std::vector<std::vector<std::size_t>> groups_;
  std::vector<std::vector<std::pair<std::size_t, double>>> touches_;
  std::vector<double> rhs_, tol_, objective_;

  std::span<const double> lower_, upper_;
  std::size_t budget_ = 0, visited_ = 0;
  std::vector<double> deficit_, potential_;
  double aggregate_ = 0.0;
  std::vector<Open> open_;
  std::vector<std::size_t> chosen_;
};

/// Exact search for models with the matching structure: unit lender capacity,
/// per-borrower funding rows, one stability row per pair whose own-borrower
/// terms are nested along a ranking, and optionally one penalised variable
/// bounding per-borrower shortfalls. Once every borrower's best-ranked matched
/// lender (its "top") is fixed, each stability row depends on a single
/// lender's choice, so the remaining problem couples lenders only through
/// funding and the shortfall bound.
class RankedSearch {
  static constexpr std::size_t kHallLimit = 10;
 public:
  static std::optional<RankedSearch> recognize(const IPModel& model) {
    RankedSearch s;
    if (!s.read(model)) return std::nullopt;
    return s;
  }

  struct Outcome {
    std::size_t nodes = 0;
    bool timed_out = false;
  };

  /// Offers every improving assignment to `incumbent`.
  template <typename Deadline>
  Outcome run(const IPModel& model, Incumbent& incumbent, Deadline&& expired, FundingCache* cache = nullptr) {
    model_ = &model;
    cache_ = cache ? cache : &local_cache_;
    {
      std::vector<double> fingerprint(fund_rhs_);
      fingerprint.insert(fingerprint.end(), fund_coef_.begin(), fund_coef_.end());
      cache_->bind(fingerprint);
    }
    incumbent_ = &incumbent;
    expired_ = [&] { return expired(); };
    outcome_ = {};
    top_.assign(K_, kUnset);
    top_of_.assign(N_, kNone);
    choice_.assign(N_, kNone);
    opt_value_.assign(N_ * (K_ + 1), -lp::kInfinity);
    need_.assign(K_, 0.0);
    mu_.assign(K_ + 2, std::vector<double>(K_, 0.0));
    allowed_.assign(N_, 0);
    if (K_ <= kHallLimit) {
      inside_.assign(std::size_t{1} << K_, 0.0);
      demand_.assign(std::size_t{1} << K_, 0.0);
    }
    best_.assign(N_, -lp::kInfinity);
    all_.resize(N_);
    std::iota(all_.begin(), all_.end(), std::size_t{0});
    outer(0);
    return outcome_;
  }

 private:
  static constexpr std::size_t kUnset = std::numeric_limits<std::size_t>::max();
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max() - 1;

  bool read(const IPModel& model) {
    K_ = model.num_borrowers;
    N_ = model.num_lenders;
    const auto nz = model.num_z_vars();
    if (K_ == 0 || N_ == 0 || K_ > 32 || model.vars.size() < 2 * nz || model.vars.size() > 2 * nz + 1) return false;
    for (std::size_t j = 0; j < 2 * nz; ++j) {
      const auto& v = model.vars[j];
      if (!v.integer || v.lower < 0.0 || v.upper > 1.0 || v.lower > v.upper) return false;
    }
    for (std::size_t j = nz; j < 2 * nz; ++j)
      if (model.vars[j].lower != 0.0 || model.vars[j].upper != 1.0 || model.vars[j].objective > 0.0) return false;
    kappa_var_ = model.vars.size() == 2 * nz + 1 ? 2 * nz : kUnset;
    if (kappa_var_ != kUnset) {
      const auto& v = model.vars[kappa_var_];
      if (v.objective > 0.0 || v.upper != lp::kInfinity || !std::isfinite(v.lower)) return false;
      kappa_weight_ = -v.objective;
      kappa_lower_ = v.lower;
    }

    value_.assign(N_ * (K_ + 1), 0.0);
    z_lo_.assign(nz, 0);
    z_hi_.assign(nz, 1);
    for (std::size_t b = 0; b < K_; ++b)
      for (std::size_t l = 0; l < N_; ++l) {
        const auto& v = model.vars[model.z_index(b, l)];
        value_[l * (K_ + 1) + b] = v.objective;
        z_lo_[b * N_ + l] = v.lower > 0.5;
        z_hi_[b * N_ + l] = v.upper > 0.5;
      }
    penalty_.assign(nz, 0.0);
    for (std::size_t j = 0; j < nz; ++j) penalty_[j] = -model.vars[nz + j].objective;

    cover_.assign(nz, 0);
    fund_coef_.assign(nz, 0.0);
    fund_rhs_.assign(K_, -lp::kInfinity);
    kappa_coef_.assign(nz, 0.0);
    kappa_rhs_.assign(K_, -lp::kInfinity);
    std::vector<std::uint8_t> capped(N_, 0), has_block(nz, 0), has_fund(K_, 0), has_kappa(K_, 0);
    std::vector<std::size_t> chain_size(nz, 0);
    std::vector<std::vector<std::size_t>> chain(nz);

    for (const auto& c : model.constraints) {
      std::size_t w = kUnset;
      bool has_kappa_var = false;
      for (std::size_t k = 0; k < c.index.size(); ++k) {
        const auto j = c.index[k];
        if (j >= nz && j < 2 * nz) {
          if (w != kUnset) return false;
          w = j - nz;
        } else if (j == kappa_var_) {
          has_kappa_var = true;
        }
      }
      if (w != kUnset && has_kappa_var) return false;
      if (w != kUnset) {
        // stability row
        const std::size_t b = w / N_, l = w % N_;
        const double R = c.rhs;
        if (c.sense != lp::Sense::kGreaterEqual || !(R > 0.0) || has_block[w]) return false;
        has_block[w] = 1;
        for (std::size_t k = 0; k < c.index.size(); ++k) {
          const auto j = c.index[k];
          const double a = c.coef[k];
          if (j == nz + w) {
            if (a < R) return false;
            continue;
          }
          const std::size_t bj = j / N_, lj = j % N_;
          if (a < 0.0) return false;
          if (bj == b) {
            if (a < R) return false;
            chain[w].push_back(lj);
          } else if (lj == l) {
            if (a >= R) cover_[w] |= std::uint32_t{1} << bj;
          } else {
            return false;
          }
        }
        continue;
      }
      // remaining rows touch z (and possibly the shortfall variable) only
      std::size_t borrower = kUnset, lender = kUnset;
      bool one_borrower = true, one_lender = true;
      for (auto j : c.index) {
        if (j == kappa_var_) continue;
        const std::size_t bj = j / N_, lj = j % N_;
        if (borrower == kUnset) borrower = bj;
        if (lender == kUnset) lender = lj;
        one_borrower = one_borrower && bj == borrower;
        one_lender = one_lender && lj == lender;
      }
      if (has_kappa_var) {
        if (c.sense != lp::Sense::kGreaterEqual || borrower == kUnset || !one_borrower) return false;
        if (has_kappa[borrower]) return false;
        has_kappa[borrower] = 1;
        for (std::size_t k = 0; k < c.index.size(); ++k) {
          if (c.index[k] == kappa_var_) {
            if (c.coef[k] != 1.0) return false;
            continue;
          }
          if (c.coef[k] < 0.0) return false;
          kappa_coef_[c.index[k]] = c.coef[k];
        }
        kappa_rhs_[borrower] = c.rhs;
        continue;
      }
      if (c.sense == lp::Sense::kLessEqual && c.rhs == 1.0 && one_lender && c.index.size() == K_ &&
          std::all_of(c.coef.begin(), c.coef.end(), [](double a) { return a == 1.0; })) {
        capped[lender] = 1;
        continue;
      }
      if (c.sense == lp::Sense::kGreaterEqual && one_borrower && borrower != kUnset && !has_fund[borrower]) {
        has_fund[borrower] = 1;
        for (std::size_t k = 0; k < c.index.size(); ++k) {
          if (c.coef[k] < 0.0) return false;
          fund_coef_[c.index[k]] = c.coef[k];
        }
        fund_rhs_[borrower] = c.rhs;
        continue;
      }
      return false;
    }
    if (std::find(capped.begin(), capped.end(), 0) != capped.end()) return false;
    if (std::find(has_block.begin(), has_block.end(), 0) != has_block.end()) return false;
    if (kappa_var_ != kUnset && std::find(has_kappa.begin(), has_kappa.end(), 0) != has_kappa.end()) return false;

    // Own-borrower terms must be nested: the row of the r-th ranked lender
    // names exactly the lenders ranked 0..r.
    rank_.assign(nz, 0);
    order_.assign(nz, 0);
    for (std::size_t b = 0; b < K_; ++b) {
      std::vector<std::size_t> pos(N_, kUnset);
      for (std::size_t l = 0; l < N_; ++l) {
        auto& set = chain[b * N_ + l];
        std::sort(set.begin(), set.end());
        if (std::adjacent_find(set.begin(), set.end()) != set.end()) return false;
        if (!std::binary_search(set.begin(), set.end(), l)) return false;
        const auto r = set.size() - 1;
        if (r >= N_ || pos[r] != kUnset) return false;
        pos[r] = l;
      }
      for (std::size_t r = 0; r < N_; ++r) {
        const auto& set = chain[b * N_ + pos[r]];
        for (std::size_t s = 0; s < r; ++s)
          if (!std::binary_search(set.begin(), set.end(), pos[s])) return false;
        rank_[b * N_ + pos[r]] = r;
        order_[b * N_ + r] = pos[r];
      }
    }
    // Borrowers whose exposed lenders can rarely be settled from the lender
    // side are fixed first.
    std::vector<double> exposure(K_, 0.0);
    for (std::size_t b = 0; b < K_; ++b)
      for (std::size_t l = 0; l < N_; ++l)
        if (cover_[b * N_ + l] == 0) exposure[b] += penalty_[b * N_ + l];
    borrower_order_.resize(K_);
    std::iota(borrower_order_.begin(), borrower_order_.end(), std::size_t{0});
    std::stable_sort(borrower_order_.begin(), borrower_order_.end(),
                     [&](std::size_t a, std::size_t b) { return exposure[a] > exposure[b]; });
    covered_by_.assign(N_ * (K_ + 1), 0);
    for (std::size_t l = 0; l < N_; ++l)
      for (std::size_t c = 0; c < K_; ++c)
        for (std::size_t b = 0; b < K_; ++b)
          if ((cover_[b * N_ + l] >> c) & 1U) covered_by_[l * (K_ + 1) + c] |= std::uint32_t{1} << b;
    budget_.assign(N_, 0.0);
    for (std::size_t b = 0; b < K_; ++b)
      for (std::size_t l = 0; l < N_; ++l) budget_[l] = std::max(budget_[l], fund_coef_[b * N_ + l]);
    uniform_funding_ = true;
    for (std::size_t b = 0; b < K_; ++b)
      for (std::size_t l = 0; l < N_; ++l)
        uniform_funding_ = uniform_funding_ && fund_coef_[b * N_ + l] == budget_[l];
    offset_ = model.objective_offset;
    return true;
  }

  static bool covers(double lhs, double rhs) { return lhs >= rhs - 1e-9 * std::max(1.0, std::abs(rhs)); }

  /// Choices open to lender l (bit K is "unmatched") and the value of each
  /// given the tops fixed so far; returns false when some lender has none.
  bool lender_options(std::size_t l, std::uint64_t& mask) const {
    mask = 0;
    if (top_of_[l] != kNone) {
      mask = std::uint64_t{1} << top_of_[l];
      return true;
    }
    std::size_t forced = kUnset;
    for (std::size_t b = 0; b < K_; ++b)
      if (z_lo_[b * N_ + l]) forced = b;
    for (std::size_t b = 0; b < K_; ++b) {
      if (!z_hi_[b * N_ + l] || (forced != kUnset && b != forced)) continue;
      const auto t = top_[b];
      if (t == kNone) continue;
      if (t != kUnset && rank_[b * N_ + l] < rank_[b * N_ + t]) continue;
      mask |= std::uint64_t{1} << b;
    }
    if (forced == kUnset) mask |= std::uint64_t{1} << K_;
    return mask != 0;
  }

  /// Borrowers whose row with lender l is already known to need l's side:
  /// fixed borrowers ranking l above their top, and open borrowers with no
  /// available lender ranked above l.
  std::uint32_t exposure(std::size_t l) const {
    std::uint32_t e = 0;
    for (std::size_t b = 0; b < K_; ++b) {
      const auto t = top_[b];
      const bool exposed = t == kUnset ? rank_[b * N_ + l] <= first_open_[b]
                                       : t == kNone || rank_[b * N_ + l] < rank_[b * N_ + t];
      if (exposed) e |= std::uint32_t{1} << b;
    }
    return e;
  }

  /// Value of lender l taking choice c (K = unmatched) given its exposure.
  double choice_value(std::size_t l, std::size_t c, std::uint32_t exposed) const {
    double v = value_[l * (K_ + 1) + c];
    std::uint32_t charged = exposed & ~covered_by_[l * (K_ + 1) + c];
    if (c < K_) charged &= ~(std::uint32_t{1} << c);
    while (charged != 0) {
      const auto b = static_cast<std::size_t>(std::countr_zero(charged));
      v -= penalty_[b * N_ + l];
      charged &= charged - 1;
    }
    return v;
  }

  bool out_of_time() {
    if ((++outcome_.nodes & 255U) == 0 && expired_()) outcome_.timed_out = true;
    return outcome_.timed_out;
  }

  bool cannot_improve(double bound) const {
    return incumbent_->has() && bound <= incumbent_->value() + incumbent_->tolerance();
  }

  /// Fills opt_value_ and best_ for every lender; false when one has no choice.
  bool evaluate_options() {
    first_open_.assign(K_, N_);
    for (std::size_t b = 0; b < K_; ++b) {
      if (top_[b] != kUnset) continue;
      for (std::size_t r = 0; r < N_; ++r) {
        const auto l = order_[b * N_ + r];
        if (top_of_[l] == kNone && z_hi_[b * N_ + l]) {
          first_open_[b] = r;
          break;
        }
      }
    }
    for (std::size_t l = 0; l < N_; ++l) {
      std::uint64_t mask;
      if (!lender_options(l, mask)) return false;
      allowed_[l] = static_cast<std::uint32_t>(mask & ((std::uint64_t{1} << K_) - 1));
      const auto exposed = exposure(l);
      double best = -lp::kInfinity;
      for (std::size_t c = 0; c <= K_; ++c) {
        double v = -lp::kInfinity;
        if ((mask >> c) & 1U) {
          v = choice_value(l, c, exposed);
          best = std::max(best, v);
        }
        opt_value_[l * (K_ + 1) + c] = v;
      }
      best_[l] = best;
    }
    return true;
  }

  /// Funding rows moved into the objective with multipliers mu >= 0:
  ///   L(mu) = sum_l max_c (v_lc + mu_c a_cl) - sum_b mu_b need_b
  /// bounds the best value of `lenders` for every mu. A few sweeps of exact
  /// coordinate descent tighten `mu` in place.
  double lagrangian(std::span<const std::size_t> lenders, const std::vector<double>& fixed, std::vector<double>& mu,
                    std::size_t sweeps) {
    for (std::size_t b = 0; b < K_; ++b) need_[b] = fund_rhs_[b] - fixed[b];
    for (std::size_t sweep = 0; sweep < sweeps; ++sweep) {
      for (std::size_t b = 0; b < K_; ++b) {
        // L along mu_b is convex piecewise linear; stop where its slope
        // (funding collected by b minus need) turns non-negative.
        double collected = 0.0;
        items_.clear();
        for (auto l : lenders) {
          const double v = opt_value_[l * (K_ + 1) + b];
          const double a = fund_coef_[b * N_ + l];
          if (v == -lp::kInfinity || a <= 0.0) continue;
          double other = -lp::kInfinity;
          for (std::size_t c = 0; c <= K_; ++c) {
            if (c == b) continue;
            const double w = opt_value_[l * (K_ + 1) + c];
            if (w == -lp::kInfinity) continue;
            other = std::max(other, c < K_ ? w + mu[c] * fund_coef_[c * N_ + l] : w);
          }
          const double cross = other == -lp::kInfinity ? -lp::kInfinity : (other - v) / a;
          if (cross <= 0.0) collected += a;
          else items_.push_back({cross, a});
        }
        const double slack = 1e-9 * std::max(1.0, std::abs(fund_rhs_[b]));
        if (collected >= need_[b] - slack) {
          mu[b] = 0.0;
          continue;
        }
        std::sort(items_.begin(), items_.end());
        double next = lp::kInfinity;
        for (const auto& [cross, a] : items_) {
          collected += a;
          if (collected >= need_[b] - slack) {
            next = cross;
            break;
          }
        }
        if (next == lp::kInfinity) return -lp::kInfinity;
        mu[b] = next;
      }
    }
    double total = 0.0;
    for (auto l : lenders) {
      double best = -lp::kInfinity;
      for (std::size_t c = 0; c <= K_; ++c) {
        const double w = opt_value_[l * (K_ + 1) + c];
        if (w == -lp::kInfinity) continue;
        best = std::max(best, c < K_ ? w + mu[c] * fund_coef_[c * N_ + l] : w);
      }
      total += best;
    }
    for (std::size_t b = 0; b < K_; ++b) total -= mu[b] * need_[b];
    return total;
  }

  /// Every set S of borrowers must be reachable with enough budget: the
  /// remaining requests of S cannot exceed the budgets of lenders able to
  /// serve some member of S. Only applies with uniform funding coefficients.
  bool hall_feasible(std::span<const std::size_t> lenders, const std::vector<double>& fixed) {
    if (!uniform_funding_ || K_ > kHallLimit) return true;
    std::uint32_t short_mask = 0;
    for (std::size_t b = 0; b < K_; ++b) {
      need_[b] = fund_rhs_[b] - fixed[b];
      if (need_[b] > 1e-9 * std::max(1.0, std::abs(fund_rhs_[b]))) short_mask |= std::uint32_t{1} << b;
    }
    if (short_mask == 0) return true;
    const std::size_t full = std::size_t{1} << K_;
    std::fill(inside_.begin(), inside_.begin() + static_cast<std::ptrdiff_t>(full), 0.0);
    double total = 0.0;
    for (auto l : lenders) {
      const std::uint32_t m = allowed_[l] & short_mask;
      if (m == 0) continue;
      inside_[m] += budget_[l];
      total += budget_[l];
    }
    // inside_[T]: budget of lenders that can only serve borrowers in T
    for (std::size_t bit = 1; bit < full; bit <<= 1)
      for (std::size_t T = bit; T < full; T = (T + 1) | bit) inside_[T] += inside_[T ^ bit];
    demand_[0] = 0.0;
    // submasks in increasing order
    for (std::uint32_t S = (0U - short_mask) & short_mask; S != 0; S = (S - short_mask) & short_mask) {
      const auto low = static_cast<std::size_t>(std::countr_zero(S));
      demand_[S] = demand_[S & (S - 1)] + need_[low];
    }
    for (std::uint32_t S = short_mask; S != 0; S = (S - 1) & short_mask) {
      const double reach = total - inside_[short_mask & ~S];
      if (demand_[S] > reach + 1e-9 * std::max(1.0, demand_[S])) return false;
    }
    return true;
  }

  /// Lower bound on the value lost to funding: for each borrower, the cheapest
  /// fractional cover of its remaining request by lenders moved off their best
  /// choice. Costs add over borrowers since each lender serves one of them.
  double funding_loss(std::span<const std::size_t> lenders, const std::vector<double>& fixed) {
    double total = 0.0;
    for (std::size_t b = 0; b < K_; ++b) {
      const double slack = 1e-9 * std::max(1.0, std::abs(fund_rhs_[b]));
      double need = fund_rhs_[b] - fixed[b];
      if (need <= slack) continue;
      items_.clear();
      for (auto l : lenders) {
        const double v = opt_value_[l * (K_ + 1) + b];
        const double q = fund_coef_[b * N_ + l];
        if (v == -lp::kInfinity || q <= 0.0) continue;
        const double loss = best_[l] - v;
        if (loss <= 0.0) need -= q;
        else items_.push_back({loss / q, q});
      }
      if (need <= slack) continue;
      std::sort(items_.begin(), items_.end());
      for (const auto& [ratio, q] : items_) {
        const double take = std::min(q, need);
        total += ratio * take;
        need -= take;
        if (need <= slack) break;
      }
      if (need > slack) return lp::kInfinity;
    }
    return total;
  }

  void outer(std::size_t depth) {
    if (out_of_time()) return;
    if (!evaluate_options()) return;
    zeros_.assign(K_, 0.0);
    if (!hall_feasible(all_, zeros_)) return;
    if (!integer_fundable()) return;
    if (depth == 0 && !incumbent_->has()) seed_incumbent();
    mu_[depth + 1] = mu_[depth];
    double plain = 0.0;
    for (std::size_t l = 0; l < N_; ++l) plain += best_[l];
    double bound = offset_ + plain - funding_loss(all_, zeros_);
    bound = std::min(bound, offset_ + lagrangian(all_, zeros_, mu_[depth + 1], 1));
    if (cannot_improve(bound)) return;
    if (depth == K_) {
      inner_setup();
      return;
    }
    const auto b = borrower_order_[depth];
    for (std::size_t r = 0; r < N_; ++r) {
      const auto l = order_[b * N_ + r];
      if (top_of_[l] != kNone || !z_hi_[b * N_ + l]) continue;
      std::uint64_t mask;
      if (!lender_options(l, mask) || !((mask >> b) & 1U)) continue;
      top_[b] = l;
      top_of_[l] = b;
      outer(depth + 1);
      top_of_[l] = kNone;
      if (outcome_.timed_out) break;
    }
    top_[b] = kNone;
    if (!outcome_.timed_out) outer(depth + 1);
    top_[b] = kUnset;
  }

  struct Choice {
    std::size_t borrower;
    double value;
  };

  void inner_setup() {
    free_.clear();
    options_.assign(N_, {});
    fund_.assign(K_, 0.0);
    short_.assign(K_, 0.0);
    short_reach_.assign(K_, 0.0);
    double base = offset_;
    optimistic_ = 0.0;
    for (std::size_t l = 0; l < N_; ++l) {
      if (top_of_[l] != kNone) {
        const auto b = top_of_[l];
        choice_[l] = b;
        base += opt_value_[l * (K_ + 1) + b];
        fund_[b] += fund_coef_[b * N_ + l];
        short_[b] += kappa_coef_[b * N_ + l];
        continue;
      }
      for (std::size_t c = 0; c <= K_; ++c) {
        const double v = opt_value_[l * (K_ + 1) + c];
        if (v == -lp::kInfinity) continue;
        options_[l].push_back({c, v});
        if (c < K_) short_reach_[c] += kappa_coef_[c * N_ + l];
      }
      std::stable_sort(options_[l].begin(), options_[l].end(),
                       [](const Choice& a, const Choice& b) { return a.value > b.value; });
      optimistic_ += options_[l].front().value;
      free_.push_back(l);
    }
    // Large budgets first: funding decides early.
    std::stable_sort(free_.begin(), free_.end(), [&](std::size_t a, std::size_t b) { return budget_[a] > budget_[b]; });
    inner_mu_ = mu_[K_ + 1];
    items_.reserve(4 * N_);
    inner(0, base);
  }

  /// Whether the funding rows can be met when each lender may serve only the
  /// borrowers in allowed_. Depends on nothing else, so results are cached.
  bool integer_fundable() {
    key_.assign(N_ * 4, '\0');
    for (std::size_t l = 0; l < N_; ++l) std::memcpy(key_.data() + 4 * l, &allowed_[l], 4);
    if (const auto hit = cache_->find(key_)) return *hit;
    sort_fundable_order();
    std::vector<double> got(K_, 0.0);
    const bool ok = fundable_from(0, got);
    // Out of time: answer optimistically and leave the pattern unresolved.
    if (outcome_.timed_out) return true;
    cache_->store(key_, ok);
    return ok;
  }

  void sort_fundable_order() {
    if (fundable_order_.size() == N_) return;
    fundable_order_.resize(N_);
    std::iota(fundable_order_.begin(), fundable_order_.end(), std::size_t{0});
    std::stable_sort(fundable_order_.begin(), fundable_order_.end(),
                     [&](std::size_t a, std::size_t b) { return budget_[a] > budget_[b]; });
  }

  /// First incumbent: a funding witness, with every other lender on its
  /// most valuable open choice.
  void seed_incumbent() {
    sort_fundable_order();
    witness_.assign(N_, kNone);
    std::vector<double> got(K_, 0.0);
    recording_ = true;
    const bool ok = fundable_from(0, got) && !outcome_.timed_out;
    recording_ = false;
    if (!ok) return;
    for (std::size_t l = 0; l < N_; ++l) {
      choice_[l] = witness_[l];
      if (choice_[l] != kNone) continue;
      std::size_t best = K_;
      for (std::size_t b = 0; b < K_; ++b)
        if (((allowed_[l] >> b) & 1U) && value_[l * (K_ + 1) + b] > value_[l * (K_ + 1) + best]) best = b;
      choice_[l] = best;
    }
    offer();
    choice_.assign(N_, kNone);
  }

  bool fundable_from(std::size_t i, std::vector<double>& got) {
    if (out_of_time()) return true;
    bool done = true;
    for (std::size_t b = 0; b < K_ && done; ++b) done = covers(got[b], fund_rhs_[b]);
    if (done) return true;
    if (i == fundable_order_.size()) return false;
    if (!hall_feasible(std::span<const std::size_t>(fundable_order_).subspan(i), got)) return false;
    const auto l = fundable_order_[i];
    // Largest remaining deficit first.
    std::array<std::size_t, 32> cand;
    std::size_t n = 0;
    for (std::size_t b = 0; b < K_; ++b)
      if (((allowed_[l] >> b) & 1U) && !covers(got[b], fund_rhs_[b])) cand[n++] = b;
    std::stable_sort(cand.begin(), cand.begin() + n, [&](std::size_t a, std::size_t b) {
      return fund_rhs_[a] - got[a] > fund_rhs_[b] - got[b];
    });
    for (std::size_t k = 0; k < n; ++k) {
      const auto b = cand[k];
      if (recording_) witness_[l] = b;
      got[b] += fund_coef_[b * N_ + l];
      const bool ok = fundable_from(i + 1, got);
      got[b] -= fund_coef_[b * N_ + l];
      if (ok) return true;
    }
    if (recording_) witness_[l] = kNone;
    return fundable_from(i + 1, got);
  }

  double kappa_floor() const {
    if (kappa_var_ == kUnset) return 0.0;
    double k = kappa_lower_;
    for (std::size_t b = 0; b < K_; ++b) k = std::max(k, kappa_rhs_[b] - short_[b] - short_reach_[b]);
    return k;
  }

  void inner(std::size_t i, double value) {
    if (out_of_time()) return;
    const auto rest = std::span<const std::size_t>(free_).subspan(i);
    if (!hall_feasible(rest, fund_)) return;
    const double loss = funding_loss(rest, fund_);
    if (loss == lp::kInfinity) return;
    const double relaxed = std::min(optimistic_ - loss, lagrangian(rest, fund_, inner_mu_, 0));
    if (cannot_improve(value + relaxed - kappa_weight_ * kappa_floor())) return;
    if (i == free_.size()) {
      offer();
      return;
    }
    const auto l = free_[i];
    const double top_value = options_[l].front().value;
    optimistic_ -= top_value;
    for (const auto& o : options_[l])
      if (o.borrower < K_) short_reach_[o.borrower] -= kappa_coef_[o.borrower * N_ + l];
    bool first = true;
    for (const auto& o : options_[l]) {
      // A worse option is only worth trying for the funding it adds.
      if (!first && (o.borrower == K_ || (kappa_var_ == kUnset && covers(fund_[o.borrower], fund_rhs_[o.borrower]))))
        continue;
      first = false;
      choice_[l] = o.borrower;
      if (o.borrower < K_) {
        fund_[o.borrower] += fund_coef_[o.borrower * N_ + l];
        short_[o.borrower] += kappa_coef_[o.borrower * N_ + l];
      }
      inner(i + 1, value + o.value);
      if (o.borrower < K_) {
        fund_[o.borrower] -= fund_coef_[o.borrower * N_ + l];
        short_[o.borrower] -= kappa_coef_[o.borrower * N_ + l];
      }
      if (outcome_.timed_out) break;
    }
    for (const auto& o : options_[l])
      if (o.borrower < K_) short_reach_[o.borrower] += kappa_coef_[o.borrower * N_ + l];
    optimistic_ += top_value;
    choice_[l] = kNone;
  }

  void offer() {
    std::vector<double> z(K_ * N_, 0.0);
    for (std::size_t l = 0; l < N_; ++l)
      if (choice_[l] < K_) z[choice_[l] * N_ + l] = 1.0;
    auto x = complete(*model_, z);
    if (!x) return;
    const double v = model_->evaluate(*x);
    incumbent_->offer(std::move(*x), v);
  }

  std::size_t K_ = 0, N_ = 0;
  std::size_t kappa_var_ = kUnset;
  double kappa_weight_ = 0.0, kappa_lower_ = 0.0, offset_ = 0.0;
  std::vector<double> value_;  // N x (K + 1), last column is "unmatched"
  std::vector<std::uint8_t> z_lo_, z_hi_;
  std::vector<double> penalty_;
  std::vector<std::uint32_t> cover_;
  std::vector<std::uint32_t> covered_by_;  // N x (K + 1): rows (., l) settled by l taking c
  std::vector<std::size_t> rank_, order_, borrower_order_;
  std::vector<double> fund_coef_, fund_rhs_, kappa_coef_, kappa_rhs_;
  std::vector<double> budget_;  // largest funding coefficient per lender

  const IPModel* model_ = nullptr;
  Incumbent* incumbent_ = nullptr;
  std::function<bool()> expired_;
  Outcome outcome_;
  std::vector<std::size_t> top_, top_of_, choice_, free_, first_open_;
  std::vector<std::vector<Choice>> options_;
  std::vector<double> fund_, short_, short_reach_, zeros_;
  std::vector<double> opt_value_, best_;
  std::vector<std::size_t> all_;
  std::vector<std::pair<double, double>> items_;
  std::vector<double> need_;
  std::vector<double> inside_, demand_;
  std::vector<std::uint32_t> allowed_;  // borrowers open to each lender
  FundingCache local_cache_;
  FundingCache* cache_ = nullptr;
  std::string key_;
  std::vector<std::size_t> fundable_order_;
  std::vector<std::size_t> witness_;
  bool recording_ = false;
  bool uniform_funding_ = false;
  std::vector<std::vector<double>> mu_;
  std::vector<double> inner_mu_;
  double optimistic_ = 0.0;
};

inline SolveResult enumerate(const IPModel& model) {
  SolveResult result;
  const auto nz = model.num_z_vars();
  Incumbent best(nz);
  std::vector<double> z(nz, 0.0);
  const std::uint64_t total = std::uint64_t{1} << nz;
  // counter bit (nz - 1 - j) drives z_j, so the walk is in lexicographic order
  for (std::uint64_t code = 0; code < total; ++code) {
    for (std::size_t j = 0; j < nz; ++j) z[j] = static_cast<double>((code >> (nz - 1 - j)) & 1U);
    ++result.nodes_explored;
    auto x = complete(model, z);
    if (!x) continue;
    const double v = model.evaluate(*x);
    best.offer(std::move(*x), v);
  }
  result.used_enumeration = true;
  if (best.has()) {
    result.status = SolveStatus::kOptimal;
    result.values = best.x();
    result.objective = best.value();
  }
  return result;
}

}  // namespace detail

/// Exact optimum of a 0-1 model.
inline SolveResult solve_ip(const IPModel& model, const SolveOptions& options = {}) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  model.validate();
  const auto nz = model.num_z_vars();
  const bool separable = detail::is_separable(model);

  auto finalize = [&](SolveResult r) {
    if (r.has_solution()) {
      r.objective = model.evaluate(r.values);
      r.matching = detail::to_matching(model, r.values, r.objective);
    }
    r.wall_time = Clock::now() - start;
    return r;
  };

  if (separable && nz <= options.enumeration_limit && nz < 63) return finalize(detail::enumerate(model));

  detail::Incumbent incumbent(nz);
  auto offer_z = [&](const std::vector<double>& z) {
    if (!separable) return;
    auto x = detail::complete(model, z);
    if (!x) return;
    const double v = model.evaluate(*x);
    incumbent.offer(std::move(*x), v);
  };

  if (options.warm_start && options.warm_start->size() == nz) {
    std::vector<double> z(options.warm_start->begin(), options.warm_start->end());
    offer_z(z);
  }

  if (options.ranked_search && separable) {
    if (auto ranked = detail::RankedSearch::recognize(model)) {
      const auto out = ranked->run(
          model, incumbent, [&] { return Clock::now() - start > options.time_limit; }, options.funding_cache);
      SolveResult result;
      result.nodes_explored = out.nodes;
      result.used_ranked_search = true;
      if (incumbent.has()) result.values = incumbent.x();
      if (out.timed_out) result.status = SolveStatus::kTimeLimit;
      else result.status = incumbent.has() ? SolveStatus::kOptimal : SolveStatus::kInfeasible;
      return finalize(std::move(result));
    }
  }

  // Root relaxation tightened by rounds of cover cuts.
  auto relaxed = detail::relaxation(model);
  for (std::size_t round = 0; round < options.cut_rounds; ++round) {
    lp::DualSimplex root(std::make_shared<const lp::Problem>(relaxed));
    if (root.solve() != lp::Status::kOptimal) break;
    auto cuts = detail::separate_cover_cuts(model, root.primal());
    if (cuts.empty()) break;
    for (auto& c : cuts) relaxed.rows.push_back(std::move(c));
  }
  auto problem = std::make_shared<const lp::Problem>(std::move(relaxed));

  struct Node {
    lp::DualSimplex lp;
    double bound;
    std::size_t depth;
    std::size_t id;
  };
  struct NodeOrder {
    bool operator()(const std::shared_ptr<Node>& a, const std::shared_ptr<Node>& b) const {
      if (a->bound != b->bound) return a->bound < b->bound;
      if (a->depth != b->depth) return a->depth < b->depth;
      return a->id > b->id;
    }
  };
  std::priority_queue<std::shared_ptr<Node>, std::vector<std::shared_ptr<Node>>, NodeOrder> open;
  std::size_t next_id = 0;
  SolveResult result;

  // Ties with the incumbent are not pursued further.
  auto cannot_improve = [&](double bound) {
    return incumbent.has() && bound <= incumbent.value() + incumbent.tolerance();
  };

  auto solve_node = [&](lp::DualSimplex& simplex) {
    auto status = simplex.solve();
    if (status == lp::Status::kIterationLimit) {
      simplex.reset_basis();
      status = simplex.solve();
    }
    if (status == lp::Status::kIterationLimit) throw std::runtime_error("ip: LP relaxation did not converge");
    return status;
  };

  detail::CoveringSearch covering(model);
  std::vector<double> node_lower(nz), node_upper(nz), found;
  // Nodes whose fixings leave the covering rows unsatisfiable are dropped
  // before their relaxation is solved.
  auto covering_allows = [&](const lp::DualSimplex& simplex) {
    if (!covering.active()) return true;
    for (std::size_t j = 0; j < nz; ++j) {
      node_lower[j] = simplex.lower(j);
      node_upper[j] = simplex.upper(j);
    }
    const auto outcome = covering.find(node_lower, node_upper, options.covering_budget, found);
    if (outcome == detail::CoveringSearch::Outcome::kInfeasible) return false;
    if (outcome == detail::CoveringSearch::Outcome::kFeasible) offer_z(found);
    return true;
  };

  auto push = [&](lp::DualSimplex simplex, std::size_t depth, [[maybe_unused]] double parent_bound) {
    if (!covering_allows(simplex)) return;
    const auto status = solve_node(simplex);
    if (status != lp::Status::kOptimal) return;
    const double bound = simplex.objective() + model.objective_offset;
    assert(bound <= parent_bound + 1e-6 * std::max(1.0, std::abs(parent_bound)));
    if (cannot_improve(bound)) return;
    open.push(std::make_shared<Node>(Node{std::move(simplex), bound, depth, next_id++}));
  };

  push(lp::DualSimplex(problem), 0, std::numeric_limits<double>::infinity());

  bool timed_out = false;
  while (!open.empty()) {
    if (Clock::now() - start > options.time_limit) {
      timed_out = true;
      break;
    }
    auto node = open.top();
    open.pop();
    if (cannot_improve(node->bound)) continue;
    ++result.nodes_explored;

    // Reduced-cost fixing: a binary whose move off its bound cannot lift the
    // bound above the incumbent keeps that bound in the whole subtree.
    if (incumbent.has()) {
      for (std::size_t j = 0; j < model.vars.size(); ++j) {
        if (!model.vars[j].integer || node->lp.lower(j) == node->lp.upper(j)) continue;
        const double rc = node->lp.reduced_cost(j);
        const double width = node->lp.upper(j) - node->lp.lower(j);
        if (node->lp.at_lower(j) && cannot_improve(node->bound + rc * width))
          node->lp.set_bounds(j, node->lp.lower(j), node->lp.lower(j));
        else if (node->lp.at_upper(j) && cannot_improve(node->bound - rc * width))
          node->lp.set_bounds(j, node->lp.upper(j), node->lp.upper(j));
      }
    }

    const auto x = node->lp.primal();
    // Branch on the most fractional assignment variable, then on the rest.
    std::size_t branch = model.vars.size();
    double best_gap = 1e-6;
    for (std::size_t pass = 0; pass < 2 && branch == model.vars.size(); ++pass) {
      const std::size_t lo = pass == 0 ? 0 : nz;
      const std::size_t hi = pass == 0 ? nz : model.vars.size();
      for (std::size_t j = lo; j < hi; ++j) {
        if (!model.vars[j].integer) continue;
        const double frac = x[j] - std::floor(x[j]);
        const double gap = std::min(frac, 1.0 - frac);
        if (gap > best_gap) {
          best_gap = gap;
          branch = j;
        }
      }
    }

    // Rounded assignment as a cheap incumbent.
    {
      std::vector<double> z(nz);
      for (std::size_t j = 0; j < nz; ++j) z[j] = x[j] > 0.5 ? 1.0 : 0.0;
      offer_z(z);
    }

    if (branch == model.vars.size()) {
      std::vector<double> sol(x.begin(), x.end());
      for (std::size_t j = 0; j < sol.size(); ++j)
        if (model.vars[j].integer) sol[j] = std::round(sol[j]);
      if (separable) {
        std::vector<double> z(sol.begin(), sol.begin() + static_cast<std::ptrdiff_t>(nz));
        offer_z(z);
      } else if (model.satisfies(sol, 1e-7)) {
        const double v = model.evaluate(sol);
        assert(v <= node->bound + 1e-6 * std::max(1.0, std::abs(node->bound)));
        incumbent.offer(std::move(sol), v);
      }
      continue;
    }

    const double v = x[branch];
    for (int side = 1; side >= 0; --side) {
      lp::DualSimplex child = node->lp;
      if (side == 1) child.set_bounds(branch, std::ceil(v), child.upper(branch));
      else child.set_bounds(branch, child.lower(branch), std::floor(v));
      push(std::move(child), node->depth + 1, node->bound);
    }
  }

  if (incumbent.has()) {
    result.values = incumbent.x();
    result.status = timed_out ? SolveStatus::kTimeLimit : SolveStatus::kOptimal;
  } else {
    result.status = timed_out ? SolveStatus::kTimeLimit : SolveStatus::kInfeasible;
  }
  return finalize(std::move(result));
}

/// Writes the model in CPLEX LP text format.
inline void write_lp_format(const IPModel& model, std::ostream& out) {
  out << std::setprecision(17);
  auto term = [&](double a, const std::string& name, bool first) {
    if (a < 0.0) out << " - " << -a << ' ' << name;
    else out << (first ? " " : " + ") << a << ' ' << name;
  };
  out << "\\ objective offset " << model.objective_offset << "\nMaximize\n obj:";
  bool first = true;
  for (const auto& v : model.vars) {
    if (v.objective == 0.0) continue;
    term(v.objective, v.name, first);
    first = false;
  }
  if (first) out << " 0 " << model.vars.front().name;
  out << "\nSubject To\n";
  for (const auto& c : model.constraints) {
    out << ' ' << c.name << ':';
    for (std::size_t k = 0; k < c.index.size(); ++k) term(c.coef[k], model.vars[c.index[k]].name, k == 0);
    if (c.index.empty()) out << " 0 " << model.vars.front().name;
    out << (c.sense == lp::Sense::kLessEqual ? " <= " : c.sense == lp::Sense::kGreaterEqual ? " >= " : " = ") << c.rhs
        << '\n';
  }
  out << "Bounds\n";
  for (const auto& v : model.vars) {
    if (v.integer && v.lower == 0.0 && v.upper == 1.0) continue;
    out << ' ' << v.lower << " <= " << v.name << " <= ";
    if (std::isinf(v.upper)) out << "+inf\n";
    else out << v.upper << '\n';
  }
  out << "Binaries\n";
  for (const auto& v : model.vars)
    if (v.integer) out << ' ' << v.name << '\n';
  out << "End\n";
}

}  // namespace p2pmatch
