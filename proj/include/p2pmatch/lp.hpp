#pragma once

// Bounded-variable dual simplex over a dense explicit basis inverse.
//
// Rows are stored as A x - s = 0 with one slack per row whose bounds carry the
// right-hand side, so every column (structural or slack) is a bounded variable
// and branching only ever edits bounds. A basis that is dual feasible stays
// dual feasible under bound changes, which is what makes warm starts in
// branch-and-bound cheap.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

namespace p2pmatch::lp {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

enum class Sense { kLessEqual, kGreaterEqual, kEqual };

struct Row {
  std::vector<std::size_t> index;
  std::vector<double> value;
  Sense sense = Sense::kLessEqual;
  double rhs = 0.0;
};

/// maximize objective . x  subject to rows, lower <= x <= upper.
struct Problem {
  std::vector<double> objective;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<Row> rows;

  std::size_t num_vars() const { return objective.size(); }
  std::size_t num_rows() const { return rows.size(); }
};

enum class Status { kOptimal, kInfeasible, kUnbounded, kIterationLimit };

class DualSimplex {
 public:
  explicit DualSimplex(std::shared_ptr<const Problem> problem) : problem_(std::move(problem)) {
    build_columns();
    reset_basis();
  }

  /// Tighten or relax the bounds of structural variable j.
  void set_bounds(std::size_t j, double lower, double upper) {
    assert(j < n_);
    lo_[j] = lower;
    hi_[j] = upper;
    artificial_lo_[j] = artificial_hi_[j] = false;
  }

  double lower(std::size_t j) const { return lo_[j]; }
  double upper(std::size_t j) const { return hi_[j]; }

  /// Back to the all-slack basis (bounds are kept).
  void reset_basis() {
    head_.resize(m_);
    state_.assign(n_ + m_, State::kLower);
    for (std::size_t i = 0; i < m_; ++i) {
      head_[i] = n_ + i;
      state_[n_ + i] = State::kBasic;
    }
    binv_.assign(m_ * m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) binv_[i * m_ + i] = -1.0;
    pivots_since_refactor_ = 0;
  }

  Status solve(std::size_t max_iterations = 0) {
    if (max_iterations == 0) max_iterations = 50 * (n_ + m_) + 1000;
    make_dual_feasible();
    compute_primal();
    bool fresh = true;
    for (std::size_t iter = 0; iter < max_iterations; ++iter) {
      // Leaving row: largest bound violation among basic variables.
      std::size_t r = m_;
      double worst = kPrimalTol;
      bool below = false;
      for (std::size_t i = 0; i < m_; ++i) {
        const std::size_t j = head_[i];
        const double v = x_[j];
        if (v < lo_[j] - worst) {
          worst = lo_[j] - v;
          r = i;
          below = true;
        } else if (v > hi_[j] + worst) {
          worst = v - hi_[j];
          r = i;
          below = false;
        }
      }
      if (r == m_) {
        if (!fresh) {
          // Confirm optimality on values recomputed from the basis inverse.
          compute_primal();
          compute_duals();
          fresh = true;
          continue;
        }
        ++iterations_;
        return finish();
      }
      fresh = false;

      // Pivot row alpha_r = e_r^T B^-1 A over nonbasic columns.
      const double* rho = &binv_[r * m_];
      std::size_t entering = n_ + m_;
      double theta_max = kInfinity;
      for (std::size_t j = 0; j < n_ + m_; ++j) {
        if (state_[j] == State::kBasic || lo_[j] == hi_[j]) {
          alpha_row_[j] = 0.0;
          continue;
        }
        const double a = column_dot(j, rho);
        alpha_row_[j] = a;
        if (!is_candidate(j, a, below)) continue;
        theta_max = std::min(theta_max, (std::abs(d_[j]) + kDualTol) / std::abs(a));
      }
      double best_alpha = 0.0;
      for (std::size_t j = 0; j < n_ + m_; ++j) {
        if (state_[j] == State::kBasic || lo_[j] == hi_[j]) continue;
        const double a = alpha_row_[j];
        if (!is_candidate(j, a, below)) continue;
        if (std::abs(d_[j]) / std::abs(a) <= theta_max && std::abs(a) > best_alpha) {
          best_alpha = std::abs(a);
          entering = j;
        }
      }
      if (entering == n_ + m_) {
        ++iterations_;
        return Status::kInfeasible;
      }

      const std::size_t leaving = head_[r];
      const double target = below ? lo_[leaving] : hi_[leaving];
      const double alpha_q = alpha_row_[entering];

      // Dual update: the entering reduced cost drops to zero.
      const double theta_d = d_[entering] / alpha_q;
      for (std::size_t j = 0; j < n_ + m_; ++j) {
        if (state_[j] == State::kBasic || alpha_row_[j] == 0.0) continue;
        d_[j] -= theta_d * alpha_row_[j];
      }
      d_[entering] = 0.0;
      d_[leaving] = -theta_d;

      // Primal update along B^-1 a_q; the leaving variable lands on its bound.
      const double step = (x_[leaving] - target) / alpha_q;
      compute_column(entering);
      for (std::size_t i = 0; i < m_; ++i) x_[head_[i]] -= step * col_[i];
      x_[entering] += step;
      x_[leaving] = target;

      state_[leaving] = below ? State::kLower : State::kUpper;
      if (pivot(r, entering)) {
        compute_primal();
        compute_duals();
        fresh = true;
      }
      ++iterations_;
    }
    return Status::kIterationLimit;
  }

  /// Objective in the maximisation sense of the original problem.
  double objective() const {
    double value = 0.0;
    for (std::size_t j = 0; j < n_; ++j) value += problem_->objective[j] * x_[j];
    return value;
  }

  std::span<const double> primal() const { return {x_.data(), n_}; }

  /// Rate of change of the objective (maximisation sense) when nonbasic
  /// variable j moves away from its bound; zero for basic variables.
  double reduced_cost(std::size_t j) const { return state_[j] == State::kBasic ? 0.0 : -d_[j]; }
  bool at_lower(std::size_t j) const { return state_[j] == State::kLower && !artificial_lo_[j]; }
  bool at_upper(std::size_t j) const { return state_[j] == State::kUpper && !artificial_hi_[j]; }
  std::size_t iterations() const { return iterations_; }
  std::size_t num_vars() const { return n_; }

 private:
  enum class State : unsigned char { kBasic, kLower, kUpper, kZero };

  static constexpr double kPrimalTol = 1e-9;
  static constexpr double kDualTol = 1e-9;
  static constexpr double kPivotTol = 1e-9;
  static constexpr double kArtificialBound = 1e7;
  static constexpr std::size_t kRefactorInterval = 64;

  void build_columns() {
    const auto& p = *problem_;
    n_ = p.num_vars();
    m_ = p.num_rows();
    if (p.lower.size() != n_ || p.upper.size() != n_) {
      throw std::invalid_argument("lp: bound vectors do not match variable count");
    }
    std::vector<std::size_t> counts(n_, 0);
    for (const auto& row : p.rows) {
      for (std::size_t k = 0; k < row.index.size(); ++k) {
        if (row.index[k] >= n_) throw std::invalid_argument("lp: row references undeclared variable");
        ++counts[row.index[k]];
      }
    }
    col_start_.assign(n_ + 1, 0);
    for (std::size_t j = 0; j < n_; ++j) col_start_[j + 1] = col_start_[j] + counts[j];
    col_row_.resize(col_start_[n_]);
    col_val_.resize(col_start_[n_]);
    std::vector<std::size_t> fill(col_start_.begin(), col_start_.end() - 1);
    for (std::size_t i = 0; i < m_; ++i) {
      const auto& row = p.rows[i];
      for (std::size_t k = 0; k < row.index.size(); ++k) {
        const auto j = row.index[k];
        col_row_[fill[j]] = i;
        col_val_[fill[j]] = row.value[k];
        ++fill[j];
      }
    }
    lo_.assign(n_ + m_, 0.0);
    hi_.assign(n_ + m_, 0.0);
    cost_.assign(n_ + m_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
      lo_[j] = p.lower[j];
      hi_[j] = p.upper[j];
      cost_[j] = -p.objective[j];
    }
    for (std::size_t i = 0; i < m_; ++i) {
      const auto& row = p.rows[i];
      switch (row.sense) {
        case Sense::kLessEqual: lo_[n_ + i] = -kInfinity; hi_[n_ + i] = row.rhs; break;
        case Sense::kGreaterEqual: lo_[n_ + i] = row.rhs; hi_[n_ + i] = kInfinity; break;
        case Sense::kEqual: lo_[n_ + i] = hi_[n_ + i] = row.rhs; break;
      }
    }
    artificial_lo_.assign(n_ + m_, false);
    artificial_hi_.assign(n_ + m_, false);
    x_.assign(n_ + m_, 0.0);
    d_.assign(n_ + m_, 0.0);
    alpha_row_.assign(n_ + m_, 0.0);
  }

  double column_dot(std::size_t j, const double* v) const {
    if (j >= n_) return -v[j - n_];
    double s = 0.0;
    for (std::size_t k = col_start_[j]; k < col_start_[j + 1]; ++k) s += col_val_[k] * v[col_row_[k]];
    return s;
  }

  bool is_candidate(std::size_t j, double a, bool below) const {
    if (std::abs(a) <= kPivotTol) return false;
    switch (state_[j]) {
      case State::kLower: return below ? a < 0.0 : a > 0.0;
      case State::kUpper: return below ? a > 0.0 : a < 0.0;
      case State::kZero: return true;
      case State::kBasic: return false;
    }
    return false;
  }

  double nonbasic_value(std::size_t j) const {
    switch (state_[j]) {
      case State::kLower: return artificial_lo_[j] ? -kArtificialBound : lo_[j];
      case State::kUpper: return artificial_hi_[j] ? kArtificialBound : hi_[j];
      default: return 0.0;
    }
  }

  void compute_primal() {
    rhs_.assign(m_, 0.0);
    for (std::size_t j = 0; j < n_ + m_; ++j) {
      if (state_[j] == State::kBasic) continue;
      const double v = nonbasic_value(j);
      x_[j] = v;
      if (v == 0.0) continue;
      if (j >= n_) {
        rhs_[j - n_] += v;  // slack column is -e_i, moved to the right-hand side
      } else {
        for (std::size_t k = col_start_[j]; k < col_start_[j + 1]; ++k) rhs_[col_row_[k]] -= col_val_[k] * v;
      }
    }
    for (std::size_t i = 0; i < m_; ++i) {
      double s = 0.0;
      const double* row = &binv_[i * m_];
      for (std::size_t k = 0; k < m_; ++k) s += row[k] * rhs_[k];
      x_[head_[i]] = s;
    }
  }

  void compute_duals() {
    y_.assign(m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) {
      const double c = cost_[head_[i]];
      if (c == 0.0) continue;
      const double* row = &binv_[i * m_];
      for (std::size_t k = 0; k < m_; ++k) y_[k] += c * row[k];
    }
    for (std::size_t j = 0; j < n_ + m_; ++j) {
      d_[j] = state_[j] == State::kBasic ? 0.0 : cost_[j] - column_dot(j, y_.data());
    }
  }

  // Place every nonbasic variable at the bound its reduced cost asks for;
  // a missing bound is replaced by a large artificial one.
  void make_dual_feasible() {
    compute_duals();
    for (std::size_t j = 0; j < n_ + m_; ++j) {
      if (state_[j] == State::kBasic) continue;
      artificial_lo_[j] = artificial_hi_[j] = false;
      const bool has_lo = std::isfinite(lo_[j]);
      const bool has_hi = std::isfinite(hi_[j]);
      if (has_lo && has_hi && lo_[j] == hi_[j]) {
        state_[j] = State::kLower;
        continue;
      }
      if (d_[j] > kDualTol) {
        state_[j] = State::kLower;
        artificial_lo_[j] = !has_lo;
      } else if (d_[j] < -kDualTol) {
        state_[j] = State::kUpper;
        artificial_hi_[j] = !has_hi;
      } else {
        // Zero reduced cost: any finite bound will do, prefer the current one.
        const bool keep = (state_[j] == State::kLower && has_lo) || (state_[j] == State::kUpper && has_hi);
        if (!keep) state_[j] = has_lo ? State::kLower : has_hi ? State::kUpper : State::kZero;
      }
    }
  }

  Status finish() {
    for (std::size_t j = 0; j < n_ + m_; ++j) {
      if (state_[j] == State::kBasic) continue;
      if (artificial_lo_[j] || artificial_hi_[j]) return Status::kUnbounded;
    }
    return Status::kOptimal;
  }

  // col_ = B^-1 a_q
  void compute_column(std::size_t q) {
    col_.assign(m_, 0.0);
    if (q >= n_) {
      for (std::size_t i = 0; i < m_; ++i) col_[i] = -binv_[i * m_ + (q - n_)];
      return;
    }
    for (std::size_t k = col_start_[q]; k < col_start_[q + 1]; ++k) {
      const double a = col_val_[k];
      const std::size_t row = col_row_[k];
      for (std::size_t i = 0; i < m_; ++i) col_[i] += binv_[i * m_ + row] * a;
    }
  }

  // Basis change using col_ from compute_column(q). Returns true when the
  // inverse was rebuilt from scratch.
  bool pivot(std::size_t r, std::size_t q) {
    const double p = col_[r];
    double* pivot_row = &binv_[r * m_];
    for (std::size_t k = 0; k < m_; ++k) pivot_row[k] /= p;
    for (std::size_t i = 0; i < m_; ++i) {
      if (i == r || col_[i] == 0.0) continue;
      const double f = col_[i];
      double* row = &binv_[i * m_];
      for (std::size_t k = 0; k < m_; ++k) row[k] -= f * pivot_row[k];
    }
    head_[r] = q;
    state_[q] = State::kBasic;
    if (++pivots_since_refactor_ >= kRefactorInterval) {
      refactor();
      return true;
    }
    return false;
  }

  // Rebuild B^-1 from the basis head by Gauss-Jordan with partial pivoting.
  // A numerically singular column is swapped for the slack of its row.
  void refactor() {
    pivots_since_refactor_ = 0;
    std::vector<double> basis(m_ * m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) {
      const std::size_t j = head_[i];
      if (j >= n_) {
        basis[(j - n_) * m_ + i] = -1.0;
      } else {
        for (std::size_t k = col_start_[j]; k < col_start_[j + 1]; ++k) basis[col_row_[k] * m_ + i] = col_val_[k];
      }
    }
    std::vector<double> inv(m_ * m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) inv[i * m_ + i] = 1.0;
    std::vector<std::size_t> row_of(m_);
    for (std::size_t i = 0; i < m_; ++i) row_of[i] = i;
    for (std::size_t c = 0; c < m_; ++c) {
      std::size_t best = c;
      for (std::size_t r = c + 1; r < m_; ++r)
        if (std::abs(basis[r * m_ + c]) > std::abs(basis[best * m_ + c])) best = r;
      if (std::abs(basis[best * m_ + c]) < 1e-11) {
        throw std::runtime_error("lp: singular basis during refactorization");
      }
      if (best != c) {
        for (std::size_t k = 0; k < m_; ++k) {
          std::swap(basis[best * m_ + k], basis[c * m_ + k]);
          std::swap(inv[best * m_ + k], inv[c * m_ + k]);
        }
      }
      const double p = basis[c * m_ + c];
      for (std::size_t k = 0; k < m_; ++k) {
        basis[c * m_ + k] /= p;
        inv[c * m_ + k] /= p;
      }
      for (std::size_t r = 0; r < m_; ++r) {
        if (r == c) continue;
        const double f = basis[r * m_ + c];
        if (f == 0.0) continue;
        for (std::size_t k = 0; k < m_; ++k) {
          basis[r * m_ + k] -= f * basis[c * m_ + k];
          inv[r * m_ + k] -= f * inv[c * m_ + k];
        }
      }
    }
    // inv = B^-1 with rows indexed by basis position.
    binv_ = std::move(inv);
  }

  std::shared_ptr<const Problem> problem_;
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::vector<std::size_t> col_start_;
  std::vector<std::size_t> col_row_;
  std::vector<double> col_val_;
  std::vector<double> lo_, hi_, cost_;
  std::vector<bool> artificial_lo_, artificial_hi_;
  std::vector<std::size_t> head_;
  std::vector<State> state_;
  std::vector<double> binv_;
  std::vector<double> x_, d_, y_, rhs_, col_, alpha_row_;
  std::size_t pivots_since_refactor_ = 0;
  std::size_t iterations_ = 0;
};

}  // namespace p2pmatch::lp
