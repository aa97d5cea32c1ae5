#pragma once

// Minimax machinery for the auxiliary zero-sum games: pure lower/upper
// values, per-follower guarantee levels, and mixed-strategy matrix game
// values. Orientation throughout: rows are leader actions a0 (minimizing),
// columns are follower actions (maximizing). Ties break to the smallest
// index everywhere.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "istack/common.hpp"
#include "istack/game.hpp"

namespace istack {

struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c, double v = 0.0)
      : rows(r), cols(c), a(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), v) {}

  double& at(int i, int j) {
    return a[static_cast<std::size_t>(i) * static_cast<std::size_t>(cols) +
             static_cast<std::size_t>(j)];
  }
  double at(int i, int j) const {
    return a[static_cast<std::size_t>(i) * static_cast<std::size_t>(cols) +
             static_cast<std::size_t>(j)];
  }
};

struct ValueIndex {
  double value = 0.0;
  int index = 0;
};

// V- = max over columns of the column minimum; index is the maximizing
// column (smallest on ties).
inline ValueIndex lower_value(const Mat& J) {
  if (J.rows <= 0 || J.cols <= 0) throw Error("lower_value: empty matrix");
  ValueIndex best{-std::numeric_limits<double>::infinity(), 0};
  for (int j = 0; j < J.cols; ++j) {
    double col_min = J.at(0, j);
    for (int i = 1; i < J.rows; ++i) col_min = std::min(col_min, J.at(i, j));
    if (col_min > best.value) best = {col_min, j};
  }
  return best;
}

// V+ = min over rows of the row maximum; index is the minimizing row.
inline ValueIndex upper_value(const Mat& J) {
  if (J.rows <= 0 || J.cols <= 0) throw Error("upper_value: empty matrix");
  ValueIndex best{std::numeric_limits<double>::infinity(), 0};
  for (int i = 0; i < J.rows; ++i) {
    double row_max = J.at(i, 0);
    for (int j = 1; j < J.cols; ++j) row_max = std::max(row_max, J.at(i, j));
    if (row_max < best.value) best = {row_max, i};
  }
  return best;
}

// Smallest-index argmin of column j.
inline int column_argmin(const Mat& J, int j) {
  int arg = 0;
  for (int i = 1; i < J.rows; ++i)
    if (J.at(i, j) < J.at(arg, j)) arg = i;
  return arg;
}

// Guarantee level of each follower at a fixed profile: K_i = min over a0 of
// J_i(a0, profile).
inline std::vector<double> guarantee_values(const StaticGame& game,
                                            std::span<const int> profile) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(game.n_followers));
  for (int i = 1; i <= game.n_followers; ++i) {
    double best = game.payoff(i, 0, profile);
    for (int a0 = 1; a0 < game.grids[0].size(); ++a0)
      best = std::min(best, game.payoff(i, a0, profile));
    out.push_back(best);
  }
  return out;
}

// max over follower i's actions of min over leader actions of J_i, with the
// remaining followers frozen at `profile` (entry i-1 is ignored).
inline ValueIndex per_follower_lower_value(const StaticGame& game, int follower,
                                           std::span<const int> profile) {
  std::vector<int> p(profile.begin(), profile.end());
  ValueIndex best{-std::numeric_limits<double>::infinity(), 0};
  int leader_size = game.grids[0].size();
  int own_size = game.grids[static_cast<std::size_t>(follower)].size();
  for (int ai = 0; ai < own_size; ++ai) {
    p[static_cast<std::size_t>(follower) - 1] = ai;
    double inner = game.payoff(follower, 0, p);
    for (int a0 = 1; a0 < leader_size; ++a0)
      inner = std::min(inner, game.payoff(follower, a0, p));
    if (inner > best.value) best = {inner, ai};
  }
  return best;
}

enum class MixedMethod { kExactLp, kFictitiousPlay };

struct MatrixGameSolution {
  double value = 0.0;
  std::vector<double> minimizer_mixed;  // over rows (leader)
  std::vector<double> maximizer_mixed;  // over columns (follower)
  double duality_gap = 0.0;
  bool converged = true;
  long iterations = 0;
  double lower_bound = 0.0;  // min_i (A y)_i, the maximizer's guarantee
  double upper_bound = 0.0;  // max_j (x^T A)_j, the minimizer's guarantee
};

namespace detail {

// Dense tableau simplex for max 1'p subject to M p <= 1, p >= 0, where
// M = (A + shift)^T has strictly positive entries. Returns the primal p and
// the dual q read from the objective row under the slack columns. Dantzig
// pivoting with a Bland fallback after a pivot budget, so it terminates.
struct SimplexResult {
  std::vector<double> p;
  std::vector<double> q;
  long pivots = 0;
};

inline SimplexResult matrix_game_simplex(const Mat& A, double shift) {
  const int m = A.rows;  // variables
  const int n = A.cols;  // constraints
  const int width = m + n + 1;
  std::vector<double> tab(static_cast<std::size_t>(n + 1) *
                          static_cast<std::size_t>(width));
  auto T = [&](int r, int c) -> double& {
    return tab[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) +
               static_cast<std::size_t>(c)];
  };
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < m; ++i) T(j, i) = A.at(i, j) + shift;
    T(j, m + j) = 1.0;
    T(j, width - 1) = 1.0;
  }
  for (int i = 0; i < m; ++i) T(n, i) = -1.0;

  std::vector<int> basis(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) basis[static_cast<std::size_t>(j)] = m + j;

  const long bland_after = 16L * (m + n) + 64;
  const long hard_cap = 4096L * (m + n) + 4096;
  long pivots = 0;
  for (;;) {
    int enter = -1;
    if (pivots < bland_after) {
      double most_negative = -1e-12;
      for (int c = 0; c < m + n; ++c)
        if (T(n, c) < most_negative) {
          most_negative = T(n, c);
          enter = c;
        }
    } else {
      for (int c = 0; c < m + n; ++c)
        if (T(n, c) < -1e-12) {
          enter = c;
          break;
        }
    }
    if (enter < 0) break;  // optimal

    int leave = -1;
    double best_ratio = 0.0;
    for (int r = 0; r < n; ++r) {
      double coef = T(r, enter);
      if (coef > 1e-12) {
        double ratio = T(r, width - 1) / coef;
        if (leave < 0 || ratio < best_ratio - 1e-15 ||
            (std::fabs(ratio - best_ratio) <= 1e-15 &&
             basis[static_cast<std::size_t>(r)] <
                 basis[static_cast<std::size_t>(leave)])) {
          best_ratio = ratio;
          leave = r;
        }
      }
    }
    if (leave < 0) throw Error("matrix game LP is unbounded (shift failed)");

    double pivot = T(leave, enter);
    for (int c = 0; c < width; ++c) T(leave, c) /= pivot;
    for (int r = 0; r <= n; ++r) {
      if (r == leave) continue;
      double factor = T(r, enter);
      if (factor == 0.0) continue;
      for (int c = 0; c < width; ++c) T(r, c) -= factor * T(leave, c);
    }
    basis[static_cast<std::size_t>(leave)] = enter;
    if (++pivots > hard_cap) throw Error("matrix game LP failed to terminate");
  }

  SimplexResult res;
  res.pivots = pivots;
  res.p.assign(static_cast<std::size_t>(m), 0.0);
  for (int r = 0; r < n; ++r) {
    int b = basis[static_cast<std::size_t>(r)];
    if (b < m) res.p[static_cast<std::size_t>(b)] = T(r, width - 1);
  }
  res.q.assign(static_cast<std::size_t>(n), 0.0);
  for (int j = 0; j < n; ++j) res.q[static_cast<std::size_t>(j)] = T(n, m + j);
  return res;
}

inline void game_bounds(const Mat& A, const std::vector<double>& x,
                        const std::vector<double>& y, double& lower,
                        double& upper) {
  upper = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < A.cols; ++j) {
    double v = 0.0;
    for (int i = 0; i < A.rows; ++i)
      v += x[static_cast<std::size_t>(i)] * A.at(i, j);
    upper = std::max(upper, v);
  }
  lower = std::numeric_limits<double>::infinity();
  for (int i = 0; i < A.rows; ++i) {
    double v = 0.0;
    for (int j = 0; j < A.cols; ++j)
      v += A.at(i, j) * y[static_cast<std::size_t>(j)];
    lower = std::min(lower, v);
  }
}

inline MatrixGameSolution mixed_value_lp(const Mat& A) {
  double lo = A.a[0];
  for (double v : A.a) lo = std::min(lo, v);
  double shift = 1.0 - lo;
  SimplexResult s = matrix_game_simplex(A, shift);

  double sum_p = 0.0, sum_q = 0.0;
  for (double v : s.p) sum_p += v;
  for (double v : s.q) sum_q += v;
  if (!(sum_p > 0.0) || !(sum_q > 0.0))
    throw Error("matrix game LP returned a degenerate solution");

  MatrixGameSolution out;
  out.iterations = s.pivots;
  out.minimizer_mixed.resize(s.p.size());
  for (std::size_t i = 0; i < s.p.size(); ++i)
    out.minimizer_mixed[i] = s.p[i] / sum_p;
  out.maximizer_mixed.resize(s.q.size());
  for (std::size_t j = 0; j < s.q.size(); ++j)
    out.maximizer_mixed[j] = s.q[j] / sum_q;

  game_bounds(A, out.minimizer_mixed, out.maximizer_mixed, out.lower_bound,
              out.upper_bound);
  out.value = 0.5 * (out.lower_bound + out.upper_bound);
  out.duality_gap = out.upper_bound - out.lower_bound;
  out.converged = true;
  return out;
}

inline MatrixGameSolution mixed_value_fictitious(const Mat& A, double tolerance,
                                                 long max_iterations) {
  const int m = A.rows, n = A.cols;
  std::vector<long> row_count(static_cast<std::size_t>(m), 0);
  std::vector<long> col_count(static_cast<std::size_t>(n), 0);
  // Cumulative payoffs against the opponent's empirical play.
  std::vector<double> row_score(static_cast<std::size_t>(m), 0.0);
  std::vector<double> col_score(static_cast<std::size_t>(n), 0.0);
  int row_play = 0, col_play = 0;

  MatrixGameSolution out;
  out.converged = false;
  out.lower_bound = -std::numeric_limits<double>::infinity();
  out.upper_bound = std::numeric_limits<double>::infinity();
  long it = 0;
  for (it = 1; it <= max_iterations; ++it) {
    row_count[static_cast<std::size_t>(row_play)]++;
    col_count[static_cast<std::size_t>(col_play)]++;
    for (int i = 0; i < m; ++i)
      row_score[static_cast<std::size_t>(i)] += A.at(i, col_play);
    for (int j = 0; j < n; ++j)
      col_score[static_cast<std::size_t>(j)] += A.at(row_play, j);
    // Best responses to the empirical mixtures (smallest index on ties).
    int br_row = 0, br_col = 0;
    for (int i = 1; i < m; ++i)
      if (row_score[static_cast<std::size_t>(i)] <
          row_score[static_cast<std::size_t>(br_row)])
        br_row = i;
    for (int j = 1; j < n; ++j)
      if (col_score[static_cast<std::size_t>(j)] >
          col_score[static_cast<std::size_t>(br_col)])
        br_col = j;
    row_play = br_row;
    col_play = br_col;

    if (it % 64 == 0 || it == max_iterations) {
      std::vector<double> x(static_cast<std::size_t>(m)), y(static_cast<std::size_t>(n));
      for (int i = 0; i < m; ++i)
        x[static_cast<std::size_t>(i)] =
            static_cast<double>(row_count[static_cast<std::size_t>(i)]) /
            static_cast<double>(it);
      for (int j = 0; j < n; ++j)
        y[static_cast<std::size_t>(j)] =
            static_cast<double>(col_count[static_cast<std::size_t>(j)]) /
            static_cast<double>(it);
      double lower, upper;
      game_bounds(A, x, y, lower, upper);
      if (upper - lower < out.upper_bound - out.lower_bound) {
        out.minimizer_mixed = std::move(x);
        out.maximizer_mixed = std::move(y);
        out.lower_bound = lower;
        out.upper_bound = upper;
      }
      if (out.upper_bound - out.lower_bound <= tolerance) {
        out.converged = true;
        break;
      }
    }
  }
  out.iterations = std::min(it, max_iterations);
  out.value = 0.5 * (out.lower_bound + out.upper_bound);
  out.duality_gap = out.upper_bound - out.lower_bound;
  return out;
}

}  // namespace detail

// Value and optimal mixed strategies of the zero-sum matrix game on A.
// The exact method always meets the tolerance on finite matrices;
// fictitious play reports converged=false with its best bounds when the
// iteration budget runs out first.
inline MatrixGameSolution mixed_matrix_value(const Mat& A,
                                             MixedMethod method = MixedMethod::kExactLp,
                                             double tolerance = 1e-9,
                                             long max_iterations = 500000) {
  if (A.rows <= 0 || A.cols <= 0) throw Error("mixed_matrix_value: empty matrix");
  for (double v : A.a)
    if (!std::isfinite(v)) throw Error("mixed_matrix_value: non-finite entry");
  if (!(tolerance > 0.0)) throw Error("mixed_matrix_value: tolerance must be positive");
  if (method == MixedMethod::kExactLp) return detail::mixed_value_lp(A);
  return detail::mixed_value_fictitious(A, tolerance, max_iterations);
}

}  // namespace istack
