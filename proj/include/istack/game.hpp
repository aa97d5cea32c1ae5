#pragma once

// Game model types: strategy grids, payoff tensors, static games and
// differential game specifications, plus tabulation of payoff expressions.

#include <cmath>
#include <cstddef>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "istack/common.hpp"
#include "istack/expr.hpp"

namespace istack {

// Finite set of real control vectors, all of one dimension.
struct StrategyGrid {
  std::vector<std::vector<double>> points;
  int dim = 1;

  int size() const { return static_cast<int>(points.size()); }
  std::span<const double> point(int idx) const {
    return points[static_cast<std::size_t>(idx)];
  }

  static StrategyGrid from_points(std::vector<std::vector<double>> pts) {
    StrategyGrid g;
    g.points = std::move(pts);
    g.dim = g.points.empty() ? 1 : static_cast<int>(g.points[0].size());
    g.validate();
    return g;
  }

  static StrategyGrid from_scalars(std::span<const double> values) {
    std::vector<std::vector<double>> pts;
    pts.reserve(values.size());
    for (double v : values) pts.push_back({v});
    return from_points(std::move(pts));
  }

  // Uniform 1-D range. Endpoints are exact whenever step divides the span,
  // which keeps textbook grids like [-1, 1] step 0.1 exact at +/-1 and 0.
  static StrategyGrid from_range(double lo, double hi, double step) {
    if (!(step > 0.0) || !std::isfinite(step))
      throw ValidationError("grid range: step must be positive and finite");
    if (!(hi >= lo)) throw ValidationError("grid range: max must be >= min");
    double span = hi - lo;
    long count = static_cast<long>(std::floor(span / step + 1e-9));
    std::vector<double> values;
    if (count <= 0) {
      values.push_back(lo);
    } else if (std::fabs(lo + static_cast<double>(count) * step - hi) <=
               1e-9 * std::max({1.0, std::fabs(lo), std::fabs(hi)})) {
      values.reserve(static_cast<std::size_t>(count) + 1);
      values.push_back(lo);
      for (long k = 1; k < count; ++k)
        values.push_back(lo + (static_cast<double>(k) * span) /
                                  static_cast<double>(count));
      values.push_back(hi);
    } else {
      for (long k = 0; k <= count; ++k)
        values.push_back(lo + static_cast<double>(k) * step);
    }
    return from_scalars(values);
  }

  void validate() const {
    if (points.empty()) throw ValidationError("empty grid");
    for (const auto& p : points) {
      if (static_cast<int>(p.size()) != dim)
        throw ValidationError("grid points have mixed dimensions");
      for (double v : p)
        if (!std::isfinite(v))
          throw ValidationError("grid point has a non-finite coordinate");
    }
    for (std::size_t i = 0; i < points.size(); ++i)
      for (std::size_t j = i + 1; j < points.size(); ++j)
        if (points[i] == points[j]) {
          std::ostringstream os;
          os << "duplicate grid point at positions " << i << " and " << j;
          throw ValidationError(os.str());
        }
  }
};

// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    std::size_t total = 1;
    strides_.resize(shape_.size());
    for (std::size_t i = shape_.size(); i-- > 0;) {
      strides_[i] = total;
      total *= static_cast<std::size_t>(shape_[i]);
    }
    data_.assign(total, 0.0);
  }

  const std::vector<int>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::span<const double> flat() const { return data_; }
  std::span<double> flat() { return data_; }

  std::size_t offset(std::span<const int> idx) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < strides_.size(); ++i)
      off += strides_[i] * static_cast<std::size_t>(idx[i]);
    return off;
  }

  double at(std::span<const int> idx) const { return data_[offset(idx)]; }
  double& at(std::span<const int> idx) { return data_[offset(idx)]; }

 private:
  std::vector<int> shape_;
  std::vector<std::size_t> strides_;
  std::vector<double> data_;
};

// Visits every multi-index of `shape` in lexicographic (row-major) order.
template <typename Fn>
void for_each_index(std::span<const int> shape, Fn&& fn) {
  for (int s : shape)
    if (s <= 0) return;
  std::vector<int> idx(shape.size(), 0);
  for (;;) {
    fn(std::span<const int>(idx));
    std::size_t d = shape.size();
    for (;;) {
      if (d == 0) return;
      --d;
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
}

// Finite game in normal form: leader grid P0, follower grids P1..Pn and one
// payoff tensor per player, each indexed by the full action tuple.
struct StaticGame {
  int n_followers = 1;
  std::vector<StrategyGrid> grids;   // leader first, size n_followers + 1
  std::vector<Tensor> payoffs;       // J_0 .. J_n
  std::vector<Expr> payoff_exprs;    // empty when built programmatically

  int players() const { return n_followers + 1; }

  std::vector<int> grid_sizes() const {
    std::vector<int> s;
    s.reserve(grids.size());
    for (const auto& g : grids) s.push_back(g.size());
    return s;
  }

  std::vector<int> follower_sizes() const {
    std::vector<int> s;
    for (std::size_t i = 1; i < grids.size(); ++i) s.push_back(grids[i].size());
    return s;
  }

  // J_player at leader action a0 and follower profile (indices).
  double payoff(int player, int a0, std::span<const int> profile) const {
    std::vector<int> idx(static_cast<std::size_t>(players()));
    idx[0] = a0;
    for (int i = 0; i < n_followers; ++i)
      idx[static_cast<std::size_t>(i) + 1] = profile[static_cast<std::size_t>(i)];
    return payoffs[static_cast<std::size_t>(player)].at(idx);
  }

  void validate() const {
    if (n_followers < 1) throw ValidationError("game needs at least one follower");
    if (players() > kMaxPlayers)
      throw ValidationError("too many players (at most " +
                            std::to_string(kMaxPlayers) + ")");
    if (static_cast<int>(grids.size()) != players())
      throw ValidationError("dimension mismatch: expected " +
                            std::to_string(players()) + " strategy grids");
    for (const auto& g : grids) g.validate();
    if (static_cast<int>(payoffs.size()) != players())
      throw ValidationError("dimension mismatch: expected " +
                            std::to_string(players()) + " payoff tensors");
    auto sizes = grid_sizes();
    for (const auto& t : payoffs) {
      if (t.shape() != sizes)
        throw ValidationError("dimension mismatch: payoff tensor shape does not match grids");
      for (double v : t.flat())
        if (!std::isfinite(v))
          throw ValidationError("payoff tensor has a non-finite entry");
    }
  }
};

// Per-dimension state lattice request. Missing bounds are derived from the
// reachable set at build time.
struct AxisSpec {
  std::optional<double> lo;
  std::optional<double> hi;
  int points = 33;
};

struct DifferentialGameSpec {
  int n_followers = 1;
  int state_dim = 1;
  double horizon = 1.0;
  std::vector<double> x0;
  std::vector<StrategyGrid> grids;                    // control grids, leader first
  std::vector<Expr> dynamics;                         // d components of f
  std::vector<Expr> running;                          // g_0 .. g_n (summed components)
  std::vector<std::vector<Expr>> running_components;  // as declared in the document
  std::vector<Expr> terminal;                         // sigma_0 .. sigma_n
  int steps = 1;                                      // N
  std::vector<AxisSpec> state_grid;

  int players() const { return n_followers + 1; }
  double dt() const { return horizon / steps; }
  double time_at(int k) const {
    return (horizon * static_cast<double>(k)) / static_cast<double>(steps);
  }

  std::vector<int> control_dims() const {
    std::vector<int> dims;
    dims.reserve(grids.size());
    for (const auto& g : grids) dims.push_back(g.dim);
    return dims;
  }

  void validate() const {
    if (n_followers < 1) throw ValidationError("game needs at least one follower");
    if (players() > kMaxPlayers)
      throw ValidationError("too many players (at most " +
                            std::to_string(kMaxPlayers) + ")");
    if (state_dim < 1) throw ValidationError("state dimension must be >= 1");
    if (!(horizon > 0.0)) throw ValidationError("horizon must be positive");
    if (steps < 1) throw ValidationError("steps must be >= 1");
    if (static_cast<int>(x0.size()) != state_dim)
      throw ValidationError("dimension mismatch: x0 length vs state dimension");
    for (double v : x0)
      if (!std::isfinite(v)) throw ValidationError("x0 has a non-finite entry");
    if (static_cast<int>(grids.size()) != players())
      throw ValidationError("dimension mismatch: expected " +
                            std::to_string(players()) + " control grids");
    for (const auto& g : grids) g.validate();
    if (static_cast<int>(dynamics.size()) != state_dim)
      throw ValidationError("dimension mismatch: dynamics length vs state dimension");
    if (static_cast<int>(running.size()) != players())
      throw ValidationError("dimension mismatch: expected one running payoff per player");
    if (static_cast<int>(terminal.size()) != players())
      throw ValidationError("dimension mismatch: expected one terminal payoff per player");
    if (static_cast<int>(state_grid.size()) != state_dim)
      throw ValidationError("dimension mismatch: state_grid length vs state dimension");
    for (const auto& axis : state_grid) {
      if (axis.points < 2) throw ValidationError("state_grid points must be >= 2");
      if (axis.lo && axis.hi && !(*axis.lo < *axis.hi))
        throw ValidationError("state_grid: min must be < max");
      if (axis.lo.has_value() != axis.hi.has_value())
        throw ValidationError("state_grid: min and max must be given together");
    }
    auto dims = control_dims();
    for (const auto& e : dynamics) e.validate_symbols(true, state_dim, dims, "dynamics");
    for (const auto& e : running) e.validate_symbols(true, state_dim, dims, "running");
    for (const auto& e : terminal) e.validate_symbols(false, state_dim, dims, "terminal");
  }
};

// Per-step action indices into one player's grid.
using ControlPath = std::vector<int>;

// Per-step probability weights over one player's grid.
using MixedControlPath = std::vector<std::vector<double>>;

inline void validate_control_path(const DifferentialGameSpec& spec, int player,
                                  const ControlPath& path) {
  if (static_cast<int>(path.size()) != spec.steps)
    throw ValidationError("control path length does not equal step count");
  int size = spec.grids[static_cast<std::size_t>(player)].size();
  for (int a : path)
    if (a < 0 || a >= size)
      throw ValidationError("control path index out of range");
}

inline void validate_mixed_path(const DifferentialGameSpec& spec, int player,
                                const MixedControlPath& path,
                                double tol = 1e-12) {
  if (static_cast<int>(path.size()) != spec.steps)
    throw ValidationError("mixed path length does not equal step count");
  std::size_t size =
      static_cast<std::size_t>(spec.grids[static_cast<std::size_t>(player)].size());
  for (const auto& w : path) {
    if (w.size() != size)
      throw ValidationError("mixed path weight vector has wrong length");
    double sum = 0.0;
    for (double v : w) {
      if (!(v >= 0.0)) throw ValidationError("mixed path weight is negative");
      sum += v;
    }
    if (std::fabs(sum - 1.0) > tol)
      throw ValidationError("mixed path weights do not sum to 1");
  }
}

// Integrated motion: times, states, and per-player running-payoff
// accumulators z_i relative to the start step.
struct Trajectory {
  int start_step = 0;
  std::vector<double> times;                 // size N - start_step + 1
  std::vector<std::vector<double>> states;   // same size, entries of dim d
  std::vector<std::vector<double>> running;  // [player][local step], z at start = 0

  int end_step() const {
    return start_step + static_cast<int>(times.size()) - 1;
  }
  const std::vector<double>& state_at(int k) const {
    return states[static_cast<std::size_t>(k - start_step)];
  }
  double z_at(int player, int k) const {
    return running[static_cast<std::size_t>(player)]
                  [static_cast<std::size_t>(k - start_step)];
  }
};

// Evaluates `payoff` on the product of `grids`. Entry (a0..an) is the
// expression at the corresponding grid points.
inline Tensor tabulate(const Expr& payoff, std::span<const StrategyGrid> grids,
                       int workers = 1) {
  std::vector<int> shape;
  shape.reserve(grids.size());
  for (const auto& g : grids) shape.push_back(g.size());
  Tensor out(shape);

  std::vector<std::size_t> strides(shape.size());
  std::size_t total = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[i] = total;
    total *= static_cast<std::size_t>(shape[i]);
  }

  std::string first_error;
  std::mutex error_mutex;
  auto worker = [&](std::size_t begin, std::size_t end) {
    std::vector<int> idx(shape.size());
    EvalPoint pt;
    for (std::size_t flat = begin; flat < end; ++flat) {
      std::size_t rem = flat;
      for (std::size_t i = 0; i < shape.size(); ++i) {
        idx[i] = static_cast<int>(rem / strides[i]);
        rem %= strides[i];
      }
      for (std::size_t i = 0; i < grids.size(); ++i)
        pt.u[i] = grids[i].point(idx[i]);
      double v = payoff.eval(pt);
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "non-finite payoff value at index (";
        for (std::size_t i = 0; i < idx.size(); ++i)
          os << (i ? "," : "") << idx[i];
        os << ")";
        std::lock_guard<std::mutex> lock(error_mutex);
        if (first_error.empty()) first_error = os.str();
        return;
      }
      out.flat()[flat] = v;
    }
  };
  parallel_for(total, workers, worker);
  if (!first_error.empty()) throw ValidationError(first_error);
  return out;
}

}  // namespace istack
