#pragma once

// Uniform per-time-slice state lattices for the dynamic programs. Slice
// boxes either come from the document or grow with the reachable set:
// |x_k - x0| <= sum of dt * max|f| over the sampled grid domain, padded 10%,
// so Euler images from slice k land inside slice k+1.

#include <cmath>
#include <memory>
#include <span>
#include <sstream>
#include <vector>

#include "istack/common.hpp"
#include "istack/game.hpp"

namespace istack {

class StateLattice {
 public:
  static StateLattice build(const DifferentialGameSpec& spec) {
    StateLattice lat;
    lat.dims_ = spec.state_dim;
    lat.steps_ = spec.steps;
    const int d = spec.state_dim;
    const int N = spec.steps;
    const double dt = spec.dt();

    std::vector<int> requested(static_cast<std::size_t>(d));
    std::vector<bool> fixed(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
      requested[static_cast<std::size_t>(j)] = spec.state_grid[static_cast<std::size_t>(j)].points;
      fixed[static_cast<std::size_t>(j)] = spec.state_grid[static_cast<std::size_t>(j)].lo.has_value();
    }

    // Reachability half-widths by interval propagation over sampled controls
    // and states.
    std::vector<std::vector<double>> half(static_cast<std::size_t>(N) + 1,
                                          std::vector<double>(static_cast<std::size_t>(d), 0.0));
    std::vector<int> grid_sizes;
    for (const auto& g : spec.grids) grid_sizes.push_back(g.size());

    for (int k = 0; k < N; ++k) {
      // Sample box: padded current slice (or the fixed box on fixed axes).
      std::vector<double> lo(static_cast<std::size_t>(d)), hi(static_cast<std::size_t>(d));
      std::vector<int> nsamp(static_cast<std::size_t>(d));
      for (int j = 0; j < d; ++j) {
        if (fixed[static_cast<std::size_t>(j)]) {
          lo[static_cast<std::size_t>(j)] = *spec.state_grid[static_cast<std::size_t>(j)].lo;
          hi[static_cast<std::size_t>(j)] = *spec.state_grid[static_cast<std::size_t>(j)].hi;
        } else {
          double w = 1.1 * half[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
          lo[static_cast<std::size_t>(j)] = spec.x0[static_cast<std::size_t>(j)] - w;
          hi[static_cast<std::size_t>(j)] = spec.x0[static_cast<std::size_t>(j)] + w;
        }
        nsamp[static_cast<std::size_t>(j)] =
            hi[static_cast<std::size_t>(j)] > lo[static_cast<std::size_t>(j)] ? 5 : 1;
      }

      std::vector<double> bound(static_cast<std::size_t>(d), 0.0);
      std::vector<double> x(static_cast<std::size_t>(d));
      double tk = spec.time_at(k);
      for_each_index(nsamp, [&](std::span<const int> si) {
        for (int j = 0; j < d; ++j) {
          int ns = nsamp[static_cast<std::size_t>(j)];
          x[static_cast<std::size_t>(j)] =
              ns == 1 ? lo[static_cast<std::size_t>(j)]
                      : lo[static_cast<std::size_t>(j)] +
                            (hi[static_cast<std::size_t>(j)] - lo[static_cast<std::size_t>(j)]) *
                                static_cast<double>(si[static_cast<std::size_t>(j)]) /
                                static_cast<double>(ns - 1);
        }
        EvalPoint pt;
        pt.t = tk;
        pt.x = x;
        for_each_index(grid_sizes, [&](std::span<const int> actions) {
          for (std::size_t p = 0; p < spec.grids.size(); ++p)
            pt.u[p] = spec.grids[p].point(actions[p]);
          for (int j = 0; j < d; ++j) {
            double fj = spec.dynamics[static_cast<std::size_t>(j)].eval(pt);
            if (!std::isfinite(fj))
              throw IntegrationError(
                  "non-finite dynamics value while sizing the state lattice at step " +
                      std::to_string(k),
                  k);
            bound[static_cast<std::size_t>(j)] =
                std::max(bound[static_cast<std::size_t>(j)], std::fabs(fj));
          }
        });
      });
      for (int j = 0; j < d; ++j)
        half[static_cast<std::size_t>(k) + 1][static_cast<std::size_t>(j)] =
            half[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] +
            dt * bound[static_cast<std::size_t>(j)];
    }

    lat.lo_.resize(static_cast<std::size_t>(N) + 1);
    lat.hi_.resize(static_cast<std::size_t>(N) + 1);
    lat.pts_.resize(static_cast<std::size_t>(N) + 1);
    lat.strides_.resize(static_cast<std::size_t>(N) + 1);
    lat.nodes_.resize(static_cast<std::size_t>(N) + 1);
    for (int k = 0; k <= N; ++k) {
      auto& lo = lat.lo_[static_cast<std::size_t>(k)];
      auto& hi = lat.hi_[static_cast<std::size_t>(k)];
      auto& pts = lat.pts_[static_cast<std::size_t>(k)];
      lo.resize(static_cast<std::size_t>(d));
      hi.resize(static_cast<std::size_t>(d));
      pts.resize(static_cast<std::size_t>(d));
      for (int j = 0; j < d; ++j) {
        if (fixed[static_cast<std::size_t>(j)]) {
          lo[static_cast<std::size_t>(j)] = *spec.state_grid[static_cast<std::size_t>(j)].lo;
          hi[static_cast<std::size_t>(j)] = *spec.state_grid[static_cast<std::size_t>(j)].hi;
        } else {
          double w = 1.1 * half[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
          lo[static_cast<std::size_t>(j)] = spec.x0[static_cast<std::size_t>(j)] - w;
          hi[static_cast<std::size_t>(j)] = spec.x0[static_cast<std::size_t>(j)] + w;
        }
        pts[static_cast<std::size_t>(j)] =
            hi[static_cast<std::size_t>(j)] > lo[static_cast<std::size_t>(j)]
                ? requested[static_cast<std::size_t>(j)]
                : 1;
      }
      auto& strides = lat.strides_[static_cast<std::size_t>(k)];
      strides.resize(static_cast<std::size_t>(d));
      std::size_t total = 1;
      for (int j = d; j-- > 0;) {
        strides[static_cast<std::size_t>(j)] = total;
        total *= static_cast<std::size_t>(pts[static_cast<std::size_t>(j)]);
      }
      lat.nodes_[static_cast<std::size_t>(k)] = total;
    }
    return lat;
  }

  int dims() const { return dims_; }
  int steps() const { return steps_; }
  std::size_t nodes(int k) const { return nodes_[static_cast<std::size_t>(k)]; }
  double lo(int k, int j) const {
    return lo_[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
  }
  double hi(int k, int j) const {
    return hi_[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
  }
  int points(int k, int j) const {
    return pts_[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
  }

  void node_point(int k, std::size_t node, std::span<double> out) const {
    const auto& strides = strides_[static_cast<std::size_t>(k)];
    for (int j = 0; j < dims_; ++j) {
      int pj = points(k, j);
      std::size_t idx = (node / strides[static_cast<std::size_t>(j)]) %
                        static_cast<std::size_t>(pj);
      out[static_cast<std::size_t>(j)] =
          pj == 1 ? lo(k, j)
                  : lo(k, j) + (hi(k, j) - lo(k, j)) * static_cast<double>(idx) /
                                   static_cast<double>(pj - 1);
    }
  }

  // Multilinear interpolation of per-node values on slice k. Points slightly
  // outside the box (relative 1e-9) are clamped; anything further escapes.
  double interpolate(int k, std::span<const double> values,
                     std::span<const double> x) const {
    const auto& strides = strides_[static_cast<std::size_t>(k)];
    // Per-dim cell index and weight; collapsed dims contribute nothing.
    int cell[16];
    double w[16];
    bool active[16];
    if (dims_ > 16) throw Error("state dimension too large for interpolation");
    for (int j = 0; j < dims_; ++j) {
      double l = lo(k, j), h = hi(k, j);
      double tol = 1e-9 * std::max({1.0, std::fabs(l), std::fabs(h)});
      if (x[static_cast<std::size_t>(j)] < l - tol ||
          x[static_cast<std::size_t>(j)] > h + tol)
        escape(k, x);
      int pj = points(k, j);
      if (pj == 1) {
        cell[j] = 0;
        w[j] = 0.0;
        active[j] = false;
        continue;
      }
      double step = (h - l) / static_cast<double>(pj - 1);
      double pos = (x[static_cast<std::size_t>(j)] - l) / step;
      int c = static_cast<int>(std::floor(pos));
      if (c < 0) c = 0;
      if (c > pj - 2) c = pj - 2;
      double frac = pos - static_cast<double>(c);
      if (frac < 0.0) frac = 0.0;
      if (frac > 1.0) frac = 1.0;
      cell[j] = c;
      w[j] = frac;
      active[j] = true;
    }
    int n_active = 0;
    int active_dims[16];
    for (int j = 0; j < dims_; ++j)
      if (active[j]) active_dims[n_active++] = j;

    double acc = 0.0;
    for (int corner = 0; corner < (1 << n_active); ++corner) {
      double weight = 1.0;
      std::size_t off = 0;
      for (int j = 0; j < dims_; ++j)
        off += strides[static_cast<std::size_t>(j)] * static_cast<std::size_t>(cell[j]);
      for (int b = 0; b < n_active; ++b) {
        int j = active_dims[b];
        if (corner & (1 << b)) {
          weight *= w[j];
          off += strides[static_cast<std::size_t>(j)];
        } else {
          weight *= 1.0 - w[j];
        }
      }
      if (weight != 0.0) acc += weight * values[off];
    }
    return acc;
  }

 private:
  [[noreturn]] void escape(int k, std::span<const double> x) const {
    std::ostringstream os;
    os << "state (";
    for (int j = 0; j < dims_; ++j) os << (j ? "," : "") << x[static_cast<std::size_t>(j)];
    os << ") escapes the lattice at step " << k << "; enlarge the state grid";
    throw LatticeEscapeError(os.str(), k,
                             std::vector<double>(x.begin(), x.end()));
  }

  int dims_ = 0;
  int steps_ = 0;
  std::vector<std::vector<double>> lo_, hi_;  // [k][dim]
  std::vector<std::vector<int>> pts_;         // [k][dim]
  std::vector<std::vector<std::size_t>> strides_;
  std::vector<std::size_t> nodes_;
};

}  // namespace istack
