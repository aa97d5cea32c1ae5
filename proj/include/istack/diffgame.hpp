#pragma once

// Discrete-time differential inverse Stackelberg engine: Euler integration,
// tail payoffs, follower guarantee value functions by backward dynamic
// programming, admissibility checking along trajectories, leader-optimal
// search, and nonanticipative punishment strategies with play simulation.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "istack/common.hpp"
#include "istack/game.hpp"
#include "istack/lattice.hpp"
#include "istack/zerosum.hpp"

namespace istack {

// Follower i's guarantee value V_i^- on the time/state lattice, with the
// feedback policies realized in the recursion: the maximizing follower
// action per node and the minimizing leader response per (node, follower
// action).
struct ValueTable {
  int follower = 1;
  std::shared_ptr<const StateLattice> lattice;
  std::vector<std::vector<double>> values;      // [k][node]
  std::vector<std::vector<int>> best_follower;  // [k][node], k < N
  std::vector<std::vector<int>> best_leader;    // [k][node * |P_i| + a_i], k < N

  double value_at(int k, std::span<const double> x) const {
    return lattice->interpolate(k, values[static_cast<std::size_t>(k)], x);
  }
};

namespace detail {

inline void set_controls(EvalPoint& pt, const DifferentialGameSpec& spec,
                         std::span<const int> actions) {
  for (std::size_t p = 0; p < spec.grids.size(); ++p)
    pt.u[p] = spec.grids[p].point(actions[p]);
}

inline std::uint64_t mix_hash(std::uint64_t h, std::uint64_t v) {
  return h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
}

inline std::uint64_t state_hash(int k, std::span<const double> x) {
  std::uint64_t h = static_cast<std::uint64_t>(k) * 0x100000001b3ULL;
  for (double v : x) h = mix_hash(h, std::bit_cast<std::uint64_t>(v));
  return h;
}

}  // namespace detail

// Explicit Euler integration of the game dynamics under piecewise-constant
// controls, starting from (step k_start, x_start). Control paths always
// cover all N steps; only steps k_start..N-1 are used.
inline Trajectory integrate(const DifferentialGameSpec& spec, int k_start,
                            std::span<const double> x_start,
                            const ControlPath& u0,
                            const std::vector<ControlPath>& u) {
  const int N = spec.steps;
  const int d = spec.state_dim;
  const double dt = spec.dt();
  validate_control_path(spec, 0, u0);
  if (static_cast<int>(u.size()) != spec.n_followers)
    throw ValidationError("expected one control path per follower");
  for (int i = 1; i <= spec.n_followers; ++i)
    validate_control_path(spec, i, u[static_cast<std::size_t>(i - 1)]);

  Trajectory traj;
  traj.start_step = k_start;
  traj.times.reserve(static_cast<std::size_t>(N - k_start) + 1);
  traj.states.reserve(static_cast<std::size_t>(N - k_start) + 1);
  traj.running.assign(static_cast<std::size_t>(spec.players()), {});
  for (auto& z : traj.running) z.reserve(static_cast<std::size_t>(N - k_start) + 1);

  std::vector<double> x(x_start.begin(), x_start.end());
  std::vector<double> z(static_cast<std::size_t>(spec.players()), 0.0);
  traj.times.push_back(spec.time_at(k_start));
  traj.states.push_back(x);
  for (auto& zr : traj.running) zr.push_back(0.0);

  std::vector<int> actions(static_cast<std::size_t>(spec.players()));
  std::vector<double> fx(static_cast<std::size_t>(d));
  for (int k = k_start; k < N; ++k) {
    actions[0] = u0[static_cast<std::size_t>(k)];
    for (int i = 1; i <= spec.n_followers; ++i)
      actions[static_cast<std::size_t>(i)] =
          u[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(k)];
    EvalPoint pt;
    pt.t = spec.time_at(k);
    pt.x = x;
    detail::set_controls(pt, spec, actions);
    for (int j = 0; j < d; ++j)
      fx[static_cast<std::size_t>(j)] = spec.dynamics[static_cast<std::size_t>(j)].eval(pt);
    for (int i = 0; i < spec.players(); ++i)
      z[static_cast<std::size_t>(i)] +=
          dt * spec.running[static_cast<std::size_t>(i)].eval(pt);
    for (int j = 0; j < d; ++j) x[static_cast<std::size_t>(j)] += dt * fx[static_cast<std::size_t>(j)];
    for (double v : x)
      if (!std::isfinite(v))
        throw IntegrationError("non-finite state at step " + std::to_string(k + 1),
                               k + 1);
    for (double v : z)
      if (!std::isfinite(v))
        throw IntegrationError("non-finite running payoff at step " + std::to_string(k + 1),
                               k + 1);
    traj.times.push_back(spec.time_at(k + 1));
    traj.states.push_back(x);
    for (int i = 0; i < spec.players(); ++i)
      traj.running[static_cast<std::size_t>(i)].push_back(z[static_cast<std::size_t>(i)]);
  }
  return traj;
}

inline Trajectory integrate(const DifferentialGameSpec& spec, const ControlPath& u0,
                            const std::vector<ControlPath>& u) {
  return integrate(spec, 0, spec.x0, u0, u);
}

// Tail payoff of every player from step k: terminal value plus the running
// payoff accumulated on [t_k, T].
inline std::vector<double> tail_payoffs(const DifferentialGameSpec& spec,
                                        const Trajectory& traj, int k) {
  if (traj.end_step() != spec.steps)
    throw Error("tail_payoffs needs a trajectory reaching the horizon");
  const auto& xN = traj.state_at(spec.steps);
  EvalPoint pt;
  pt.x = xN;
  std::vector<double> out(static_cast<std::size_t>(spec.players()));
  for (int i = 0; i < spec.players(); ++i)
    out[static_cast<std::size_t>(i)] =
        spec.terminal[static_cast<std::size_t>(i)].eval(pt) +
        (traj.z_at(i, spec.steps) - traj.z_at(i, k));
  return out;
}

inline std::vector<double> full_payoffs(const DifferentialGameSpec& spec,
                                        const Trajectory& traj) {
  return tail_payoffs(spec, traj, traj.start_step);
}

// Backward dynamic program for follower i's guarantee value with the other
// followers frozen at `frozen` (entry i-1 ignored). The step order is max
// over the follower's action, then min over the leader's: the leader reacts
// to the follower's current control. The terminal function is evaluated
// directly on the last step, so one-step games are exact.
inline ValueTable lower_value_function(
    const DifferentialGameSpec& spec, int follower,
    const std::vector<ControlPath>& frozen,
    std::shared_ptr<const StateLattice> lattice = nullptr, int workers = 1) {
  const int N = spec.steps;
  const int d = spec.state_dim;
  const double dt = spec.dt();
  if (!lattice) lattice = std::make_shared<StateLattice>(StateLattice::build(spec));

  ValueTable table;
  table.follower = follower;
  table.lattice = lattice;
  table.values.resize(static_cast<std::size_t>(N) + 1);
  table.best_follower.resize(static_cast<std::size_t>(N));
  table.best_leader.resize(static_cast<std::size_t>(N));

  const Expr& sigma = spec.terminal[static_cast<std::size_t>(follower)];
  const Expr& g = spec.running[static_cast<std::size_t>(follower)];
  const int own_size = spec.grids[static_cast<std::size_t>(follower)].size();
  const int leader_size = spec.grids[0].size();

  auto& terminal_values = table.values[static_cast<std::size_t>(N)];
  terminal_values.resize(lattice->nodes(N));
  parallel_for(lattice->nodes(N), workers, [&](std::size_t b, std::size_t e) {
    std::vector<double> x(static_cast<std::size_t>(d));
    EvalPoint pt;
    for (std::size_t node = b; node < e; ++node) {
      lattice->node_point(N, node, x);
      pt.x = x;
      terminal_values[node] = sigma.eval(pt);
    }
  });

  for (int k = N - 1; k >= 0; --k) {
    auto& values = table.values[static_cast<std::size_t>(k)];
    auto& best_f = table.best_follower[static_cast<std::size_t>(k)];
    auto& best_l = table.best_leader[static_cast<std::size_t>(k)];
    values.resize(lattice->nodes(k));
    best_f.resize(lattice->nodes(k));
    best_l.resize(lattice->nodes(k) * static_cast<std::size_t>(own_size));
    const auto& next_values = table.values[static_cast<std::size_t>(k) + 1];
    const double tk = spec.time_at(k);

    parallel_for(lattice->nodes(k), workers, [&](std::size_t b, std::size_t e) {
      std::vector<double> x(static_cast<std::size_t>(d));
      std::vector<double> y(static_cast<std::size_t>(d));
      std::vector<int> actions(static_cast<std::size_t>(spec.players()));
      for (int j = 1; j <= spec.n_followers; ++j)
        if (j != follower)
          actions[static_cast<std::size_t>(j)] =
              frozen[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(k)];
      EvalPoint pt;
      EvalPoint pt_next;
      for (std::size_t node = b; node < e; ++node) {
        lattice->node_point(k, node, x);
        pt.t = tk;
        pt.x = x;
        double outer_best = -std::numeric_limits<double>::infinity();
        int outer_arg = 0;
        for (int ai = 0; ai < own_size; ++ai) {
          actions[static_cast<std::size_t>(follower)] = ai;
          double inner_best = std::numeric_limits<double>::infinity();
          int inner_arg = 0;
          for (int a0 = 0; a0 < leader_size; ++a0) {
            actions[0] = a0;
            detail::set_controls(pt, spec, actions);
            for (int j = 0; j < d; ++j)
              y[static_cast<std::size_t>(j)] =
                  x[static_cast<std::size_t>(j)] +
                  dt * spec.dynamics[static_cast<std::size_t>(j)].eval(pt);
            double cont;
            if (k + 1 == N) {
              pt_next.x = y;
              cont = sigma.eval(pt_next);
            } else {
              cont = lattice->interpolate(k + 1, next_values, y);
            }
            double q = dt * g.eval(pt) + cont;
            if (!std::isfinite(q))
              throw IntegrationError(
                  "non-finite value in the dynamic program at step " +
                      std::to_string(k),
                  k);
            if (q < inner_best) {
              inner_best = q;
              inner_arg = a0;
            }
          }
          best_l[node * static_cast<std::size_t>(own_size) +
                 static_cast<std::size_t>(ai)] = inner_arg;
          if (inner_best > outer_best) {
            outer_best = inner_best;
            outer_arg = ai;
          }
        }
        values[node] = outer_best;
        best_f[node] = outer_arg;
      }
    });
  }
  return table;
}

struct ConstraintReport {
  bool member = false;
  Mat margins;  // followers x (N+1)
};

// Margins of the guarantee inequalities along the trajectory of (u0, u):
// tail payoff of follower i from step k minus V_i^-(k, x_k). Membership
// requires every margin >= -eps_c.
inline ConstraintReport constraint_check(const DifferentialGameSpec& spec,
                                         const ControlPath& u0,
                                         const std::vector<ControlPath>& u,
                                         std::span<const ValueTable> tables,
                                         double eps_c = 1e-9) {
  if (static_cast<int>(tables.size()) != spec.n_followers)
    throw Error("constraint_check needs one value table per follower");
  Trajectory traj = integrate(spec, u0, u);
  const int N = spec.steps;

  ConstraintReport report;
  report.margins = Mat(spec.n_followers, N + 1);
  report.member = true;
  EvalPoint pt;
  pt.x = traj.state_at(N);
  for (int i = 1; i <= spec.n_followers; ++i) {
    double terminal = spec.terminal[static_cast<std::size_t>(i)].eval(pt);
    double zN = traj.z_at(i, N);
    for (int k = 0; k <= N; ++k) {
      double tail = terminal + (zN - traj.z_at(i, k));
      double guarantee =
          k == N ? terminal
                 : tables[static_cast<std::size_t>(i - 1)].value_at(
                       k, traj.state_at(k));
      double margin = tail - guarantee;
      report.margins.at(i - 1, k) = margin;
      if (margin < -eps_c) report.member = false;
    }
  }
  return report;
}

struct DiffSolveOptions {
  double eps_c = 1e-9;
  bool prune = true;
  double prune_slack = 1e-9;
  std::uint64_t max_nodes = 20000000;
  int workers = 1;
};

struct DiffSolutionReport {
  bool found = false;
  bool optimal = true;  // false when the node budget ran out first
  ControlPath leader_path;
  std::vector<ControlPath> follower_paths;
  double leader_payoff = 0.0;
  std::vector<double> follower_payoffs;
  Mat margins;
  double eps_c = 0.0;
  double lipschitz_estimate = 0.0;
  double discretization_allowance = 0.0;  // lipschitz_estimate * dt
  std::uint64_t nodes_expanded = 0;
  std::uint64_t leaves_checked = 0;
  std::uint64_t pruned = 0;
  std::vector<ValueTable> tables;
};

namespace detail {

// Backward table of the best possible tail payoff of `player`, maximizing
// over the leader and, when `frozen_followers` is null, over all follower
// controls as well. Used as an optimistic bound for pruning.
inline std::vector<std::vector<double>> max_tail_values(
    const DifferentialGameSpec& spec, int player,
    const std::shared_ptr<const StateLattice>& lattice,
    const std::vector<ControlPath>* frozen_followers, int workers) {
  const int N = spec.steps;
  const int d = spec.state_dim;
  const double dt = spec.dt();
  const Expr& sigma = spec.terminal[static_cast<std::size_t>(player)];
  const Expr& g = spec.running[static_cast<std::size_t>(player)];

  std::vector<std::vector<double>> values(static_cast<std::size_t>(N) + 1);
  values[static_cast<std::size_t>(N)].resize(lattice->nodes(N));
  parallel_for(lattice->nodes(N), workers, [&](std::size_t b, std::size_t e) {
    std::vector<double> x(static_cast<std::size_t>(d));
    EvalPoint pt;
    for (std::size_t node = b; node < e; ++node) {
      lattice->node_point(N, node, x);
      pt.x = x;
      values[static_cast<std::size_t>(N)][node] = sigma.eval(pt);
    }
  });

  std::vector<int> free_shape;
  free_shape.push_back(spec.grids[0].size());
  if (!frozen_followers)
    for (int i = 1; i <= spec.n_followers; ++i)
      free_shape.push_back(spec.grids[static_cast<std::size_t>(i)].size());

  for (int k = N - 1; k >= 0; --k) {
    auto& slice = values[static_cast<std::size_t>(k)];
    slice.resize(lattice->nodes(k));
    const auto& next = values[static_cast<std::size_t>(k) + 1];
    const double tk = spec.time_at(k);
    parallel_for(lattice->nodes(k), workers, [&](std::size_t b, std::size_t e) {
      std::vector<double> x(static_cast<std::size_t>(d));
      std::vector<double> y(static_cast<std::size_t>(d));
      std::vector<int> actions(static_cast<std::size_t>(spec.players()));
      if (frozen_followers)
        for (int i = 1; i <= spec.n_followers; ++i)
          actions[static_cast<std::size_t>(i)] =
              (*frozen_followers)[static_cast<std::size_t>(i - 1)]
                                 [static_cast<std::size_t>(k)];
      EvalPoint pt, pt_next;
      for (std::size_t node = b; node < e; ++node) {
        lattice->node_point(k, node, x);
        pt.t = tk;
        pt.x = x;
        double best = -std::numeric_limits<double>::infinity();
        for_each_index(free_shape, [&](std::span<const int> free) {
          actions[0] = free[0];
          if (!frozen_followers)
            for (int i = 1; i <= spec.n_followers; ++i)
              actions[static_cast<std::size_t>(i)] = free[static_cast<std::size_t>(i)];
          detail::set_controls(pt, spec, actions);
          for (int j = 0; j < d; ++j)
            y[static_cast<std::size_t>(j)] =
                x[static_cast<std::size_t>(j)] +
                dt * spec.dynamics[static_cast<std::size_t>(j)].eval(pt);
          double cont;
          if (k + 1 == N) {
            pt_next.x = y;
            cont = sigma.eval(pt_next);
          } else {
            cont = lattice->interpolate(k + 1, next, y);
          }
          best = std::max(best, dt * g.eval(pt) + cont);
        });
        slice[node] = best;
      }
    });
  }
  return values;
}

struct DominanceEntry {
  std::vector<double> x;
  double z0;
  std::vector<double> c;  // per follower: running guarantee requirement M_i - z_i
};

class DominanceMemo {
 public:
  // Returns true when an existing entry dominates the incoming state, i.e.
  // it reached the same (k, x) with at least the past leader payoff and no
  // tighter remaining obligations. Otherwise records the incoming state.
  bool dominated_or_insert(int k, std::span<const double> x, double z0,
                           std::span<const double> c) {
    auto& bucket = map_[state_hash(k, x)];
    for (const DominanceEntry& e : bucket) {
      if (!std::equal(e.x.begin(), e.x.end(), x.begin(), x.end())) continue;
      bool dominates = e.z0 >= z0;
      for (std::size_t i = 0; dominates && i < c.size(); ++i)
        if (e.c[i] > c[i]) dominates = false;
      if (dominates) return true;
    }
    // Drop entries the incoming state dominates, then record it.
    std::erase_if(bucket, [&](const DominanceEntry& e) {
      if (!std::equal(e.x.begin(), e.x.end(), x.begin(), x.end())) return false;
      if (z0 < e.z0) return false;
      for (std::size_t i = 0; i < c.size(); ++i)
        if (c[i] > e.c[i]) return false;
      return true;
    });
    if (bucket.size() < 64)
      bucket.push_back(DominanceEntry{std::vector<double>(x.begin(), x.end()), z0,
                                      std::vector<double>(c.begin(), c.end())});
    return false;
  }

 private:
  std::unordered_map<std::uint64_t, std::vector<DominanceEntry>> map_;
};

// Depth-first search over leader paths with the follower paths fixed.
// Guarantee levels V_i are exact here, so pruning tracks the running
// requirement M_i = max_k (V_i(k, x_k) + z_i(k)) directly.
struct FixedFollowerSearch {
  const DifferentialGameSpec& spec;
  const std::vector<ControlPath>& u;
  std::span<const ValueTable> tables;
  const std::vector<std::vector<std::vector<double>>>& max_tail;  // per player
  const std::shared_ptr<const StateLattice>& lattice;
  const DiffSolveOptions& opts;

  std::uint64_t* nodes;
  std::uint64_t* pruned;
  std::uint64_t* leaves;
  bool* budget_hit;

  // Leader payoffs at or below this level cannot win; ties still explored.
  double prune_level = -std::numeric_limits<double>::infinity();

  double best_j0 = -std::numeric_limits<double>::infinity();
  bool found = false;
  ControlPath best_u0;

  DominanceMemo memo;
  ControlPath current;
  std::vector<double> scratch_c;

  void run() {
    current.assign(static_cast<std::size_t>(spec.steps), 0);
    scratch_c.resize(static_cast<std::size_t>(spec.n_followers));
    std::vector<double> z(static_cast<std::size_t>(spec.players()), 0.0);
    std::vector<double> m(static_cast<std::size_t>(spec.n_followers),
                          -std::numeric_limits<double>::infinity());
    dfs(0, spec.x0, z, m);
  }

  void dfs(int k, std::vector<double> x, std::vector<double> z,
           std::vector<double> m) {
    if (*budget_hit) return;
    const int N = spec.steps;
    if (k == N) {
      ++*leaves;
      EvalPoint pt;
      pt.x = x;
      bool feasible = true;
      for (int i = 1; i <= spec.n_followers; ++i) {
        double ji = spec.terminal[static_cast<std::size_t>(i)].eval(pt) +
                    z[static_cast<std::size_t>(i)];
        if (ji < m[static_cast<std::size_t>(i - 1)] - opts.eps_c) feasible = false;
      }
      if (!feasible) return;
      double j0 = spec.terminal[0].eval(pt) + z[0];
      if (!found || j0 > best_j0) {
        found = true;
        best_j0 = j0;
        best_u0 = current;
      }
      return;
    }

    for (int i = 1; i <= spec.n_followers; ++i) {
      double v = tables[static_cast<std::size_t>(i - 1)].value_at(k, x) +
                 z[static_cast<std::size_t>(i)];
      m[static_cast<std::size_t>(i - 1)] =
          std::max(m[static_cast<std::size_t>(i - 1)], v);
    }
    for (int i = 0; i < spec.n_followers; ++i)
      scratch_c[static_cast<std::size_t>(i)] =
          m[static_cast<std::size_t>(i)] - z[static_cast<std::size_t>(i) + 1];
    if (memo.dominated_or_insert(k, x, z[0], scratch_c)) {
      ++*pruned;
      return;
    }
    if (opts.prune) {
      for (int i = 1; i <= spec.n_followers; ++i) {
        double reachable =
            z[static_cast<std::size_t>(i)] +
            lattice->interpolate(k, max_tail[static_cast<std::size_t>(i)]
                                            [static_cast<std::size_t>(k)], x);
        if (reachable < m[static_cast<std::size_t>(i - 1)] - opts.eps_c -
                            opts.prune_slack) {
          ++*pruned;
          return;
        }
      }
      double level = std::max(prune_level, found ? best_j0
                                                 : -std::numeric_limits<double>::infinity());
      if (level > -std::numeric_limits<double>::infinity()) {
        double reachable =
            z[0] + lattice->interpolate(k, max_tail[0][static_cast<std::size_t>(k)], x);
        if (reachable < level - opts.prune_slack) {
          ++*pruned;
          return;
        }
      }
    }

    const int d = spec.state_dim;
    const double dt = spec.dt();
    std::vector<int> actions(static_cast<std::size_t>(spec.players()));
    for (int i = 1; i <= spec.n_followers; ++i)
      actions[static_cast<std::size_t>(i)] =
          u[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(k)];
    EvalPoint pt;
    pt.t = spec.time_at(k);
    pt.x = x;
    std::vector<double> y(static_cast<std::size_t>(d));
    std::vector<double> z_next(z);
    for (int a0 = 0; a0 < spec.grids[0].size(); ++a0) {
      if (++*nodes > opts.max_nodes) {
        *budget_hit = true;
        return;
      }
      actions[0] = a0;
      detail::set_controls(pt, spec, actions);
      for (int j = 0; j < d; ++j)
        y[static_cast<std::size_t>(j)] =
            x[static_cast<std::size_t>(j)] +
            dt * spec.dynamics[static_cast<std::size_t>(j)].eval(pt);
      for (int i = 0; i < spec.players(); ++i)
        z_next[static_cast<std::size_t>(i)] =
            z[static_cast<std::size_t>(i)] +
            dt * spec.running[static_cast<std::size_t>(i)].eval(pt);
      current[static_cast<std::size_t>(k)] = a0;
      dfs(k + 1, y, z_next, m);
      if (*budget_hit) return;
    }
  }
};

// Joint depth-first search over (leader, follower) step tuples for the
// one-follower case, where the guarantee table does not depend on the
// candidate. Expansion is lexicographic over the joint step action, so the
// first optimum found is the lexicographically smallest.
struct JointSearch {
  const DifferentialGameSpec& spec;
  std::span<const ValueTable> tables;
  const std::vector<std::vector<std::vector<double>>>& max_tail;
  const std::shared_ptr<const StateLattice>& lattice;
  const DiffSolveOptions& opts;

  std::uint64_t nodes = 0, pruned = 0, leaves = 0;
  bool budget_hit = false;

  double best_j0 = -std::numeric_limits<double>::infinity();
  bool found = false;
  ControlPath best_u0;
  ControlPath best_u1;

  DominanceMemo memo;
  ControlPath cur_u0, cur_u1;
  std::vector<double> scratch_c = {0.0};

  void run() {
    cur_u0.assign(static_cast<std::size_t>(spec.steps), 0);
    cur_u1.assign(static_cast<std::size_t>(spec.steps), 0);
    dfs(0, spec.x0, 0.0, 0.0, -std::numeric_limits<double>::infinity());
  }

  void dfs(int k, std::vector<double> x, double z0, double z1, double m1) {
    if (budget_hit) return;
    const int N = spec.steps;
    if (k == N) {
      ++leaves;
      EvalPoint pt;
      pt.x = x;
      double j1 = spec.terminal[1].eval(pt) + z1;
      if (j1 < m1 - opts.eps_c) return;
      double j0 = spec.terminal[0].eval(pt) + z0;
      if (!found || j0 > best_j0) {
        found = true;
        best_j0 = j0;
        best_u0 = cur_u0;
        best_u1 = cur_u1;
      }
      return;
    }

    m1 = std::max(m1, tables[0].value_at(k, x) + z1);
    scratch_c[0] = m1 - z1;
    if (memo.dominated_or_insert(k, x, z0, scratch_c)) {
      ++pruned;
      return;
    }
    if (opts.prune) {
      double reach1 =
          z1 + lattice->interpolate(k, max_tail[1][static_cast<std::size_t>(k)], x);
      if (reach1 < m1 - opts.eps_c - opts.prune_slack) {
        ++pruned;
        return;
      }
      if (found) {
        double reach0 =
            z0 + lattice->interpolate(k, max_tail[0][static_cast<std::size_t>(k)], x);
        if (reach0 < best_j0 - opts.prune_slack) {
          ++pruned;
          return;
        }
      }
    }

    const int d = spec.state_dim;
    const double dt = spec.dt();
    EvalPoint pt;
    pt.t = spec.time_at(k);
    pt.x = x;
    std::vector<double> y(static_cast<std::size_t>(d));
    int actions[2];
    for (int a0 = 0; a0 < spec.grids[0].size(); ++a0) {
      for (int a1 = 0; a1 < spec.grids[1].size(); ++a1) {
        if (++nodes > opts.max_nodes) {
          budget_hit = true;
          return;
        }
        actions[0] = a0;
        actions[1] = a1;
        detail::set_controls(pt, spec, std::span<const int>(actions, 2));
        for (int j = 0; j < d; ++j)
          y[static_cast<std::size_t>(j)] =
              x[static_cast<std::size_t>(j)] +
              dt * spec.dynamics[static_cast<std::size_t>(j)].eval(pt);
        double g0 = spec.running[0].eval(pt);
        double g1 = spec.running[1].eval(pt);
        cur_u0[static_cast<std::size_t>(k)] = a0;
        cur_u1[static_cast<std::size_t>(k)] = a1;
        dfs(k + 1, y, z0 + dt * g0, z1 + dt * g1, m1);
        if (budget_hit) return;
      }
    }
  }
};

inline void finish_report(const DifferentialGameSpec& spec,
                          DiffSolutionReport& report,
                          const DiffSolveOptions& opts) {
  if (!report.found) return;
  ConstraintReport cc = constraint_check(spec, report.leader_path,
                                         report.follower_paths, report.tables,
                                         opts.eps_c);
  report.margins = cc.margins;
  Trajectory traj = integrate(spec, report.leader_path, report.follower_paths);
  auto payoffs = full_payoffs(spec, traj);
  report.leader_payoff = payoffs[0];
  report.follower_payoffs.assign(payoffs.begin() + 1, payoffs.end());
  double lip = 0.0;
  for (int i = 0; i < spec.n_followers; ++i)
    for (int k = 0; k < spec.steps; ++k)
      lip = std::max(lip, std::fabs(report.margins.at(i, k + 1) -
                                    report.margins.at(i, k)) /
                              spec.dt());
  report.lipschitz_estimate = lip;
  report.discretization_allowance = lip * spec.dt();
}

}  // namespace detail

// Leader-optimal search over piecewise-constant control tuples subject to
// the guarantee constraints along the trajectory. Depth-first with
// dominance memoization and optimistic-bound pruning; candidates are ranked
// lexicographically by their per-step joint action tuples on payoff ties.
inline DiffSolutionReport solve_inverse_diff(const DifferentialGameSpec& spec,
                                             const DiffSolveOptions& opts = {}) {
  auto lattice = std::make_shared<const StateLattice>(StateLattice::build(spec));
  DiffSolutionReport report;
  report.eps_c = opts.eps_c;

  if (spec.n_followers == 1) {
    report.tables.push_back(
        lower_value_function(spec, 1, {{}}, lattice, opts.workers));
    std::vector<std::vector<std::vector<double>>> max_tail;
    for (int p = 0; p <= 1; ++p)
      max_tail.push_back(
          detail::max_tail_values(spec, p, lattice, nullptr, opts.workers));
    detail::JointSearch search{spec, report.tables, max_tail, lattice, opts};
    search.run();
    report.nodes_expanded = search.nodes;
    report.pruned = search.pruned;
    report.leaves_checked = search.leaves;
    report.optimal = !search.budget_hit;
    report.found = search.found;
    if (search.found) {
      report.leader_path = search.best_u0;
      report.follower_paths = {search.best_u1};
    }
    detail::finish_report(spec, report, opts);
    return report;
  }

  // Several followers: enumerate follower profile paths, then search leader
  // paths against each. Value tables depend only on the other followers'
  // paths, so they are cached across the enumeration.
  std::vector<int> sizes;
  for (int i = 1; i <= spec.n_followers; ++i)
    sizes.push_back(spec.grids[static_cast<std::size_t>(i)].size());

  std::unordered_map<std::string, std::shared_ptr<ValueTable>> table_cache;
  auto frozen_key = [&](int follower, const std::vector<ControlPath>& u) {
    std::string key = std::to_string(follower) + ":";
    for (int j = 1; j <= spec.n_followers; ++j) {
      if (j == follower) continue;
      for (int a : u[static_cast<std::size_t>(j - 1)])
        key += std::to_string(a) + ",";
      key += ";";
    }
    return key;
  };

  std::uint64_t nodes = 0, pruned = 0, leaves = 0;
  bool budget_hit = false;
  bool found = false;
  double best_j0 = -std::numeric_limits<double>::infinity();
  std::vector<int> best_key;
  ControlPath best_u0;
  std::vector<ControlPath> best_u;
  std::vector<std::shared_ptr<ValueTable>> best_tables;

  auto candidate_key = [&](const ControlPath& u0, const std::vector<ControlPath>& u) {
    std::vector<int> key;
    key.reserve(static_cast<std::size_t>(spec.steps * spec.players()));
    for (int k = 0; k < spec.steps; ++k) {
      key.push_back(u0[static_cast<std::size_t>(k)]);
      for (int i = 1; i <= spec.n_followers; ++i)
        key.push_back(u[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(k)]);
    }
    return key;
  };

  std::vector<ControlPath> u(static_cast<std::size_t>(spec.n_followers),
                             ControlPath(static_cast<std::size_t>(spec.steps), 0));
  for (;;) {
    std::vector<std::shared_ptr<ValueTable>> tables;
    std::vector<ValueTable> table_values;
    for (int i = 1; i <= spec.n_followers; ++i) {
      std::string key = frozen_key(i, u);
      auto it = table_cache.find(key);
      if (it == table_cache.end()) {
        auto t = std::make_shared<ValueTable>(
            lower_value_function(spec, i, u, lattice, opts.workers));
        it = table_cache.emplace(key, std::move(t)).first;
      }
      tables.push_back(it->second);
      table_values.push_back(*it->second);
    }
    std::vector<std::vector<std::vector<double>>> max_tail;
    for (int p = 0; p <= spec.n_followers; ++p)
      max_tail.push_back(
          detail::max_tail_values(spec, p, lattice, &u, opts.workers));

    detail::FixedFollowerSearch search{
        spec,   u,       table_values, max_tail, lattice, opts,
        &nodes, &pruned, &leaves,      &budget_hit};
    if (found) search.prune_level = best_j0;
    search.run();
    if (search.found && (!found || search.best_j0 >= best_j0)) {
      std::vector<int> key = candidate_key(search.best_u0, u);
      if (!found || search.best_j0 > best_j0 || key < best_key) {
        found = true;
        best_j0 = search.best_j0;
        best_key = std::move(key);
        best_u0 = search.best_u0;
        best_u = u;
        best_tables = tables;
      }
    }
    if (budget_hit) break;

    // next follower profile path (odometer over followers then steps)
    int fi = spec.n_followers - 1, ki = spec.steps - 1;
    for (;;) {
      if (++u[static_cast<std::size_t>(fi)][static_cast<std::size_t>(ki)] <
          sizes[static_cast<std::size_t>(fi)])
        break;
      u[static_cast<std::size_t>(fi)][static_cast<std::size_t>(ki)] = 0;
      if (--ki < 0) {
        ki = spec.steps - 1;
        if (--fi < 0) break;
      }
    }
    if (fi < 0) break;
  }

  report.nodes_expanded = nodes;
  report.pruned = pruned;
  report.leaves_checked = leaves;
  report.optimal = !budget_hit;
  report.found = found;
  if (found) {
    report.leader_path = best_u0;
    report.follower_paths = best_u;
    for (const auto& t : best_tables) report.tables.push_back(*t);
    detail::finish_report(spec, report, opts);
  }
  return report;
}

// Leader response when punishing follower i at (step k, state x) after
// observing the follower's current action: the minimizer of the follower's
// one-step value against the guarantee table's continuation, with the other
// followers taken at their reference paths.
inline int punishment_response(const DifferentialGameSpec& spec,
                               const ValueTable& table, int follower, int k,
                               std::span<const double> x, int observed_action,
                               const std::vector<ControlPath>& u_star) {
  const int d = spec.state_dim;
  const double dt = spec.dt();
  const int N = spec.steps;
  std::vector<int> actions(static_cast<std::size_t>(spec.players()));
  actions[static_cast<std::size_t>(follower)] = observed_action;
  for (int j = 1; j <= spec.n_followers; ++j)
    if (j != follower)
      actions[static_cast<std::size_t>(j)] =
          u_star[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(k)];
  EvalPoint pt;
  pt.t = spec.time_at(k);
  pt.x = x;
  std::vector<double> y(static_cast<std::size_t>(d));
  EvalPoint pt_next;
  double best = std::numeric_limits<double>::infinity();
  int arg = 0;
  for (int a0 = 0; a0 < spec.grids[0].size(); ++a0) {
    actions[0] = a0;
    detail::set_controls(pt, spec, actions);
    for (int j = 0; j < d; ++j)
      y[static_cast<std::size_t>(j)] =
          x[static_cast<std::size_t>(j)] +
          dt * spec.dynamics[static_cast<std::size_t>(j)].eval(pt);
    double cont;
    if (k + 1 == N) {
      pt_next.x = y;
      cont = spec.terminal[static_cast<std::size_t>(follower)].eval(pt_next);
    } else {
      cont = table.lattice->interpolate(
          k + 1, table.values[static_cast<std::size_t>(k) + 1], y);
    }
    double q = dt * spec.running[static_cast<std::size_t>(follower)].eval(pt) + cont;
    if (q < best) {
      best = q;
      arg = a0;
    }
  }
  return arg;
}

// Nonanticipative leader strategy: follow the reference leader path while
// every follower conforms to the reference profile; once a deviation is
// observed (same step, before the leader commits), punish the first
// deviator with the feedback minimizer from its guarantee table.
class NonanticipativeStrategy {
 public:
  NonanticipativeStrategy(ControlPath u0_star, std::vector<ControlPath> u_star,
                          std::vector<ValueTable> tables)
      : u0_star_(std::move(u0_star)),
        u_star_(std::move(u_star)),
        tables_(std::move(tables)) {
    reset();
  }

  void reset() {
    deviated_ = false;
    punished_ = -1;
    tau_.assign(u_star_.size(), -1);
  }

  int act(const DifferentialGameSpec& spec, int k, std::span<const double> x,
          std::span<const int> follower_actions) {
    for (std::size_t i = 0; i < u_star_.size(); ++i) {
      if (tau_[i] < 0 &&
          follower_actions[i] != u_star_[i][static_cast<std::size_t>(k)]) {
        tau_[i] = k;
        if (!deviated_) {
          deviated_ = true;
          punished_ = static_cast<int>(i) + 1;
        }
      }
    }
    if (!deviated_) return u0_star_[static_cast<std::size_t>(k)];
    return punishment_response(
        spec, tables_[static_cast<std::size_t>(punished_ - 1)], punished_, k, x,
        follower_actions[static_cast<std::size_t>(punished_ - 1)], u_star_);
  }

  bool deviated() const { return deviated_; }
  int punished_follower() const { return punished_; }
  const std::vector<int>& deviation_steps() const { return tau_; }
  const ControlPath& reference_leader_path() const { return u0_star_; }
  const std::vector<ControlPath>& reference_profile() const { return u_star_; }
  const std::vector<ValueTable>& tables() const { return tables_; }

 private:
  ControlPath u0_star_;
  std::vector<ControlPath> u_star_;
  std::vector<ValueTable> tables_;
  bool deviated_ = false;
  int punished_ = -1;
  std::vector<int> tau_;
};

inline NonanticipativeStrategy build_punishment_diff(
    const DifferentialGameSpec& spec, const ControlPath& u0_star,
    const std::vector<ControlPath>& u_star, std::vector<ValueTable> tables) {
  validate_control_path(spec, 0, u0_star);
  for (int i = 1; i <= spec.n_followers; ++i)
    validate_control_path(spec, i, u_star[static_cast<std::size_t>(i - 1)]);
  if (static_cast<int>(tables.size()) != spec.n_followers)
    throw Error("build_punishment_diff needs one value table per follower");
  return NonanticipativeStrategy(u0_star, u_star, std::move(tables));
}

struct PlayResult {
  Trajectory trajectory;
  ControlPath leader_path;
  std::vector<double> payoffs;
  std::vector<int> deviation_steps;  // first divergence per follower, -1 if none
};

// Steps the strategy against the given follower paths and reports the
// realized motion, payoffs and detected deviations.
inline PlayResult simulate_play(const DifferentialGameSpec& spec,
                                NonanticipativeStrategy& strategy,
                                const std::vector<ControlPath>& follower_paths) {
  for (int i = 1; i <= spec.n_followers; ++i)
    validate_control_path(spec, i, follower_paths[static_cast<std::size_t>(i - 1)]);
  strategy.reset();

  const int N = spec.steps;
  const int d = spec.state_dim;
  const double dt = spec.dt();

  PlayResult result;
  result.trajectory.start_step = 0;
  result.trajectory.running.assign(static_cast<std::size_t>(spec.players()), {0.0});
  std::vector<double> x = spec.x0;
  std::vector<double> z(static_cast<std::size_t>(spec.players()), 0.0);
  result.trajectory.times.push_back(0.0);
  result.trajectory.states.push_back(x);

  std::vector<int> actions(static_cast<std::size_t>(spec.players()));
  std::vector<int> observed(static_cast<std::size_t>(spec.n_followers));
  std::vector<double> fx(static_cast<std::size_t>(d));
  for (int k = 0; k < N; ++k) {
    for (int i = 1; i <= spec.n_followers; ++i)
      observed[static_cast<std::size_t>(i - 1)] =
          follower_paths[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(k)];
    int a0 = strategy.act(spec, k, x, observed);
    result.leader_path.push_back(a0);
    actions[0] = a0;
    for (int i = 1; i <= spec.n_followers; ++i)
      actions[static_cast<std::size_t>(i)] = observed[static_cast<std::size_t>(i - 1)];
    EvalPoint pt;
    pt.t = spec.time_at(k);
    pt.x = x;
    detail::set_controls(pt, spec, actions);
    for (int j = 0; j < d; ++j)
      fx[static_cast<std::size_t>(j)] = spec.dynamics[static_cast<std::size_t>(j)].eval(pt);
    for (int i = 0; i < spec.players(); ++i)
      z[static_cast<std::size_t>(i)] +=
          dt * spec.running[static_cast<std::size_t>(i)].eval(pt);
    for (int j = 0; j < d; ++j)
      x[static_cast<std::size_t>(j)] += dt * fx[static_cast<std::size_t>(j)];
    result.trajectory.times.push_back(spec.time_at(k + 1));
    result.trajectory.states.push_back(x);
    for (int i = 0; i < spec.players(); ++i)
      result.trajectory.running[static_cast<std::size_t>(i)].push_back(
          z[static_cast<std::size_t>(i)]);
  }
  result.payoffs = full_payoffs(spec, result.trajectory);
  result.deviation_steps = strategy.deviation_steps();
  return result;
}

struct SweepResult {
  double max_profit = 0.0;
  int worst_follower = 0;           // 0 when no deviation profits
  ControlPath worst_path;           // the most profitable deviation found
  std::vector<double> equilibrium_payoffs;
  std::vector<double> profits;      // best deviation profit per follower
  double c_hat = 0.0;               // max_profit / dt when positive
  std::uint64_t states_visited = 0;
};

// Best unilateral deviation of each follower against the punishment
// strategy, over all piecewise-constant paths. Exact: once punished, the
// leader's response depends only on (step, state, observed action), so the
// deviator's optimum is a recursion over exactly-reached states, memoized
// on their bit patterns.
inline SweepResult deviation_sweep(const DifferentialGameSpec& spec,
                                   const ControlPath& u0_star,
                                   const std::vector<ControlPath>& u_star,
                                   std::span<const ValueTable> tables,
                                   std::uint64_t max_states = 5000000) {
  const int N = spec.steps;
  const int d = spec.state_dim;
  const double dt = spec.dt();

  Trajectory reference = integrate(spec, u0_star, u_star);
  SweepResult result;
  result.equilibrium_payoffs = full_payoffs(spec, reference);
  result.max_profit = -std::numeric_limits<double>::infinity();

  for (int i = 1; i <= spec.n_followers; ++i) {
    const ValueTable& table = tables[static_cast<std::size_t>(i - 1)];
    const int own_size = spec.grids[static_cast<std::size_t>(i)].size();
    std::unordered_map<std::uint64_t,
                       std::vector<std::pair<std::vector<double>, std::pair<double, int>>>>
        memo;

    // Best continuation payoff for the deviator from (k, x) under punishment.
    auto punished_value = [&](auto&& self, int k,
                              const std::vector<double>& x) -> std::pair<double, int> {
      if (k == N) {
        EvalPoint pt;
        pt.x = x;
        return {spec.terminal[static_cast<std::size_t>(i)].eval(pt), -1};
      }
      std::uint64_t h = detail::state_hash(k, x);
      auto& bucket = memo[h];
      for (const auto& e : bucket)
        if (e.first == x) return e.second;
      if (memo.size() > max_states)
        throw Error("deviation sweep exceeded its state budget");

      std::vector<int> actions(static_cast<std::size_t>(spec.players()));
      for (int j = 1; j <= spec.n_followers; ++j)
        if (j != i)
          actions[static_cast<std::size_t>(j)] =
              u_star[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(k)];
      EvalPoint pt;
      pt.t = spec.time_at(k);
      std::vector<double> y(static_cast<std::size_t>(d));
      double best = -std::numeric_limits<double>::infinity();
      int best_action = 0;
      for (int ai = 0; ai < own_size; ++ai) {
        int a0 = punishment_response(spec, table, i, k, x, ai, u_star);
        actions[0] = a0;
        actions[static_cast<std::size_t>(i)] = ai;
        pt.x = x;
        detail::set_controls(pt, spec, actions);
        for (int j = 0; j < d; ++j)
          y[static_cast<std::size_t>(j)] =
              x[static_cast<std::size_t>(j)] +
              dt * spec.dynamics[static_cast<std::size_t>(j)].eval(pt);
        double step_g = dt * spec.running[static_cast<std::size_t>(i)].eval(pt);
        double v = step_g + self(self, k + 1, y).first;
        if (v > best) {
          best = v;
          best_action = ai;
        }
      }
      bucket.emplace_back(x, std::make_pair(best, best_action));
      return {best, best_action};
    };

    // Deviate first at step tau (any non-reference action), conform before.
    double follower_best = result.equilibrium_payoffs[static_cast<std::size_t>(i)];
    int best_tau = -1;
    int best_first = -1;
    for (int tau = 0; tau < N; ++tau) {
      const std::vector<double>& x_tau = reference.state_at(tau);
      double z_tau = reference.z_at(i, tau);
      std::vector<int> actions(static_cast<std::size_t>(spec.players()));
      for (int j = 1; j <= spec.n_followers; ++j)
        if (j != i)
          actions[static_cast<std::size_t>(j)] =
              u_star[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(tau)];
      EvalPoint pt;
      pt.t = spec.time_at(tau);
      std::vector<double> y(static_cast<std::size_t>(d));
      for (int ai = 0; ai < own_size; ++ai) {
        if (ai == u_star[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(tau)])
          continue;
        int a0 = punishment_response(spec, table, i, tau, x_tau, ai, u_star);
        actions[0] = a0;
        actions[static_cast<std::size_t>(i)] = ai;
        pt.x = x_tau;
        detail::set_controls(pt, spec, actions);
        for (int j = 0; j < d; ++j)
          y[static_cast<std::size_t>(j)] =
              x_tau[static_cast<std::size_t>(j)] +
              dt * spec.dynamics[static_cast<std::size_t>(j)].eval(pt);
        double step_g = dt * spec.running[static_cast<std::size_t>(i)].eval(pt);
        double total =
            z_tau + step_g + punished_value(punished_value, tau + 1, y).first;
        if (total > follower_best) {
          follower_best = total;
          best_tau = tau;
          best_first = ai;
        }
      }
    }
    result.states_visited += memo.size();

    double profit =
        follower_best - result.equilibrium_payoffs[static_cast<std::size_t>(i)];
    result.profits.push_back(profit);
    if (profit > result.max_profit) {
      result.max_profit = profit;
      result.worst_follower = i;
      // Reconstruct the most profitable path when it beats conformance.
      result.worst_path = u_star[static_cast<std::size_t>(i - 1)];
      if (best_tau >= 0) {
        std::vector<double> x = reference.state_at(best_tau);
        int k = best_tau;
        int ai = best_first;
        std::vector<int> actions(static_cast<std::size_t>(spec.players()));
        EvalPoint pt;
        std::vector<double> y(static_cast<std::size_t>(d));
        while (k < N) {
          result.worst_path[static_cast<std::size_t>(k)] = ai;
          int a0 = punishment_response(spec, table, i, k, x, ai, u_star);
          actions[0] = a0;
          actions[static_cast<std::size_t>(i)] = ai;
          for (int j = 1; j <= spec.n_followers; ++j)
            if (j != i)
              actions[static_cast<std::size_t>(j)] =
                  u_star[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(k)];
          pt.t = spec.time_at(k);
          pt.x = x;
          detail::set_controls(pt, spec, actions);
          for (int j = 0; j < d; ++j)
            y[static_cast<std::size_t>(j)] =
                x[static_cast<std::size_t>(j)] +
                dt * spec.dynamics[static_cast<std::size_t>(j)].eval(pt);
          x = y;
          ++k;
          if (k < N) ai = punished_value(punished_value, k, x).second;
        }
      }
    }
  }
  result.c_hat = result.max_profit > 0.0 ? result.max_profit / dt : 0.0;
  return result;
}

}  // namespace istack
