#pragma once

// Static inverse Stackelberg solvers: admissible sets, leader-optimal pair
// selection, punishment incentive strategies, follower best-response and
// Nash sets, and the ordinary Stackelberg baseline.

#include <algorithm>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "istack/common.hpp"
#include "istack/game.hpp"
#include "istack/zerosum.hpp"

namespace istack {

// A total reaction map from follower profiles to leader actions: the target
// profile gets the target leader action, everything else the punishment.
struct IncentiveStrategy {
  std::vector<int> target_profile;
  int target_leader_action = 0;
  std::vector<int> follower_sizes;
  std::vector<int> punishment_map;  // flat over the follower-profile lattice

  std::size_t profile_rank(std::span<const int> profile) const {
    std::size_t rank = 0;
    for (std::size_t i = 0; i < follower_sizes.size(); ++i)
      rank = rank * static_cast<std::size_t>(follower_sizes[i]) +
             static_cast<std::size_t>(profile[i]);
    return rank;
  }

  int leader_action(std::span<const int> profile) const {
    return punishment_map[profile_rank(profile)];
  }
};

struct StaticSolutionReport {
  bool found = false;
  int leader_action = -1;
  std::vector<int> profile;
  double leader_payoff = 0.0;
  std::vector<double> follower_payoffs;
  double v_lower = 0.0;  // two-player diagnostics
  double v_upper = 0.0;
  std::vector<double> thresholds;  // per-follower guarantee level at the solution
  std::size_t admissible_count = 0;
  std::size_t candidate_count = 0;
  // Equilibrium payoff minus the best unilateral deviation payoff under the
  // built incentive strategy; +inf when a follower has no alternative action.
  std::vector<double> margins;
  bool has_incentive = false;
  IncentiveStrategy incentive;
};

namespace detail {

inline Mat two_player_matrix(const StaticGame& game, int player) {
  Mat m(game.grids[0].size(), game.grids[1].size());
  int idx[2];
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) {
      idx[0] = i;
      idx[1] = j;
      m.at(i, j) = game.payoffs[static_cast<std::size_t>(player)].at(
          std::span<const int>(idx, 2));
    }
  return m;
}

// Per-follower guarantee thresholds max_{u_i} min_{u_0} J_i(u_0, u_i, u_-i),
// indexed by the rank of u_-i in the others' lattice.
inline std::vector<std::vector<double>> follower_thresholds(const StaticGame& game) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(game.n_followers));
  auto sizes = game.follower_sizes();
  for (int i = 1; i <= game.n_followers; ++i) {
    std::vector<int> others_shape;
    for (int j = 0; j < game.n_followers; ++j)
      if (j != i - 1) others_shape.push_back(sizes[static_cast<std::size_t>(j)]);
    auto& table = out[static_cast<std::size_t>(i - 1)];
    table.reserve(others_shape.empty() ? 1 : 0);
    std::vector<int> profile(static_cast<std::size_t>(game.n_followers), 0);
    for_each_index(others_shape, [&](std::span<const int> others) {
      std::size_t pos = 0;
      for (int j = 0; j < game.n_followers; ++j)
        if (j != i - 1) profile[static_cast<std::size_t>(j)] = others[pos++];
      table.push_back(per_follower_lower_value(game, i, profile).value);
    });
  }
  return out;
}

inline std::size_t others_rank(const StaticGame& game, int follower,
                               std::span<const int> profile) {
  auto sizes = game.follower_sizes();
  std::size_t rank = 0;
  for (int j = 0; j < game.n_followers; ++j) {
    if (j == follower - 1) continue;
    rank = rank * static_cast<std::size_t>(sizes[static_cast<std::size_t>(j)]) +
           static_cast<std::size_t>(profile[static_cast<std::size_t>(j)]);
  }
  return rank;
}

// Margins of the target under an incentive strategy: equilibrium payoff
// minus the best unilateral deviation payoff, per follower.
inline std::vector<double> incentive_margins(const StaticGame& game,
                                             const IncentiveStrategy& alpha) {
  std::vector<double> margins;
  const auto& target = alpha.target_profile;
  std::vector<int> probe(target.begin(), target.end());
  for (int i = 1; i <= game.n_followers; ++i) {
    double equilibrium =
        game.payoff(i, alpha.leader_action(target), target);
    double best_dev = -std::numeric_limits<double>::infinity();
    int own = game.grids[static_cast<std::size_t>(i)].size();
    for (int ai = 0; ai < own; ++ai) {
      if (ai == target[static_cast<std::size_t>(i - 1)]) continue;
      probe[static_cast<std::size_t>(i - 1)] = ai;
      best_dev = std::max(best_dev,
                          game.payoff(i, alpha.leader_action(probe), probe));
    }
    probe[static_cast<std::size_t>(i - 1)] = target[static_cast<std::size_t>(i - 1)];
    margins.push_back(own <= 1 ? std::numeric_limits<double>::infinity()
                               : equilibrium - best_dev);
  }
  return margins;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Two-player operations (one follower).

inline bool in_admissible_two_player(const StaticGame& game, int a0, int a1,
                                     double v_minus, double eps_incl = 0.0) {
  int idx[2] = {a0, a1};
  return game.payoffs[1].at(std::span<const int>(idx, 2)) >= v_minus - eps_incl;
}

// All pairs (a0, a1) whose follower payoff reaches the guarantee level V-,
// in lexicographic index order.
inline std::vector<std::pair<int, int>> admissible_set_two_player(
    const StaticGame& game, double eps_incl = 0.0) {
  if (game.n_followers != 1)
    throw Error("admissible_set_two_player needs exactly one follower");
  Mat J1 = detail::two_player_matrix(game, 1);
  double v_minus = lower_value(J1).value;
  std::vector<std::pair<int, int>> out;
  for (int a0 = 0; a0 < J1.rows; ++a0)
    for (int a1 = 0; a1 < J1.cols; ++a1)
      if (J1.at(a0, a1) >= v_minus - eps_incl) out.emplace_back(a0, a1);
  return out;
}

// Punishment strategy for a target pair: play the target leader action on
// the target, and the follower's worst-case leader action elsewhere.
inline IncentiveStrategy build_punishment_two_player(const StaticGame& game,
                                                     int target_a0, int target_a1,
                                                     double eps_incl = 0.0) {
  if (game.n_followers != 1)
    throw Error("build_punishment_two_player needs exactly one follower");
  Mat J1 = detail::two_player_matrix(game, 1);
  double v_minus = lower_value(J1).value;
  double margin = J1.at(target_a0, target_a1) - v_minus;
  if (margin < -eps_incl)
    throw PunishmentRefusal(
        "target pair is not admissible: follower payoff falls short of the "
        "guarantee level by " + format_double(-margin),
        1, margin);

  IncentiveStrategy alpha;
  alpha.target_profile = {target_a1};
  alpha.target_leader_action = target_a0;
  alpha.follower_sizes = {J1.cols};
  alpha.punishment_map.resize(static_cast<std::size_t>(J1.cols));
  for (int a1 = 0; a1 < J1.cols; ++a1)
    alpha.punishment_map[static_cast<std::size_t>(a1)] =
        a1 == target_a1 ? target_a0 : column_argmin(J1, a1);
  return alpha;
}

// All follower actions maximizing a1 -> J1(alpha[a1], a1), ascending.
inline std::vector<int> follower_best_responses(const StaticGame& game,
                                                const IncentiveStrategy& alpha) {
  if (game.n_followers != 1)
    throw Error("follower_best_responses needs exactly one follower");
  int cols = game.grids[1].size();
  double best = -std::numeric_limits<double>::infinity();
  for (int a1 = 0; a1 < cols; ++a1) {
    int idx[2] = {alpha.punishment_map[static_cast<std::size_t>(a1)], a1};
    best = std::max(best, game.payoffs[1].at(std::span<const int>(idx, 2)));
  }
  std::vector<int> out;
  for (int a1 = 0; a1 < cols; ++a1) {
    int idx[2] = {alpha.punishment_map[static_cast<std::size_t>(a1)], a1};
    if (game.payoffs[1].at(std::span<const int>(idx, 2)) == best) out.push_back(a1);
  }
  return out;
}

inline StaticSolutionReport solve_inverse_two_player(const StaticGame& game,
                                                     double eps_incl = 0.0) {
  if (game.n_followers != 1)
    throw Error("solve_inverse_two_player needs exactly one follower");
  Mat J0 = detail::two_player_matrix(game, 0);
  Mat J1 = detail::two_player_matrix(game, 1);
  double v_minus = lower_value(J1).value;

  StaticSolutionReport report;
  report.v_lower = v_minus;
  report.v_upper = upper_value(J1).value;
  report.candidate_count =
      static_cast<std::size_t>(J0.rows) * static_cast<std::size_t>(J0.cols);

  double best = -std::numeric_limits<double>::infinity();
  for (int a0 = 0; a0 < J0.rows; ++a0)
    for (int a1 = 0; a1 < J0.cols; ++a1) {
      if (J1.at(a0, a1) < v_minus - eps_incl) continue;
      ++report.admissible_count;
      if (J0.at(a0, a1) > best) {
        best = J0.at(a0, a1);
        report.leader_action = a0;
        report.profile = {a1};
      }
    }
  // The admissible set contains the best-response graph, so it is nonempty.
  report.found = true;
  report.leader_payoff = best;
  report.follower_payoffs = {J1.at(report.leader_action, report.profile[0])};
  report.thresholds = {v_minus};
  report.incentive = build_punishment_two_player(game, report.leader_action,
                                                 report.profile[0], eps_incl);
  report.has_incentive = true;
  report.margins = detail::incentive_margins(game, report.incentive);
  return report;
}

// Ordinary Stackelberg baseline: the leader commits to a single action and
// the follower best-responds, team (leader-optimistic) tie-breaking.
inline StaticSolutionReport solve_ordinary_stackelberg(const StaticGame& game) {
  if (game.n_followers != 1)
    throw Error("solve_ordinary_stackelberg needs exactly one follower");
  Mat J0 = detail::two_player_matrix(game, 0);
  Mat J1 = detail::two_player_matrix(game, 1);

  StaticSolutionReport report;
  report.v_lower = lower_value(J1).value;
  report.v_upper = upper_value(J1).value;
  report.candidate_count =
      static_cast<std::size_t>(J0.rows) * static_cast<std::size_t>(J0.cols);

  double best = -std::numeric_limits<double>::infinity();
  for (int a0 = 0; a0 < J0.rows; ++a0) {
    double br = J1.at(a0, 0);
    for (int a1 = 1; a1 < J1.cols; ++a1) br = std::max(br, J1.at(a0, a1));
    for (int a1 = 0; a1 < J1.cols; ++a1) {
      if (J1.at(a0, a1) != br) continue;
      ++report.admissible_count;
      if (J0.at(a0, a1) > best) {
        best = J0.at(a0, a1);
        report.leader_action = a0;
        report.profile = {a1};
      }
    }
  }
  report.found = true;
  report.leader_payoff = best;
  report.follower_payoffs = {J1.at(report.leader_action, report.profile[0])};
  report.thresholds = {report.v_lower};
  report.margins = {0.0};  // the profile is a best response by construction
  return report;
}

// ---------------------------------------------------------------------------
// n-follower operations.

// All (a0, profile) tuples giving every follower at least its guarantee
// level against the others' profile. May be empty.
inline std::vector<std::pair<int, std::vector<int>>> admissible_set_n(
    const StaticGame& game, double eps_incl = 0.0) {
  auto thresholds = detail::follower_thresholds(game);
  auto sizes = game.follower_sizes();
  std::vector<std::pair<int, std::vector<int>>> out;
  for (int a0 = 0; a0 < game.grids[0].size(); ++a0) {
    for_each_index(sizes, [&](std::span<const int> profile) {
      for (int i = 1; i <= game.n_followers; ++i) {
        double need = thresholds[static_cast<std::size_t>(i - 1)]
                                [detail::others_rank(game, i, profile)];
        if (game.payoff(i, a0, profile) < need - eps_incl) return;
      }
      out.emplace_back(a0, std::vector<int>(profile.begin(), profile.end()));
    });
  }
  return out;
}

// Punishment strategy for an admissible (a0*, u*): off-target profiles are
// answered with the leader action minimizing the first deviating follower's
// payoff at that profile.
inline IncentiveStrategy build_punishment_n(const StaticGame& game, int target_a0,
                                            std::span<const int> target_profile,
                                            double eps_incl = 0.0) {
  auto sizes = game.follower_sizes();
  for (int i = 1; i <= game.n_followers; ++i) {
    double need = per_follower_lower_value(game, i, target_profile).value;
    double margin = game.payoff(i, target_a0, target_profile) - need;
    if (margin < -eps_incl)
      throw PunishmentRefusal("target is not admissible: follower " +
                                  std::to_string(i) +
                                  " falls short of its guarantee level by " +
                                  format_double(-margin),
                              i, margin);
  }

  IncentiveStrategy alpha;
  alpha.target_profile.assign(target_profile.begin(), target_profile.end());
  alpha.target_leader_action = target_a0;
  alpha.follower_sizes = sizes;
  std::size_t lattice = 1;
  for (int s : sizes) lattice *= static_cast<std::size_t>(s);
  alpha.punishment_map.resize(lattice);

  int leader_size = game.grids[0].size();
  for_each_index(sizes, [&](std::span<const int> profile) {
    std::size_t rank = alpha.profile_rank(profile);
    int deviator = -1;
    for (int j = 0; j < game.n_followers; ++j)
      if (profile[static_cast<std::size_t>(j)] !=
          target_profile[static_cast<std::size_t>(j)]) {
        deviator = j + 1;
        break;
      }
    if (deviator < 0) {
      alpha.punishment_map[rank] = target_a0;
      return;
    }
    int arg = 0;
    double best = game.payoff(deviator, 0, profile);
    for (int a0 = 1; a0 < leader_size; ++a0) {
      double v = game.payoff(deviator, a0, profile);
      if (v < best) {
        best = v;
        arg = a0;
      }
    }
    alpha.punishment_map[rank] = arg;
  });
  return alpha;
}

// Followers' Nash equilibria under a fixed incentive strategy: profiles from
// which no unilateral deviation improves the deviator's payoff.
inline std::vector<std::vector<int>> nash_set_under_incentive(
    const StaticGame& game, const IncentiveStrategy& alpha) {
  auto sizes = game.follower_sizes();
  std::vector<std::vector<int>> out;
  for_each_index(sizes, [&](std::span<const int> profile) {
    std::vector<int> probe(profile.begin(), profile.end());
    for (int i = 1; i <= game.n_followers; ++i) {
      double here = game.payoff(i, alpha.leader_action(profile), profile);
      for (int ai = 0; ai < sizes[static_cast<std::size_t>(i - 1)]; ++ai) {
        if (ai == profile[static_cast<std::size_t>(i - 1)]) continue;
        probe[static_cast<std::size_t>(i - 1)] = ai;
        if (game.payoff(i, alpha.leader_action(probe), probe) > here) return;
      }
      probe[static_cast<std::size_t>(i - 1)] = profile[static_cast<std::size_t>(i - 1)];
    }
    out.emplace_back(profile.begin(), profile.end());
  });
  return out;
}

inline StaticSolutionReport solve_inverse_n(const StaticGame& game,
                                            double eps_incl = 0.0,
                                            int workers = 1) {
  auto thresholds = detail::follower_thresholds(game);
  auto sizes = game.follower_sizes();
  int leader_size = game.grids[0].size();
  std::size_t lattice = 1;
  for (int s : sizes) lattice *= static_cast<std::size_t>(s);

  struct ChunkBest {
    bool found = false;
    double j0 = -std::numeric_limits<double>::infinity();
    int a0 = -1;
    std::vector<int> profile;
    std::size_t admissible = 0;
  };
  int n_chunks = std::max(1, std::min(workers, leader_size));
  std::vector<ChunkBest> chunks(static_cast<std::size_t>(n_chunks));
  std::size_t chunk_size =
      (static_cast<std::size_t>(leader_size) + static_cast<std::size_t>(n_chunks) - 1) /
      static_cast<std::size_t>(n_chunks);

  // Enumeration over the leader axis, chunked; within a chunk the scan is
  // lexicographic, and the ordered merge below keeps the global smallest-index
  // tie-break regardless of worker count.
  parallel_for(static_cast<std::size_t>(n_chunks), workers,
               [&](std::size_t cb, std::size_t ce) {
    for (std::size_t c = cb; c < ce; ++c) {
      ChunkBest& local = chunks[c];
      int a0_begin = static_cast<int>(c * chunk_size);
      int a0_end = std::min(leader_size, static_cast<int>((c + 1) * chunk_size));
      for (int a0 = a0_begin; a0 < a0_end; ++a0) {
        for_each_index(sizes, [&](std::span<const int> profile) {
          for (int i = 1; i <= game.n_followers; ++i) {
            double need = thresholds[static_cast<std::size_t>(i - 1)]
                                    [detail::others_rank(game, i, profile)];
            if (game.payoff(i, a0, profile) < need - eps_incl) return;
          }
          ++local.admissible;
          double j0 = game.payoff(0, a0, profile);
          if (!local.found || j0 > local.j0) {
            local.found = true;
            local.j0 = j0;
            local.a0 = a0;
            local.profile.assign(profile.begin(), profile.end());
          }
        });
      }
    }
  });

  StaticSolutionReport report;
  report.candidate_count = static_cast<std::size_t>(leader_size) * lattice;
  for (const ChunkBest& c : chunks) {
    report.admissible_count += c.admissible;
    if (c.found && (!report.found || c.j0 > report.leader_payoff)) {
      report.found = true;
      report.leader_payoff = c.j0;
      report.leader_action = c.a0;
      report.profile = c.profile;
    }
  }
  if (!report.found) return report;  // empty admissible set: a reported outcome

  for (int i = 1; i <= game.n_followers; ++i) {
    report.follower_payoffs.push_back(
        game.payoff(i, report.leader_action, report.profile));
    report.thresholds.push_back(
        thresholds[static_cast<std::size_t>(i - 1)]
                  [detail::others_rank(game, i, report.profile)]);
  }
  if (game.n_followers == 1) {
    Mat J1 = detail::two_player_matrix(game, 1);
    report.v_lower = lower_value(J1).value;
    report.v_upper = upper_value(J1).value;
  }
  report.incentive =
      build_punishment_n(game, report.leader_action, report.profile, eps_incl);
  report.has_incentive = true;
  report.margins = detail::incentive_margins(game, report.incentive);
  return report;
}

}  // namespace istack
