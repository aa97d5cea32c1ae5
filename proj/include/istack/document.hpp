#pragma once

// Game definition documents: JSON ingestion, validation and canonical
// serialization. See README for the schema.

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "istack/common.hpp"
#include "istack/game.hpp"

namespace istack {

using GameDocument = std::variant<StaticGame, DifferentialGameSpec>;

namespace detail {

inline std::pair<int, int> line_column(std::string_view text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline StrategyGrid parse_grid(const nlohmann::json& j, int player) {
  const std::string where = "players[" + std::to_string(player) + "]";
  if (!j.is_object()) throw ValidationError(where + ": grid must be an object");
  if (j.contains("points")) {
    const auto& pts = j.at("points");
    if (!pts.is_array() || pts.empty())
      throw ValidationError(where + ": empty grid");
    std::vector<std::vector<double>> out;
    out.reserve(pts.size());
    for (const auto& p : pts) {
      if (p.is_number()) {
        out.push_back({p.get<double>()});
      } else if (p.is_array()) {
        std::vector<double> v;
        for (const auto& c : p) {
          if (!c.is_number())
            throw ValidationError(where + ": grid coordinates must be numbers");
          v.push_back(c.get<double>());
        }
        out.push_back(std::move(v));
      } else {
        throw ValidationError(where + ": grid points must be numbers or arrays");
      }
    }
    try {
      return StrategyGrid::from_points(std::move(out));
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  if (j.contains("min") && j.contains("max") && j.contains("step")) {
    try {
      return StrategyGrid::from_range(j.at("min").get<double>(),
                                      j.at("max").get<double>(),
                                      j.at("step").get<double>());
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  throw ValidationError(where + ": grid needs either \"points\" or \"min\"/\"max\"/\"step\"");
}

inline Expr parse_expr_field(const nlohmann::json& j, const std::string& where) {
  if (!j.is_string())
    throw ValidationError(where + ": expected an expression string");
  try {
    return Expr::parse(j.get<std::string>());
  } catch (const ParseError& e) {
    throw ParseError(where + ": " + e.what(), e.line, e.column);
  }
}

inline nlohmann::json grid_to_json(const StrategyGrid& g) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : g.points) {
    if (p.size() == 1) {
      pts.push_back(p[0]);
    } else {
      nlohmann::json v = nlohmann::json::array();
      for (double c : p) v.push_back(c);
      pts.push_back(v);
    }
  }
  return nlohmann::json{{"points", pts}};
}

}  // namespace detail

inline StaticGame parse_static_game(const nlohmann::json& doc) {
  StaticGame game;
  const auto& players = doc.at("players");
  if (!players.is_array() || players.size() < 2)
    throw ValidationError("players: need a leader and at least one follower");
  game.n_followers = static_cast<int>(players.size()) - 1;
  if (game.players() > kMaxPlayers)
    throw ValidationError("too many players (at most " +
                          std::to_string(kMaxPlayers) + ")");
  for (std::size_t i = 0; i < players.size(); ++i)
    game.grids.push_back(detail::parse_grid(players[i], static_cast<int>(i)));

  const auto& payoffs = doc.at("payoffs");
  if (!payoffs.is_array() ||
      static_cast<int>(payoffs.size()) != game.players())
    throw ValidationError("dimension mismatch: expected " +
                          std::to_string(game.players()) +
                          " payoff expressions");
  std::vector<int> dims;
  for (const auto& g : game.grids) dims.push_back(g.dim);
  for (std::size_t i = 0; i < payoffs.size(); ++i) {
    const std::string where = "payoffs[" + std::to_string(i) + "]";
    Expr e = detail::parse_expr_field(payoffs[i], where);
    e.validate_symbols(false, 0, dims, where);
    game.payoff_exprs.push_back(std::move(e));
  }
  for (const auto& e : game.payoff_exprs)
    game.payoffs.push_back(tabulate(e, game.grids));
  game.validate();
  return game;
}

inline DifferentialGameSpec parse_differential_game(const nlohmann::json& doc) {
  DifferentialGameSpec spec;
  const auto& players = doc.at("players");
  if (!players.is_array() || players.size() < 2)
    throw ValidationError("players: need a leader and at least one follower");
  spec.n_followers = static_cast<int>(players.size()) - 1;
  for (std::size_t i = 0; i < players.size(); ++i)
    spec.grids.push_back(detail::parse_grid(players[i], static_cast<int>(i)));

  spec.horizon = doc.at("horizon").get<double>();
  spec.steps = doc.value("steps", 1);

  const auto& x0 = doc.at("x0");
  if (x0.is_number()) {
    spec.x0 = {x0.get<double>()};
  } else if (x0.is_array()) {
    for (const auto& v : x0) spec.x0.push_back(v.get<double>());
  } else {
    throw ValidationError("x0: expected a number or an array");
  }
  spec.state_dim = static_cast<int>(spec.x0.size());

  const auto& dyn = doc.at("dynamics");
  if (!dyn.is_array() || static_cast<int>(dyn.size()) != spec.state_dim)
    throw ValidationError("dimension mismatch: dynamics length vs x0 length");
  for (std::size_t i = 0; i < dyn.size(); ++i)
    spec.dynamics.push_back(detail::parse_expr_field(
        dyn[i], "dynamics[" + std::to_string(i) + "]"));

  const auto& term = doc.at("terminal");
  if (!term.is_array() || static_cast<int>(term.size()) != spec.players())
    throw ValidationError("dimension mismatch: expected one terminal payoff per player");
  for (std::size_t i = 0; i < term.size(); ++i)
    spec.terminal.push_back(detail::parse_expr_field(
        term[i], "terminal[" + std::to_string(i) + "]"));

  // Running payoffs: a string per player, or an array of component strings
  // (the components are kept for additive-structure detection).
  if (doc.contains("running")) {
    const auto& run = doc.at("running");
    if (!run.is_array() || static_cast<int>(run.size()) != spec.players())
      throw ValidationError("dimension mismatch: expected one running payoff per player");
    for (std::size_t i = 0; i < run.size(); ++i) {
      const std::string where = "running[" + std::to_string(i) + "]";
      std::vector<Expr> components;
      if (run[i].is_array()) {
        if (run[i].empty()) throw ValidationError(where + ": empty component list");
        for (std::size_t c = 0; c < run[i].size(); ++c)
          components.push_back(detail::parse_expr_field(
              run[i][c], where + "[" + std::to_string(c) + "]"));
      } else {
        components.push_back(detail::parse_expr_field(run[i], where));
      }
      spec.running.push_back(Expr::sum(components));
      spec.running_components.push_back(std::move(components));
    }
  } else {
    for (int i = 0; i < spec.players(); ++i) {
      spec.running.push_back(Expr::constant(0.0));
      spec.running_components.push_back({Expr::constant(0.0)});
    }
  }

  if (doc.contains("state_grid")) {
    const auto& sg = doc.at("state_grid");
    if (!sg.is_array() || static_cast<int>(sg.size()) != spec.state_dim)
      throw ValidationError("dimension mismatch: state_grid length vs state dimension");
    for (const auto& axis : sg) {
      AxisSpec a;
      if (axis.contains("min")) a.lo = axis.at("min").get<double>();
      if (axis.contains("max")) a.hi = axis.at("max").get<double>();
      if (axis.contains("points")) a.points = axis.at("points").get<int>();
      spec.state_grid.push_back(a);
    }
  } else {
    spec.state_grid.assign(static_cast<std::size_t>(spec.state_dim), AxisSpec{});
  }

  spec.validate();
  return spec;
}

// Parses a game definition document. Errors carry line/column positions for
// JSON syntax problems and field names for semantic ones.
inline GameDocument parse_game_document(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    auto [line, col] = detail::line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ParseError(std::string("syntax error: ") + e.what(), line, col);
  }
  if (!doc.is_object() || !doc.contains("kind"))
    throw ValidationError("document must be an object with a \"kind\" field");
  const std::string kind = doc.at("kind").get<std::string>();
  try {
    if (kind == "static") return parse_static_game(doc);
    if (kind == "differential") return parse_differential_game(doc);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed document: ") + e.what());
  }
  throw ValidationError("kind must be \"static\" or \"differential\"");
}

inline nlohmann::json static_game_to_json(const StaticGame& game) {
  if (game.payoff_exprs.empty())
    throw Error("cannot serialize a game built without payoff expressions");
  nlohmann::json doc;
  doc["kind"] = "static";
  nlohmann::json players = nlohmann::json::array();
  for (const auto& g : game.grids) players.push_back(detail::grid_to_json(g));
  doc["players"] = players;
  nlohmann::json payoffs = nlohmann::json::array();
  for (const auto& e : game.payoff_exprs) payoffs.push_back(e.to_string());
  doc["payoffs"] = payoffs;
  return doc;
}

inline nlohmann::json differential_game_to_json(const DifferentialGameSpec& spec) {
  nlohmann::json doc;
  doc["kind"] = "differential";
  nlohmann::json players = nlohmann::json::array();
  for (const auto& g : spec.grids) players.push_back(detail::grid_to_json(g));
  doc["players"] = players;
  nlohmann::json dyn = nlohmann::json::array();
  for (const auto& e : spec.dynamics) dyn.push_back(e.to_string());
  doc["dynamics"] = dyn;
  nlohmann::json term = nlohmann::json::array();
  for (const auto& e : spec.terminal) term.push_back(e.to_string());
  doc["terminal"] = term;
  nlohmann::json run = nlohmann::json::array();
  for (const auto& comps : spec.running_components) {
    if (comps.size() == 1) {
      run.push_back(comps[0].to_string());
    } else {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& c : comps) arr.push_back(c.to_string());
      run.push_back(arr);
    }
  }
  doc["running"] = run;
  doc["horizon"] = spec.horizon;
  doc["x0"] = spec.x0;
  doc["steps"] = spec.steps;
  nlohmann::json sg = nlohmann::json::array();
  for (const auto& axis : spec.state_grid) {
    nlohmann::json a;
    if (axis.lo) a["min"] = *axis.lo;
    if (axis.hi) a["max"] = *axis.hi;
    a["points"] = axis.points;
    sg.push_back(a);
  }
  doc["state_grid"] = sg;
  return doc;
}

// Canonical document text: grids realized as explicit point lists and
// expressions printed in canonical form. Applying parse + serialize twice
// yields the same bytes as applying it once.
inline std::string serialize_game_document(const GameDocument& game) {
  nlohmann::json doc = std::holds_alternative<StaticGame>(game)
                           ? static_game_to_json(std::get<StaticGame>(game))
                           : differential_game_to_json(
                                 std::get<DifferentialGameSpec>(game));
  return doc.dump(2) + "\n";
}

}  // namespace istack
