#pragma once

// Arithmetic expressions over the game symbols t, x[j] and u0[j]..un[j].
// Parsed from text into a tree stored in evaluation (postfix) order, so
// eval() is a flat stack walk with no recursion.
//
// Grammar (whitespace-insensitive):
//   expr    := term (('+'|'-') term)*
//   term    := unary (('*'|'/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?
//   primary := number | symbol | symbol '[' int ']'
//            | func '(' expr (',' expr)* ')' | '(' expr ')'
// Functions: min, max, pow (binary); exp, sin, cos, abs (unary).

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "istack/common.hpp"

namespace istack {

enum class ExprOp : std::uint8_t {
  kConst,
  kTime,
  kState,
  kControl,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kPow,
  kNeg,
  kMin,
  kMax,
  kExp,
  kSin,
  kCos,
  kAbs,
};

struct ExprNode {
  ExprOp op = ExprOp::kConst;
  double value = 0.0;  // kConst
  int player = -1;     // kControl
  int index = 0;       // kState / kControl coordinate
  int lhs = -1;
  int rhs = -1;
};

// One evaluation point: time, state and the control vector of each player.
struct EvalPoint {
  double t = 0.0;
  std::span<const double> x{};
  std::array<std::span<const double>, kMaxPlayers> u{};
};

class Expr {
 public:
  Expr() = default;

  static Expr parse(std::string_view text) {
    Parser p{text, 0};
    Expr e;
    e.root_ = e.parse_expr(p);
    p.skip_ws();
    if (p.pos != text.size())
      throw ParseError("unexpected trailing input", 1, static_cast<int>(p.pos) + 1);
    e.compute_depth();
    return e;
  }

  static Expr constant(double v) {
    Expr e;
    e.nodes_.push_back({ExprOp::kConst, v, -1, 0, -1, -1});
    e.root_ = 0;
    e.max_depth_ = 1;
    return e;
  }

  // Left-associative sum of the given expressions.
  static Expr sum(std::span<const Expr> terms) {
    if (terms.empty()) return constant(0.0);
    Expr out = terms[0];
    for (std::size_t i = 1; i + 0 < terms.size(); ++i) {
      int lhs = out.root_;
      int rhs = out.append(terms[i]);
      out.nodes_.push_back({ExprOp::kAdd, 0.0, -1, 0, lhs, rhs});
      out.root_ = static_cast<int>(out.nodes_.size()) - 1;
    }
    out.compute_depth();
    return out;
  }

  bool empty() const { return nodes_.empty(); }

  double eval(const EvalPoint& p) const {
    double stack[kMaxEvalDepth];
    int top = 0;
    for (const ExprNode& n : nodes_) {
      switch (n.op) {
        case ExprOp::kConst:
          stack[top++] = n.value;
          break;
        case ExprOp::kTime:
          stack[top++] = p.t;
          break;
        case ExprOp::kState:
          stack[top++] = p.x[static_cast<std::size_t>(n.index)];
          break;
        case ExprOp::kControl:
          stack[top++] =
              p.u[static_cast<std::size_t>(n.player)][static_cast<std::size_t>(n.index)];
          break;
        case ExprOp::kAdd:
          --top;
          stack[top - 1] += stack[top];
          break;
        case ExprOp::kSub:
          --top;
          stack[top - 1] -= stack[top];
          break;
        case ExprOp::kMul:
          --top;
          stack[top - 1] *= stack[top];
          break;
        case ExprOp::kDiv:
          --top;
          stack[top - 1] /= stack[top];
          break;
        case ExprOp::kPow:
          --top;
          stack[top - 1] = std::pow(stack[top - 1], stack[top]);
          break;
        case ExprOp::kNeg:
          stack[top - 1] = -stack[top - 1];
          break;
        case ExprOp::kMin:
          --top;
          stack[top - 1] = stack[top - 1] < stack[top] ? stack[top - 1] : stack[top];
          break;
        case ExprOp::kMax:
          --top;
          stack[top - 1] = stack[top - 1] > stack[top] ? stack[top - 1] : stack[top];
          break;
        case ExprOp::kExp:
          stack[top - 1] = std::exp(stack[top - 1]);
          break;
        case ExprOp::kSin:
          stack[top - 1] = std::sin(stack[top - 1]);
          break;
        case ExprOp::kCos:
          stack[top - 1] = std::cos(stack[top - 1]);
          break;
        case ExprOp::kAbs:
          stack[top - 1] = std::fabs(stack[top - 1]);
          break;
      }
    }
    return stack[0];
  }

  std::string to_string() const {
    if (nodes_.empty()) return "0";
    std::string out;
    print(root_, 0, out);
    return out;
  }

  bool uses_time() const {
    for (const auto& n : nodes_)
      if (n.op == ExprOp::kTime) return true;
    return false;
  }

  bool uses_state() const {
    for (const auto& n : nodes_)
      if (n.op == ExprOp::kState) return true;
    return false;
  }

  bool uses_control(int player) const {
    for (const auto& n : nodes_)
      if (n.op == ExprOp::kControl && n.player == player) return true;
    return false;
  }

  // Splits the top-level +/- chain into standalone addends (signs folded in).
  std::vector<Expr> top_level_terms() const {
    std::vector<Expr> terms;
    collect_terms(root_, false, terms);
    return terms;
  }

  // Checks that every symbol is available in a context with the given state
  // dimension and per-player control dimensions. `where` names the offending
  // document field in error messages.
  void validate_symbols(bool allow_time, int state_dim,
                        std::span<const int> control_dims,
                        const std::string& where) const {
    for (const auto& n : nodes_) {
      switch (n.op) {
        case ExprOp::kTime:
          if (!allow_time)
            throw ValidationError(where + ": symbol 't' is not allowed here");
          break;
        case ExprOp::kState:
          if (state_dim <= 0)
            throw ValidationError(where + ": symbol 'x' is not allowed here");
          if (n.index >= state_dim)
            throw ValidationError(where + ": state index out of range: x[" +
                                  std::to_string(n.index) + "] with dimension " +
                                  std::to_string(state_dim));
          break;
        case ExprOp::kControl:
          if (n.player >= static_cast<int>(control_dims.size()))
            throw ValidationError(where + ": unknown symbol 'u" +
                                  std::to_string(n.player) + "'");
          if (n.index >= control_dims[static_cast<std::size_t>(n.player)])
            throw ValidationError(
                where + ": control index out of range: u" +
                std::to_string(n.player) + "[" + std::to_string(n.index) +
                "] with dimension " +
                std::to_string(control_dims[static_cast<std::size_t>(n.player)]));
          break;
        default:
          break;
      }
    }
  }

  const std::vector<ExprNode>& nodes() const { return nodes_; }
  int root() const { return root_; }

 private:
  static constexpr int kMaxEvalDepth = 128;

  struct Parser {
    std::string_view text;
    std::size_t pos;

    void skip_ws() {
      while (pos < text.size() &&
             (text[pos] == ' ' || text[pos] == '\t' || text[pos] == '\n' ||
              text[pos] == '\r'))
        ++pos;
    }
    char peek() {
      skip_ws();
      return pos < text.size() ? text[pos] : '\0';
    }
    bool accept(char c) {
      if (peek() == c) {
        ++pos;
        return true;
      }
      return false;
    }
    void expect(char c) {
      if (!accept(c))
        throw ParseError(std::string("expected '") + c + "'", 1,
                         static_cast<int>(pos) + 1);
    }
    [[noreturn]] void fail(const std::string& msg) {
      throw ParseError(msg, 1, static_cast<int>(pos) + 1);
    }
  };

  int add_node(ExprNode n) {
    nodes_.push_back(n);
    return static_cast<int>(nodes_.size()) - 1;
  }

  int parse_expr(Parser& p) {
    int lhs = parse_term(p);
    for (;;) {
      if (p.accept('+')) {
        int rhs = parse_term(p);
        lhs = add_node({ExprOp::kAdd, 0.0, -1, 0, lhs, rhs});
      } else if (p.accept('-')) {
        int rhs = parse_term(p);
        lhs = add_node({ExprOp::kSub, 0.0, -1, 0, lhs, rhs});
      } else {
        return lhs;
      }
    }
  }

  int parse_term(Parser& p) {
    int lhs = parse_unary(p);
    for (;;) {
      if (p.accept('*')) {
        int rhs = parse_unary(p);
        lhs = add_node({ExprOp::kMul, 0.0, -1, 0, lhs, rhs});
      } else if (p.accept('/')) {
        int rhs = parse_unary(p);
        lhs = add_node({ExprOp::kDiv, 0.0, -1, 0, lhs, rhs});
      } else {
        return lhs;
      }
    }
  }

  int parse_unary(Parser& p) {
    if (p.accept('-')) {
      int child = parse_unary(p);
      return add_node({ExprOp::kNeg, 0.0, -1, 0, child, -1});
    }
    return parse_power(p);
  }

  int parse_power(Parser& p) {
    int base = parse_primary(p);
    if (p.accept('^')) {
      int exponent = parse_unary(p);  // right-associative
      return add_node({ExprOp::kPow, 0.0, -1, 0, base, exponent});
    }
    return base;
  }

  int parse_primary(Parser& p) {
    char c = p.peek();
    if (c == '(') {
      ++p.pos;
      int inner = parse_expr(p);
      p.expect(')');
      return inner;
    }
    if ((c >= '0' && c <= '9') || c == '.') return parse_number(p);
    if (c >= 'a' && c <= 'z') return parse_identifier(p);
    p.fail("expected a number, symbol or '('");
  }

  int parse_number(Parser& p) {
    p.skip_ws();
    const char* begin = p.text.data() + p.pos;
    const char* end = p.text.data() + p.text.size();
    double value = 0.0;
    auto res = std::from_chars(begin, end, value);
    if (res.ec != std::errc() || res.ptr == begin) p.fail("malformed number");
    p.pos += static_cast<std::size_t>(res.ptr - begin);
    return add_node({ExprOp::kConst, value, -1, 0, -1, -1});
  }

  int parse_identifier(Parser& p) {
    p.skip_ws();
    std::size_t start = p.pos;
    while (p.pos < p.text.size() &&
           ((p.text[p.pos] >= 'a' && p.text[p.pos] <= 'z') ||
            (p.text[p.pos] >= '0' && p.text[p.pos] <= '9') ||
            p.text[p.pos] == '_'))
      ++p.pos;
    std::string_view name = p.text.substr(start, p.pos - start);

    if (name == "min" || name == "max" || name == "pow")
      return parse_call(p, name, 2, start);
    if (name == "exp" || name == "sin" || name == "cos" || name == "abs")
      return parse_call(p, name, 1, start);

    if (name == "t") return add_node({ExprOp::kTime, 0.0, -1, 0, -1, -1});
    if (name == "x") {
      int idx = parse_optional_index(p);
      return add_node({ExprOp::kState, 0.0, -1, idx, -1, -1});
    }
    if (name.size() >= 2 && name[0] == 'u') {
      bool digits = true;
      for (std::size_t i = 1; i < name.size(); ++i)
        if (name[i] < '0' || name[i] > '9') digits = false;
      if (digits) {
        int player = 0;
        std::from_chars(name.data() + 1, name.data() + name.size(), player);
        if (player >= kMaxPlayers)
          throw ParseError("unknown symbol '" + std::string(name) + "'", 1,
                           static_cast<int>(start) + 1);
        int idx = parse_optional_index(p);
        return add_node({ExprOp::kControl, 0.0, player, idx, -1, -1});
      }
    }
    throw ParseError("unknown symbol '" + std::string(name) + "'", 1,
                     static_cast<int>(start) + 1);
  }

  int parse_optional_index(Parser& p) {
    if (!p.accept('[')) return 0;
    p.skip_ws();
    int idx = -1;
    const char* begin = p.text.data() + p.pos;
    const char* end = p.text.data() + p.text.size();
    auto res = std::from_chars(begin, end, idx);
    if (res.ec != std::errc() || idx < 0) p.fail("malformed index");
    p.pos += static_cast<std::size_t>(res.ptr - begin);
    p.expect(']');
    return idx;
  }

  int parse_call(Parser& p, std::string_view name, int arity, std::size_t at) {
    p.expect('(');
    int a = parse_expr(p);
    int b = -1;
    if (arity == 2) {
      p.expect(',');
      b = parse_expr(p);
    }
    p.expect(')');
    ExprOp op;
    if (name == "min")
      op = ExprOp::kMin;
    else if (name == "max")
      op = ExprOp::kMax;
    else if (name == "pow")
      op = ExprOp::kPow;
    else if (name == "exp")
      op = ExprOp::kExp;
    else if (name == "sin")
      op = ExprOp::kSin;
    else if (name == "cos")
      op = ExprOp::kCos;
    else if (name == "abs")
      op = ExprOp::kAbs;
    else
      throw ParseError("unknown function '" + std::string(name) + "'", 1,
                       static_cast<int>(at) + 1);
    return add_node({op, 0.0, -1, 0, a, b});
  }

  // Appends a deep copy of `other`'s nodes, returning the new root id.
  int append(const Expr& other) {
    int base = static_cast<int>(nodes_.size());
    for (ExprNode n : other.nodes_) {
      if (n.lhs >= 0) n.lhs += base;
      if (n.rhs >= 0) n.rhs += base;
      nodes_.push_back(n);
    }
    return base + other.root_;
  }

  Expr subtree(int node, bool negate) const {
    Expr out;
    out.root_ = out.copy_from(*this, node);
    if (negate) {
      out.nodes_.push_back({ExprOp::kNeg, 0.0, -1, 0, out.root_, -1});
      out.root_ = static_cast<int>(out.nodes_.size()) - 1;
    }
    out.compute_depth();
    return out;
  }

  int copy_from(const Expr& src, int node) {
    const ExprNode& n = src.nodes_[static_cast<std::size_t>(node)];
    ExprNode copy = n;
    if (n.lhs >= 0) copy.lhs = copy_from(src, n.lhs);
    if (n.rhs >= 0) copy.rhs = copy_from(src, n.rhs);
    nodes_.push_back(copy);
    return static_cast<int>(nodes_.size()) - 1;
  }

  void collect_terms(int node, bool negate, std::vector<Expr>& out) const {
    const ExprNode& n = nodes_[static_cast<std::size_t>(node)];
    if (n.op == ExprOp::kAdd) {
      collect_terms(n.lhs, negate, out);
      collect_terms(n.rhs, negate, out);
    } else if (n.op == ExprOp::kSub) {
      collect_terms(n.lhs, negate, out);
      collect_terms(n.rhs, !negate, out);
    } else {
      out.push_back(subtree(node, negate));
    }
  }

  void compute_depth() {
    // Postfix order: children precede parents, so a single pass suffices.
    int max_d = 0;
    int running = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const ExprNode& n = nodes_[i];
      int arity = 0;
      if (n.lhs >= 0) ++arity;
      if (n.rhs >= 0) ++arity;
      running += 1 - arity;
      if (running > max_d) max_d = running;
    }
    max_depth_ = max_d;
    if (max_depth_ > kMaxEvalDepth)
      throw ValidationError("expression too deeply nested");
  }

  static int precedence(ExprOp op) {
    switch (op) {
      case ExprOp::kAdd:
      case ExprOp::kSub:
        return 1;
      case ExprOp::kMul:
      case ExprOp::kDiv:
        return 2;
      case ExprOp::kNeg:
        return 3;
      case ExprOp::kPow:
        return 4;
      default:
        return 5;
    }
  }

  // Parenthesization preserves the tree structure exactly, so parsing the
  // printed form reproduces the same AST node for node.
  void print(int node, int min_prec, std::string& out) const {
    const ExprNode& n = nodes_[static_cast<std::size_t>(node)];
    int prec = precedence(n.op);
    bool parens = prec < min_prec;
    if (parens) out += '(';
    switch (n.op) {
      case ExprOp::kConst:
        out += format_double(n.value);
        break;
      case ExprOp::kTime:
        out += 't';
        break;
      case ExprOp::kState:
        out += 'x';
        if (n.index != 0) out += '[' + std::to_string(n.index) + ']';
        break;
      case ExprOp::kControl:
        out += 'u' + std::to_string(n.player);
        if (n.index != 0) out += '[' + std::to_string(n.index) + ']';
        break;
      case ExprOp::kAdd:
        print(n.lhs, 1, out);
        out += " + ";
        print(n.rhs, 2, out);
        break;
      case ExprOp::kSub:
        print(n.lhs, 1, out);
        out += " - ";
        print(n.rhs, 2, out);
        break;
      case ExprOp::kMul:
        print(n.lhs, 2, out);
        out += '*';
        print(n.rhs, 3, out);
        break;
      case ExprOp::kDiv:
        print(n.lhs, 2, out);
        out += '/';
        print(n.rhs, 3, out);
        break;
      case ExprOp::kPow:
        print(n.lhs, 5, out);
        out += '^';
        print(n.rhs, 3, out);
        break;
      case ExprOp::kNeg:
        out += '-';
        print(n.lhs, 4, out);
        break;
      case ExprOp::kMin:
      case ExprOp::kMax:
      case ExprOp::kExp:
      case ExprOp::kSin:
      case ExprOp::kCos:
      case ExprOp::kAbs: {
        const char* name = n.op == ExprOp::kMin   ? "min"
                           : n.op == ExprOp::kMax ? "max"
                           : n.op == ExprOp::kExp ? "exp"
                           : n.op == ExprOp::kSin ? "sin"
                           : n.op == ExprOp::kCos ? "cos"
                                                  : "abs";
        out += name;
        out += '(';
        print(n.lhs, 0, out);
        if (n.rhs >= 0) {
          out += ", ";
          print(n.rhs, 0, out);
        }
        out += ')';
        break;
      }
    }
    if (parens) out += ')';
  }

  std::vector<ExprNode> nodes_;
  int root_ = -1;
  int max_depth_ = 0;
};

}  // namespace istack
