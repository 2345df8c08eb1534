#pragma once

// Scalar expression language used for drift, diffusion, nonlinearity,
// terminal condition and Lyapunov function definitions.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?          right associative, binds tighter than unary minus
//   primary := number | variable | 'norm2' ['(' ')'] | function '(' args ')' | '(' expr ')'
//
// Variables are t, x1..xd and v. `norm2` is the SQUARED Euclidean norm
// x1^2 + ... + xd^2. The grammar is closed: evaluation never allocates.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sfpe/error.hpp"

namespace sfpe::expr {

enum class Role { drift, diffusion, nonlinearity, terminal, lyapunov };

inline std::string_view to_string(Role role) {
  switch (role) {
    case Role::drift: return "drift-component";
    case Role::diffusion: return "diffusion-entry";
    case Role::nonlinearity: return "nonlinearity";
    case Role::terminal: return "terminal";
    case Role::lyapunov: return "lyapunov";
  }
  return "?";
}

enum class Kind { constant, variable, unary, binary, call };

enum class Op : std::uint8_t {
  constant,
  time,
  state,
  value,
  norm2,
  negate,
  add,
  sub,
  mul,
  div,
  power,
  exp,
  log,
  sqrt,
  abs,
  sin,
  cos,
  min,
  max,
  pow,
};

inline Kind kind_of(Op op) {
  switch (op) {
    case Op::constant: return Kind::constant;
    case Op::time:
    case Op::state:
    case Op::value: return Kind::variable;
    case Op::negate: return Kind::unary;
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div:
    case Op::power: return Kind::binary;
    default: return Kind::call;  // norm2 is a nullary builtin
  }
}

struct Node {
  Op op = Op::constant;
  double value = 0.0;  // Op::constant
  int index = -1;      // Op::state, zero based
  int lhs = -1;
  int rhs = -1;
};

struct Env {
  double t = 0.0;
  std::span<const double> x;
  double v = 0.0;
};

namespace detail {

struct FunctionInfo {
  std::string_view name;
  Op op;
  int arity;
};

inline constexpr std::array<FunctionInfo, 10> kFunctions{{
    {"exp", Op::exp, 1},
    {"log", Op::log, 1},
    {"sqrt", Op::sqrt, 1},
    {"abs", Op::abs, 1},
    {"sin", Op::sin, 1},
    {"cos", Op::cos, 1},
    {"min", Op::min, 2},
    {"max", Op::max, 2},
    {"pow", Op::pow, 2},
    {"norm2", Op::norm2, 0},
}};

inline std::string format_number(double value) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, end);
}

}  // namespace detail

// Immutable expression tree stored as a flat node array (children before
// parents). Safe to evaluate concurrently.
class Ast {
 public:
  Ast() = default;

  Role role() const noexcept { return role_; }
  std::size_t dimension() const noexcept { return dim_; }
  const std::string& source() const noexcept { return source_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  int root() const noexcept { return root_; }
  bool empty() const noexcept { return nodes_.empty(); }

  Kind kind() const { return kind_of(nodes_.at(static_cast<std::size_t>(root_)).op); }

  bool uses_time() const noexcept { return uses_time_; }
  bool uses_state() const noexcept { return uses_state_; }
  bool uses_value() const noexcept { return uses_value_; }

  // Value of a variable-free expression, computed once at parse time.
  std::optional<double> constant_value() const noexcept { return constant_; }
  bool is_zero() const noexcept { return constant_ && *constant_ == 0.0; }

  double operator()(const Env& env) const { return eval_node(root_, env); }
  double operator()(double t, std::span<const double> x, double v = 0.0) const {
    return eval_node(root_, Env{t, x, v});
  }

  // Fully parenthesised rendering; re-parses to a structurally identical tree.
  std::string to_string() const { return empty() ? std::string{} : render(root_); }
  std::string render(int i) const {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    switch (n.op) {
      case Op::constant: return detail::format_number(n.value);
      case Op::time: return "t";
      case Op::state: return "x" + std::to_string(n.index + 1);
      case Op::value: return "v";
      case Op::norm2: return "norm2";
      case Op::negate: return "(-" + render(n.lhs) + ")";
      case Op::add: return "(" + render(n.lhs) + " + " + render(n.rhs) + ")";
      case Op::sub: return "(" + render(n.lhs) + " - " + render(n.rhs) + ")";
      case Op::mul: return "(" + render(n.lhs) + " * " + render(n.rhs) + ")";
      case Op::div: return "(" + render(n.lhs) + " / " + render(n.rhs) + ")";
      case Op::power: return "(" + render(n.lhs) + " ^ " + render(n.rhs) + ")";
      default: break;
    }
    std::string out(function_name(n.op));
    out += "(" + render(n.lhs);
    if (n.rhs >= 0) out += ", " + render(n.rhs);
    return out + ")";
  }

  friend bool structurally_equal(const Ast& a, const Ast& b) {
    if (a.empty() || b.empty()) return a.empty() == b.empty();
    return equal_nodes(a, a.root_, b, b.root_);
  }

 private:
  friend class Parser;

  static std::string_view function_name(Op op) {
    for (const auto& f : detail::kFunctions)
      if (f.op == op) return f.name;
    return "?";
  }

  static bool equal_nodes(const Ast& a, int i, const Ast& b, int j) {
    const Node& x = a.nodes_[static_cast<std::size_t>(i)];
    const Node& y = b.nodes_[static_cast<std::size_t>(j)];
    if (x.op != y.op) return false;
    if (x.op == Op::constant) return x.value == y.value;
    if (x.op == Op::state) return x.index == y.index;
    if ((x.lhs < 0) != (y.lhs < 0) || (x.rhs < 0) != (y.rhs < 0)) return false;
    if (x.lhs >= 0 && !equal_nodes(a, x.lhs, b, y.lhs)) return false;
    if (x.rhs >= 0 && !equal_nodes(a, x.rhs, b, y.rhs)) return false;
    return true;
  }

  [[noreturn]] void domain_error(const char* what, int i) const { throw EvalError(what, render(i)); }

  double checked(double r, int i) const {
    if (!std::isfinite(r)) domain_error("non-finite result", i);
    return r;
  }

  double eval_node(int i, const Env& env) const {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    switch (n.op) {
      case Op::constant: return n.value;
      case Op::time: return env.t;
      case Op::state: return env.x[static_cast<std::size_t>(n.index)];
      case Op::value: return env.v;
      case Op::norm2: {
        double s = 0.0;
        for (double xi : env.x) s += xi * xi;
        return checked(s, i);
      }
      case Op::negate: return -eval_node(n.lhs, env);
      case Op::add: return checked(eval_node(n.lhs, env) + eval_node(n.rhs, env), i);
      case Op::sub: return checked(eval_node(n.lhs, env) - eval_node(n.rhs, env), i);
      case Op::mul: return checked(eval_node(n.lhs, env) * eval_node(n.rhs, env), i);
      case Op::div: {
        const double num = eval_node(n.lhs, env);
        const double den = eval_node(n.rhs, env);
        if (den == 0.0) domain_error("division by zero", i);
        return checked(num / den, i);
      }
      case Op::power:
      case Op::pow: {
        const double base = eval_node(n.lhs, env);
        const double ex = eval_node(n.rhs, env);
        if (base == 0.0 && ex < 0.0) domain_error("division by zero", i);
        const double r = std::pow(base, ex);
        if (std::isnan(r)) domain_error("negative base with non-integer exponent", i);
        return checked(r, i);
      }
      case Op::exp: return checked(std::exp(eval_node(n.lhs, env)), i);
      case Op::log: {
        const double a = eval_node(n.lhs, env);
        if (!(a > 0.0)) domain_error("log of non-positive argument", i);
        return std::log(a);
      }
      case Op::sqrt: {
        const double a = eval_node(n.lhs, env);
        if (a < 0.0) domain_error("sqrt of negative argument", i);
        return std::sqrt(a);
      }
      case Op::abs: return std::abs(eval_node(n.lhs, env));
      case Op::sin: return std::sin(eval_node(n.lhs, env));
      case Op::cos: return std::cos(eval_node(n.lhs, env));
      case Op::min: return std::min(eval_node(n.lhs, env), eval_node(n.rhs, env));
      case Op::max: return std::max(eval_node(n.lhs, env), eval_node(n.rhs, env));
    }
    return 0.0;
  }

  std::vector<Node> nodes_;
  int root_ = -1;
  Role role_ = Role::nonlinearity;
  std::size_t dim_ = 0;
  std::string source_;
  bool uses_time_ = false;
  bool uses_state_ = false;
  bool uses_value_ = false;
  std::optional<double> constant_;
};

class Parser {
 public:
  Parser(std::string_view text, Role role, std::size_t d) : text_(text), role_(role), d_(d) {}

  Ast run() {
    if (d_ == 0) throw Error("expression dimension must be at least 1");
    skip_ws();
    if (pos_ >= text_.size()) throw ParseError(ParseError::Kind::syntax, pos_, "empty expression");
    ast_.role_ = role_;
    ast_.dim_ = d_;
    ast_.source_ = std::string(text_);
    ast_.root_ = parse_expr();
    skip_ws();
    if (pos_ < text_.size())
      throw ParseError(ParseError::Kind::syntax, pos_, "unexpected '" + std::string(1, text_[pos_]) + "'");
    if (!ast_.uses_time_ && !ast_.uses_state_ && !ast_.uses_value_) {
      std::array<double, 1> dummy{0.0};
      try {
        ast_.constant_ = ast_(0.0, std::span<const double>(dummy.data(), 0));
      } catch (const EvalError&) {
        // left non-constant so the error surfaces at evaluation time
      }
    }
    return std::move(ast_);
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' || text_[pos_] == '\r'))
      ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) {
      std::string got = pos_ < text_.size() ? "'" + std::string(1, text_[pos_]) + "'" : "end of input";
      throw ParseError(ParseError::Kind::syntax, pos_, "expected '" + std::string(1, c) + "', got " + got);
    }
  }

  int add(Node n) {
    ast_.nodes_.push_back(n);
    return static_cast<int>(ast_.nodes_.size()) - 1;
  }

  int parse_expr() {
    int lhs = parse_term();
    for (;;) {
      if (accept('+'))
        lhs = add(Node{Op::add, 0.0, -1, lhs, parse_term()});
      else if (accept('-'))
        lhs = add(Node{Op::sub, 0.0, -1, lhs, parse_term()});
      else
        return lhs;
    }
  }

  int parse_term() {
    int lhs = parse_unary();
    for (;;) {
      if (accept('*'))
        lhs = add(Node{Op::mul, 0.0, -1, lhs, parse_unary()});
      else if (accept('/'))
        lhs = add(Node{Op::div, 0.0, -1, lhs, parse_unary()});
      else
        return lhs;
    }
  }

  int parse_unary() {
    if (accept('-')) return add(Node{Op::negate, 0.0, -1, parse_unary(), -1});
    if (accept('+')) return parse_unary();
    return parse_power();
  }

  int parse_power() {
    int base = parse_primary();
    if (accept('^')) return add(Node{Op::power, 0.0, -1, base, parse_unary()});
    return base;
  }

  int parse_primary() {
    skip_ws();
    if (pos_ >= text_.size()) throw ParseError(ParseError::Kind::syntax, pos_, "unexpected end of input");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      int inner = parse_expr();
      expect(')');
      return inner;
    }
    if ((c >= '0' && c <= '9') || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
    throw ParseError(ParseError::Kind::syntax, pos_, "unexpected '" + std::string(1, c) + "'");
  }

  int parse_number() {
    const std::size_t start = pos_;
    auto digits = [&] {
      while (pos_ < text_.size() && text_[pos_] >= '0' && text_[pos_] <= '9') ++pos_;
    };
    digits();
    if (pos_ < text_.size() && text_[pos_] == '.') {
      ++pos_;
      digits();
    }
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t save = pos_++;
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
      if (pos_ < text_.size() && text_[pos_] >= '0' && text_[pos_] <= '9')
        digits();
      else
        pos_ = save;
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, value);
    if (ec != std::errc() || ptr != text_.data() + pos_ || !std::isfinite(value))
      throw ParseError(ParseError::Kind::syntax, start, "malformed number '" + std::string(text_.substr(start, pos_ - start)) + "'");
    return add(Node{Op::constant, value, -1, -1, -1});
  }

  int parse_identifier() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
    const std::string_view name = text_.substr(start, pos_ - start);

    for (const auto& f : detail::kFunctions) {
      if (f.name != name) continue;
      if (f.op == Op::norm2) {
        ast_.uses_state_ = true;
        if (accept('(')) expect(')');
        return add(Node{Op::norm2, 0.0, -1, -1, -1});
      }
      skip_ws();
      if (pos_ >= text_.size() || text_[pos_] != '(')
        throw ParseError(ParseError::Kind::syntax, pos_, "expected '(' after function '" + std::string(name) + "'");
      ++pos_;
      std::vector<int> args;
      skip_ws();
      if (!accept(')')) {
        args.push_back(parse_expr());
        while (accept(',')) args.push_back(parse_expr());
        expect(')');
      }
      if (static_cast<int>(args.size()) != f.arity)
        throw ParseError(ParseError::Kind::arity, start,
                         "function '" + std::string(name) + "' takes " + std::to_string(f.arity) + " argument(s), got " +
                             std::to_string(args.size()));
      return add(Node{f.op, 0.0, -1, args[0], f.arity == 2 ? args[1] : -1});
    }

    if (name == "t") {
      if (role_ == Role::terminal) illegal(start, name);
      ast_.uses_time_ = true;
      return add(Node{Op::time, 0.0, -1, -1, -1});
    }
    if (name == "v") {
      if (role_ != Role::nonlinearity) illegal(start, name);
      ast_.uses_value_ = true;
      return add(Node{Op::value, 0.0, -1, -1, -1});
    }
    if (name.size() >= 2 && name[0] == 'x' && name[1] != '0' &&
        std::all_of(name.begin() + 1, name.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      std::size_t idx = 0;
      auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), idx);
      if (ec == std::errc() && idx >= 1 && idx <= d_) {
        ast_.uses_state_ = true;
        return add(Node{Op::state, 0.0, static_cast<int>(idx - 1), -1, -1});
      }
      throw ParseError(ParseError::Kind::unknown_identifier, start,
                       "unknown identifier '" + std::string(name) + "' (dimension is " + std::to_string(d_) + ")");
    }
    throw ParseError(ParseError::Kind::unknown_identifier, start, "unknown identifier '" + std::string(name) + "'");
  }

  [[noreturn]] void illegal(std::size_t at, std::string_view name) {
    throw ParseError(ParseError::Kind::illegal_variable, at,
                     "variable '" + std::string(name) + "' is not allowed in a " + std::string(to_string(role_)) +
                         " expression");
  }

  std::string_view text_;
  Role role_;
  std::size_t d_;
  std::size_t pos_ = 0;
  Ast ast_;
};

inline Ast parse(std::string_view text, Role role, std::size_t d) { return Parser(text, role, d).run(); }

inline double eval(const Ast& ast, const Env& env) { return ast(env); }

// Default steps: eps^(1/3) for gradients, eps^(1/4) for Hessians, scaled by
// max(1, |x_i|).
inline constexpr double kGradStep = 6.06e-6;
inline constexpr double kHessStep = 1.22e-4;

inline double fd_step(double base, double xi) { return base * std::max(1.0, std::abs(xi)); }

inline std::vector<double> grad_fd(const Ast& ast, const Env& env, std::optional<double> h = std::nullopt) {
  const std::size_t d = env.x.size();
  std::vector<double> y(env.x.begin(), env.x.end());
  std::vector<double> grad(d);
  Env shifted{env.t, y, env.v};
  for (std::size_t i = 0; i < d; ++i) {
    const double hi = h ? *h : fd_step(kGradStep, env.x[i]);
    y[i] = env.x[i] + hi;
    const double up = ast(shifted);
    y[i] = env.x[i] - hi;
    const double down = ast(shifted);
    y[i] = env.x[i];
    grad[i] = (up - down) / (2.0 * hi);
  }
  return grad;
}

// Row-major d x d central-difference Hessian.
inline std::vector<double> hess_fd(const Ast& ast, const Env& env, std::optional<double> h = std::nullopt) {
  const std::size_t d = env.x.size();
  std::vector<double> y(env.x.begin(), env.x.end());
  std::vector<double> hess(d * d);
  Env shifted{env.t, y, env.v};
  const double center = ast(env);
  std::vector<double> steps(d);
  for (std::size_t i = 0; i < d; ++i) steps[i] = h ? *h : fd_step(kHessStep, env.x[i]);

  for (std::size_t i = 0; i < d; ++i) {
    const double hi = steps[i];
    y[i] = env.x[i] + hi;
    const double up = ast(shifted);
    y[i] = env.x[i] - hi;
    const double down = ast(shifted);
    y[i] = env.x[i];
    hess[i * d + i] = (up - 2.0 * center + down) / (hi * hi);
  }
  auto corner = [&](std::size_t i, double si, std::size_t j, double sj) {
    y[i] = env.x[i] + si;
    y[j] = env.x[j] + sj;
    const double r = ast(shifted);
    y[i] = env.x[i];
    y[j] = env.x[j];
    return r;
  };
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      const double hi = steps[i], hj = steps[j];
      const double ij = (corner(i, hi, j, hj) - corner(i, hi, j, -hj) - corner(i, -hi, j, hj) + corner(i, -hi, j, -hj)) /
                        (4.0 * hi * hj);
      const double ji = (corner(j, hj, i, hi) - corner(j, hj, i, -hi) - corner(j, -hj, i, hi) + corner(j, -hj, i, -hi)) /
                        (4.0 * hi * hj);
      hess[i * d + j] = hess[j * d + i] = 0.5 * (ij + ji);
    }
  }
  return hess;
}

// Central difference in t.
inline double time_derivative_fd(const Ast& ast, const Env& env, std::optional<double> h = std::nullopt) {
  if (!ast.uses_time()) return 0.0;
  const double ht = h ? *h : fd_step(kGradStep, env.t);
  Env e = env;
  e.t = env.t + ht;
  const double up = ast(e);
  e.t = env.t - ht;
  const double down = ast(e);
  return (up - down) / (2.0 * ht);
}

}  // namespace sfpe::expr
