#include "neutral/coeff_dsl.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <functional>

namespace neutral::dsl {

namespace {

using NodePtr = std::shared_ptr<const Node>;
using Op = Node::Op;

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string shape_name(Shape s) { return s == Shape::Scalar ? "scalar" : "vector"; }

struct Token {
  enum class Type { Number, Ident, Plus, Minus, Star, Slash, LParen, RParen, Comma, End };
  Type type;
  std::size_t pos;
  std::string text;
  double number = 0;
};

std::string describe(const Token& t) {
  switch (t.type) {
    case Token::Type::End: return "end of input";
    case Token::Type::Number:
    case Token::Type::Ident: return "'" + t.text + "'";
    default: return "'" + t.text + "'";
  }
}

std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t j = i;
      while (j < src.size() && (std::isdigit(static_cast<unsigned char>(src[j])) || src[j] == '.')) ++j;
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) {
          while (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) ++k;
          j = k;
        }
      }
      double v = 0;
      auto res = std::from_chars(src.data() + i, src.data() + j, v);
      if (res.ec != std::errc() || res.ptr != src.data() + j)
        throw ParseError(ParseError::Kind::Syntax, i,
                         "malformed number '" + std::string(src.substr(i, j - i)) + "'",
                         "number");
      out.push_back({Token::Type::Number, i, std::string(src.substr(i, j - i)), v});
      i = j;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
      out.push_back({Token::Type::Ident, i, std::string(src.substr(i, j - i))});
      i = j;
      continue;
    }
    Token::Type type;
    switch (c) {
      case '+': type = Token::Type::Plus; break;
      case '-': type = Token::Type::Minus; break;
      case '*': type = Token::Type::Star; break;
      case '/': type = Token::Type::Slash; break;
      case '(': type = Token::Type::LParen; break;
      case ')': type = Token::Type::RParen; break;
      case ',': type = Token::Type::Comma; break;
      default:
        throw ParseError(ParseError::Kind::Syntax, i,
                         std::string("unexpected character '") + c + "'",
                         "operand or operator");
    }
    out.push_back({type, i, std::string(1, c)});
    ++i;
  }
  out.push_back({Token::Type::End, src.size(), ""});
  return out;
}

NodePtr make(Op op, Shape shape, std::vector<NodePtr> args = {}, double value = 0,
             std::string name = {}) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = shape;
  n->value = value;
  n->name = std::move(name);
  n->args = std::move(args);
  return n;
}

class Parser {
 public:
  Parser(std::string_view src, const std::set<std::string, std::less<>>* known)
      : tokens_(tokenize(src)), known_(known) {}

  NodePtr parse() {
    NodePtr e = expression();
    if (peek().type != Token::Type::End)
      throw ParseError(ParseError::Kind::Syntax, peek().pos,
                       "unexpected " + describe(peek()), "operator or end of input");
    return e;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& next() { return tokens_[pos_++]; }

  void expect(Token::Type type, const char* what) {
    if (peek().type != type)
      throw ParseError(ParseError::Kind::Syntax, peek().pos,
                       std::string("expected ") + what + ", found " + describe(peek()), what);
    ++pos_;
  }

  static NodePtr binary(Op op, NodePtr a, NodePtr b, std::size_t pos) {
    const Shape sa = a->shape, sb = b->shape;
    Shape out;
    switch (op) {
      case Op::Add:
      case Op::Subtract:
        if (sa != sb)
          throw ParseError(ParseError::Kind::Type, pos,
                           "cannot add or subtract " + shape_name(sa) + " and " + shape_name(sb));
        out = sa;
        break;
      case Op::Multiply:
        if (sa == Shape::Vector && sb == Shape::Vector)
          throw ParseError(ParseError::Kind::Type, pos,
                           "vector * vector is undefined; use dot(a, b)");
        out = (sa == Shape::Vector || sb == Shape::Vector) ? Shape::Vector : Shape::Scalar;
        break;
      case Op::Divide:
        if (sb == Shape::Vector)
          throw ParseError(ParseError::Kind::Type, pos, "cannot divide by a vector");
        out = sa;
        break;
      default:
        out = sa;
    }
    return make(op, out, {std::move(a), std::move(b)});
  }

  NodePtr expression() {
    NodePtr lhs = term();
    while (peek().type == Token::Type::Plus || peek().type == Token::Type::Minus) {
      const Token& t = next();
      NodePtr rhs = term();
      lhs = binary(t.type == Token::Type::Plus ? Op::Add : Op::Subtract, lhs, rhs, t.pos);
    }
    return lhs;
  }

  NodePtr term() {
    NodePtr lhs = unary();
    while (peek().type == Token::Type::Star || peek().type == Token::Type::Slash) {
      const Token& t = next();
      NodePtr rhs = unary();
      lhs = binary(t.type == Token::Type::Star ? Op::Multiply : Op::Divide, lhs, rhs, t.pos);
    }
    return lhs;
  }

  NodePtr unary() {
    if (peek().type == Token::Type::Minus) {
      next();
      NodePtr operand = unary();
      const Shape s = operand->shape;
      return make(Op::Negate, s, {std::move(operand)});
    }
    return primary();
  }

  // Positive literal, as required for kernel rates.
  double rate_literal(const std::string& fn) {
    const Token& t = peek();
    if (t.type != Token::Type::Number)
      throw ParseError(ParseError::Kind::Type, t.pos,
                       fn + " takes exactly one positive numeric literal rate, found " +
                           describe(t),
                       "positive number");
    next();
    if (!(t.number > 0) || !std::isfinite(t.number))
      throw ParseError(ParseError::Kind::Type, t.pos, fn + " rate must be positive",
                       "positive number");
    return t.number;
  }

  double integer_literal() {
    bool negative = false;
    std::size_t at = peek().pos;
    if (peek().type == Token::Type::Minus) {
      negative = true;
      next();
    }
    const Token& t = peek();
    if (t.type != Token::Type::Number || std::floor(t.number) != t.number)
      throw ParseError(ParseError::Kind::Type, at, "pow exponent must be an integer literal",
                       "integer");
    next();
    return negative ? -t.number : t.number;
  }

  NodePtr call(const Token& fn) {
    const std::string& name = fn.text;
    expect(Token::Type::LParen, "'('");
    NodePtr result;
    if (name == "kmean" || name == "kclip") {
      const double rate = rate_literal(name);
      result = name == "kmean" ? make(Op::KernelMean, Shape::Vector, {}, rate)
                               : make(Op::KernelClip, Shape::Scalar, {}, rate);
    } else if (name == "cbrt") {
      NodePtr arg = expression();
      const Shape s = arg->shape;
      result = make(Op::Cbrt, s, {std::move(arg)});
    } else if (name == "pow") {
      NodePtr base = expression();
      expect(Token::Type::Comma, "','");
      const double exponent = integer_literal();
      const Shape s = base->shape;
      result = make(Op::Pow, s, {std::move(base)}, exponent);
    } else if (name == "dot") {
      const std::size_t at = peek().pos;
      NodePtr a = expression();
      expect(Token::Type::Comma, "','");
      NodePtr b = expression();
      if (a->shape != Shape::Vector || b->shape != Shape::Vector)
        throw ParseError(ParseError::Kind::Type, at, "dot takes two vector arguments");
      result = make(Op::Dot, Shape::Scalar, {std::move(a), std::move(b)});
    } else {
      throw ParseError(ParseError::Kind::UnknownIdentifier, fn.pos,
                       "unknown function '" + name + "'", "kmean, kclip, cbrt, pow, dot");
    }
    if (peek().type == Token::Type::Comma)
      throw ParseError(ParseError::Kind::Type, peek().pos,
                       "too many arguments to '" + name + "'", "')'");
    expect(Token::Type::RParen, "')'");
    return result;
  }

  NodePtr primary() {
    const Token& t = peek();
    switch (t.type) {
      case Token::Type::Number:
        next();
        return make(Op::Number, Shape::Scalar, {}, t.number);
      case Token::Type::LParen: {
        next();
        NodePtr e = expression();
        expect(Token::Type::RParen, "')'");
        return e;
      }
      case Token::Type::Ident: {
        const Token& id = next();
        if (peek().type == Token::Type::LParen) {
          if (id.text == "x0")
            throw ParseError(ParseError::Kind::Type, id.pos, "'x0' is not a function");
          return call(id);
        }
        if (id.text == "x0") return make(Op::Head, Shape::Vector);
        if (id.text == "kmean" || id.text == "kclip" || id.text == "cbrt" ||
            id.text == "pow" || id.text == "dot")
          throw ParseError(ParseError::Kind::Syntax, peek().pos,
                           "expected '(' after '" + id.text + "'", "'('");
        if (known_ && known_->find(id.text) == known_->end())
          throw ParseError(ParseError::Kind::UnknownIdentifier, id.pos,
                           "unknown identifier '" + id.text + "'", "declared parameter");
        return make(Op::Param, Shape::Scalar, {}, 0, id.text);
      }
      default:
        throw ParseError(ParseError::Kind::Syntax, t.pos, "unexpected " + describe(t),
                         "number, identifier, '(' or '-'");
    }
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  const std::set<std::string, std::less<>>* known_;
};

void collect(const Node& n, std::set<FunctionalRequest>& requests,
             std::set<std::string>& params) {
  if (n.op == Op::KernelMean) requests.insert({FunctionalKind::KernelMean, n.value});
  if (n.op == Op::KernelClip) requests.insert({FunctionalKind::KernelClip, n.value});
  if (n.op == Op::Param) params.insert(n.name);
  for (const auto& a : n.args) collect(*a, requests, params);
}

void print(const Node& n, std::string& out) {
  switch (n.op) {
    case Op::Number: out += format_number(n.value); return;
    case Op::Param: out += n.name; return;
    case Op::Head: out += "x0"; return;
    case Op::KernelMean: out += "kmean(" + format_number(n.value) + ")"; return;
    case Op::KernelClip: out += "kclip(" + format_number(n.value) + ")"; return;
    case Op::Negate:
      out += "(-";
      print(*n.args[0], out);
      out += ")";
      return;
    case Op::Cbrt:
      out += "cbrt(";
      print(*n.args[0], out);
      out += ")";
      return;
    case Op::Pow:
      out += "pow(";
      print(*n.args[0], out);
      out += ", " + format_number(n.value) + ")";
      return;
    case Op::Dot:
      out += "dot(";
      print(*n.args[0], out);
      out += ", ";
      print(*n.args[1], out);
      out += ")";
      return;
    default: {
      const char* sym = n.op == Op::Add        ? " + "
                        : n.op == Op::Subtract ? " - "
                        : n.op == Op::Multiply ? " * "
                                               : " / ";
      out += "(";
      print(*n.args[0], out);
      out += sym;
      print(*n.args[1], out);
      out += ")";
    }
  }
}

bool same_tree(const Node& a, const Node& b) {
  if (a.op != b.op || a.shape != b.shape || a.name != b.name || a.args.size() != b.args.size())
    return false;
  if (a.value != b.value) return false;
  for (std::size_t i = 0; i < a.args.size(); ++i)
    if (!same_tree(*a.args[i], *b.args[i])) return false;
  return true;
}

NodePtr substitute(const NodePtr& n, const ParamMap& params) {
  if (n->op == Op::Param) {
    auto it = params.find(n->name);
    if (it == params.end()) throw EvalError("unbound parameter '" + n->name + "'");
    return make(Op::Number, Shape::Scalar, {}, it->second);
  }
  if (n->args.empty()) return n;
  std::vector<NodePtr> args;
  args.reserve(n->args.size());
  for (const auto& a : n->args) args.push_back(substitute(a, params));
  return make(n->op, n->shape, std::move(args), n->value, n->name);
}

double signed_cbrt(double v) { return std::cbrt(v); }

class Evaluator {
 public:
  Evaluator(const Features& f, const ParamMap& p) : f_(f), p_(p) {}

  Value eval(const Node& n) const {
    switch (n.op) {
      case Op::Number: return n.value;
      case Op::Param: {
        auto it = p_.find(n.name);
        if (it == p_.end()) throw EvalError("unbound parameter '" + n.name + "'");
        return it->second;
      }
      case Op::Head: return vec(f_.head);
      case Op::KernelMean: return vec(f_.kmean.col(rate_index(n.value)));
      case Op::KernelClip: return f_.kclip(rate_index(n.value));
      case Op::Negate: return map(eval(*n.args[0]), [](double x) { return -x; });
      case Op::Cbrt: return map(eval(*n.args[0]), signed_cbrt);
      case Op::Pow: {
        const int e = static_cast<int>(n.value);
        return map(eval(*n.args[0]), [e](double x) { return std::pow(x, e); });
      }
      case Op::Dot: {
        const Value a = eval(*n.args[0]);
        const Value b = eval(*n.args[1]);
        return std::get<SmallVector>(a).dot(std::get<SmallVector>(b));
      }
      case Op::Add:
      case Op::Subtract: {
        const Value a = eval(*n.args[0]);
        const Value b = eval(*n.args[1]);
        const double sign = n.op == Op::Add ? 1.0 : -1.0;
        if (is_scalar(a)) return std::get<double>(a) + sign * std::get<double>(b);
        return SmallVector(std::get<SmallVector>(a) + sign * std::get<SmallVector>(b));
      }
      case Op::Multiply: {
        const Value a = eval(*n.args[0]);
        const Value b = eval(*n.args[1]);
        if (is_scalar(a) && is_scalar(b)) return std::get<double>(a) * std::get<double>(b);
        if (is_scalar(a)) return SmallVector(std::get<double>(a) * std::get<SmallVector>(b));
        return SmallVector(std::get<SmallVector>(a) * std::get<double>(b));
      }
      case Op::Divide: {
        const Value a = eval(*n.args[0]);
        const double d = std::get<double>(eval(*n.args[1]));
        if (d == 0) throw EvalError("division by zero");
        if (is_scalar(a)) return std::get<double>(a) / d;
        return SmallVector(std::get<SmallVector>(a) / d);
      }
    }
    throw EvalError("corrupt expression tree");
  }

 private:
  template <typename Derived>
  static SmallVector vec(const Eigen::MatrixBase<Derived>& v) {
    if (v.size() > kMaxDim) throw EvalError("dimension exceeds expression limit");
    return SmallVector(v);
  }

  template <typename F>
  static Value map(const Value& v, F&& f) {
    if (is_scalar(v)) return f(std::get<double>(v));
    return SmallVector(std::get<SmallVector>(v).unaryExpr([&f](double x) { return f(x); }));
  }

  Eigen::Index rate_index(double rate) const {
    for (std::size_t j = 0; j < f_.rates.size(); ++j)
      if (f_.rates[j] == rate) return static_cast<Eigen::Index>(j);
    throw EvalError("no kernel integral supplied for rate " + format_number(rate));
  }

  const Features& f_;
  const ParamMap& p_;
};

}  // namespace

ParseError::ParseError(Kind kind, std::size_t position, std::string message,
                       std::string expected)
    : std::runtime_error("at position " + std::to_string(position) + ": " + message),
      kind_(kind),
      position_(position),
      expected_(std::move(expected)) {}

Expr::Expr(std::shared_ptr<const Node> root) : root_(std::move(root)) {
  std::set<FunctionalRequest> requests;
  std::set<std::string> params;
  collect(*root_, requests, params);
  requests_.assign(requests.begin(), requests.end());
  parameters_.assign(params.begin(), params.end());
}

std::string Expr::to_string() const {
  std::string out;
  print(*root_, out);
  return out;
}

Expr Expr::bind(const ParamMap& params) const { return Expr(substitute(root_, params)); }

bool operator==(const Expr& a, const Expr& b) { return same_tree(*a.root_, *b.root_); }

Expr parse(std::string_view source, const std::set<std::string, std::less<>>* known_params) {
  return Expr(Parser(source, known_params).parse());
}

Value evaluate(const Expr& expr, const Features& features, const ParamMap& params) {
  return Evaluator(features, params).eval(expr.root());
}

}  // namespace neutral::dsl
