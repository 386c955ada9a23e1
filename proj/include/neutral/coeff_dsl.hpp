#pragma once

// Coefficient expressions for G, b and sigma over a fixed vocabulary of
// path functionals.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | primary
//   primary := number | identifier | call | '(' expr ')'
//   call    := 'x0' | 'kmean' '(' rate ')' | 'kclip' '(' rate ')'
//            | 'cbrt' '(' expr ')' | 'pow' '(' expr ',' integer ')'
//            | 'dot' '(' expr ',' expr ')'
//
// `x0` is the head xi(0), `kmean(k)` the vector integral
// int e^{k theta} xi(theta) d theta and `kclip(k)` the scalar integral of
// e^{k theta} (1 ∧ |xi(theta)|). Kernel rates are positive literals so the
// set of running integrals is fixed when the expression is parsed.

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace neutral::dsl {

inline constexpr int kMaxDim = 16;

/// Stack-allocated vector; expressions never allocate while evaluating.
using SmallVector =
    Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;

enum class Shape { Scalar, Vector };

enum class FunctionalKind { KernelMean, KernelClip };

struct FunctionalRequest {
  FunctionalKind kind;
  double rate;
  auto operator<=>(const FunctionalRequest&) const = default;
};

struct Node {
  enum class Op {
    Number,
    Param,
    Head,
    KernelMean,
    KernelClip,
    Negate,
    Add,
    Subtract,
    Multiply,
    Divide,
    Cbrt,
    Pow,
    Dot,
  };

  Op op;
  Shape shape;
  double value = 0;  // literal, kernel rate, or integer exponent
  std::string name;  // parameter name
  std::vector<std::shared_ptr<const Node>> args;
};

using ParamMap = std::map<std::string, double, std::less<>>;

class ParseError : public std::runtime_error {
 public:
  enum class Kind { Syntax, UnknownIdentifier, Type };

  ParseError(Kind kind, std::size_t position, std::string message,
             std::string expected = {});

  Kind kind() const { return kind_; }
  std::size_t position() const { return position_; }
  const std::string& expected() const { return expected_; }

 private:
  Kind kind_;
  std::size_t position_;
  std::string expected_;
};

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Expr {
 public:
  explicit Expr(std::shared_ptr<const Node> root);

  const Node& root() const { return *root_; }
  Shape shape() const { return root_->shape; }

  /// Deduplicated, sorted functionals the expression reads.
  const std::vector<FunctionalRequest>& requests() const { return requests_; }
  /// Sorted parameter names referenced.
  const std::vector<std::string>& parameters() const { return parameters_; }

  /// Fully parenthesised source that reparses to an identical tree.
  std::string to_string() const;

  /// Copy with every parameter replaced by its value.
  Expr bind(const ParamMap& params) const;

  friend bool operator==(const Expr& a, const Expr& b);

 private:
  std::shared_ptr<const Node> root_;
  std::vector<FunctionalRequest> requests_;
  std::vector<std::string> parameters_;
};

/// Parses `source`. When `known_params` is given, identifiers outside it are
/// rejected with ParseError::Kind::UnknownIdentifier.
Expr parse(std::string_view source,
           const std::set<std::string, std::less<>>* known_params = nullptr);

/// Path functionals at one segment, aligned with `rates`.
struct Features {
  Eigen::Map<const Eigen::VectorXd> head;
  std::span<const double> rates;
  Eigen::Map<const Eigen::MatrixXd> kmean;  // dim x rates.size()
  Eigen::Map<const Eigen::VectorXd> kclip;  // rates.size()

  Features(const Eigen::VectorXd& head_, std::span<const double> rates_,
           const Eigen::MatrixXd& kmean_, const Eigen::VectorXd& kclip_)
      : head(head_.data(), head_.size()),
        rates(rates_),
        kmean(kmean_.data(), kmean_.rows(), kmean_.cols()),
        kclip(kclip_.data(), kclip_.size()) {}
};

using Value = std::variant<double, SmallVector>;

/// Evaluates the expression. Errors: EvalError on division by zero, unbound
/// parameter, or a functional missing from `features`.
Value evaluate(const Expr& expr, const Features& features,
               const ParamMap& params = {});

inline bool is_scalar(const Value& v) { return std::holds_alternative<double>(v); }

}  // namespace neutral::dsl
