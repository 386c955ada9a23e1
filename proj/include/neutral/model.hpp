#pragma once

#include "neutral/coeff_dsl.hpp"
#include "neutral/path_space.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace neutral {

class DivergenceError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A hypothesis of the ergodicity theory is violated by the inputs.
class HypothesisError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Exponential memory density scale * e^{rate * theta} d theta on (-inf, 0].
struct MemoryMeasure {
  double rate = 1;
  double scale = 1;

  double mass() const { return scale / rate; }
};

/// delta_r(mu) = int e^{-2 r theta} mu(d theta) = scale / (rate - 2r).
double delta_r(const MemoryMeasure& measure, double r);

/// int |xi(theta)|^2 mu(d theta) by trapezoid on the grid plus the tail.
double measure_integral_sq(const PathView& path, const MemoryMeasure& measure);

struct BetaConstant {
  double beta;
  double margin;  // 1 - (alpha1 + alpha2 * delta_r)
};

/// beta = (1 + sqrt(alpha1 + alpha2 delta_r))^2; throws HypothesisError when
/// alpha1 + alpha2 delta_r >= 1.
BetaConstant beta_const(double alpha1, double alpha2, double delta_r);

/// Parameters of the cube-root example with mu0 = (1/r0) e^{r0 theta} d theta.
struct Example1Params {
  std::array<double, 5> gamma{};
  double r0 = 1;
};

struct D4Check {
  bool pass1 = false;
  bool pass2 = false;
  double lhs1 = 0, rhs1 = 0;  // gamma1^2 < r0 (r0 - 2r)
  double lhs2 = 0, rhs2 = 0;  // 2 gamma3 > ...

  double slack1() const { return rhs1 - lhs1; }
  double slack2() const { return lhs2 - rhs2; }
};

D4Check check_d4(const Example1Params& p, double r);

/// Constants of the moment condition for V = ||.||_r^2.
struct LyapunovConstants {
  double alpha1 = 0;
  double alpha2 = 0;
  double lambda1 = 0;
  double lambda2 = 0;
  double c0 = 0;
};

/// Explicit constants for the example, following the Young/Holder splitting
/// with the free Young parameter chosen to keep half of the second (d4) slack.
LyapunovConstants example1_lyapunov_constants(const Example1Params& p, double r,
                                              int dim);

struct ModelSpec {
  int dim = 1;
  double decay = 0.05;
  std::string G = "0 * x0";
  std::string b = "0 * x0";
  std::string sigma = "1";
  std::vector<MemoryMeasure> measures;
  dsl::ParamMap params;
  std::optional<Example1Params> preset;
  std::optional<LyapunovConstants> lyapunov;

  /// The cube-root example as coefficient expressions.
  static ModelSpec example1(const Example1Params& p, double r, int dim = 1);
  /// r = 0.05, r0 = 1, gamma = (0.1, 0.1, 1, 0.5, 0.05).
  static ModelSpec canonical();
};

struct ProbeSettings {
  int n_probes = 256;
  double radius = 4;
  std::uint64_t seed = 0x5eed;
};

/// Coefficient values at one segment. sigma is diagonal.
struct Coefficients {
  dsl::SmallVector G;
  dsl::SmallVector b;
  dsl::SmallVector sigma;
};

/// A loaded model: parsed, parameter-bound coefficient expressions plus the
/// probed contraction constant of G.
class Model {
 public:
  explicit Model(ModelSpec spec, const ProbeSettings& alpha_probe = {});

  const ModelSpec& spec() const { return spec_; }
  int dim() const { return spec_.dim; }
  double decay() const { return spec_.decay; }
  const MemoryMeasure& mu0() const { return spec_.measures.front(); }

  /// Kernel rates every coefficient needs, sorted.
  std::span<const double> rates() const { return rates_; }

  dsl::SmallVector G(const dsl::Features& f) const;
  dsl::SmallVector b(const dsl::Features& f) const;
  dsl::SmallVector sigma(const dsl::Features& f) const;

  Accumulators accumulators(const PathView& path) const;
  Coefficients coefficients(const PathView& path) const;
  dsl::SmallVector G(const PathView& path) const;

  /// Probed Lipschitz constant of G in ||.||_r.
  double alpha_hat() const { return alpha_hat_; }

  /// Throws HypothesisError unless the probed contraction constant is < 1.
  void require_contraction() const;

 private:
  dsl::SmallVector vector_coefficient(const dsl::Expr& e, const dsl::Features& f,
                                      const char* name) const;

  ModelSpec spec_;
  dsl::Expr G_;
  dsl::Expr b_;
  dsl::Expr sigma_;
  std::vector<double> rates_;
  double alpha_hat_ = 0;
};

struct LipschitzProbe {
  double alpha_hat = 0;
  std::optional<double> analytic_bound;  // gamma1 sqrt(delta_r) for the example
  int n_probes = 0;
  double radius = 0;
};

LipschitzProbe probe_G_lipschitz(const Model& model, const ProbeSettings& settings);

struct A1A2Probe {
  double L0_hat = 0;
  double sigma_sup = 0;
  double sigma_inv_sup = 0;
  int singular_count = 0;
  int n_probes = 0;
  double radius = 0;
};

A1A2Probe probe_A1_A2(const Model& model, const ProbeSettings& settings);

/// Largest violation (lhs - rhs) of the moment inequalities over probes.
struct MomentProbe {
  double r1_violation = 0;
  double r11_violation = 0;
  int n_probes = 0;
};

MomentProbe probe_moment_conditions(const Model& model, const LyapunovConstants& c,
                                    const ProbeSettings& settings);

/// V(xi) = ||xi||_r^2.
inline double lyapunov_V(const PathView& path) {
  const double n = norm_r(path);
  return n * n;
}

struct Verdict {
  std::string claim;
  bool pass = false;
  std::string detail;
};

struct ConditionReport {
  double alpha_hat = 0;
  std::optional<double> alpha_analytic;
  double L0_hat = 0;
  double L0_hat_refined = 0;  // with twice the probes
  double sigma_sup = 0;
  double sigma_inv_sup = 0;
  int sigma_singular = 0;
  double G_at_zero = 0;
  double delta_r = 0;
  double mu0_mass = 0;
  std::optional<LyapunovConstants> lyapunov;
  std::optional<double> beta;
  std::optional<double> beta_margin;
  std::optional<double> gamma_rate;
  std::optional<MomentProbe> moment_probe;
  std::optional<D4Check> d4;
  std::vector<Verdict> verdicts;

  bool all_pass() const;
};

ConditionReport check_conditions(const Model& model, const ProbeSettings& settings = {});

namespace detail {

/// Random grid path with ||xi||_r <= radius, for probing.
Path probe_path(std::uint64_t seed, std::uint64_t index, int dim, double decay,
                double radius);

/// Random-walk path with `n_points` points on the given grid and
/// ||xi||_r drawn uniformly in [0, radius].
Path probe_path_on_grid(std::uint64_t seed, std::uint64_t index, int dim, double decay,
                        double radius, double step, Eigen::Index n_points);

/// The i-th probe pair; families alternate between independent paths,
/// head-only perturbations, e^{-r theta} profiles and small perturbations.
std::pair<Path, Path> probe_pair(std::uint64_t seed, std::uint64_t index, int dim,
                                 double decay, double radius);

}  // namespace detail

}  // namespace neutral
