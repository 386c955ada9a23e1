#pragma once

// Couplings of two functional solutions: independent noises, shared noise,
// and the shared-noise coupling whose second equation carries the extra drift
// lambda (Lambda^X - Lambda^Y) until the Girsanov cost reaches its budget.

#include "neutral/model.hpp"
#include "neutral/solver.hpp"

#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace neutral {

/// sigma is singular where its inverse is needed.
class A2ViolationError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class DegeneratePoolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Independent {};
struct Synchronous {};
struct GirsanovDrift {
  double lambda = 1;
  double epsilon = 0.25;
};

using CouplingKind = std::variant<Independent, Synchronous, GirsanovDrift>;

/// Throws std::invalid_argument for lambda < 0 or epsilon outside (0, 1).
void validate(const CouplingKind& kind);

struct CoupledPair {
  Trajectory x;
  Trajectory y;
  double h_sq_integral = 0;  // int_0^s |h|^2 du, left-point
  double log_R = 0;
  std::optional<double> tau;  // first grid time the budget is reached
  double threshold = 0;       // epsilon^{-1} ||xi - eta||_r^2

  CoupledPair(const Model& model, Path xi, Path eta, const CouplingKind& kind);

  double time() const { return x.time(); }
  bool drift_active() const { return !tau.has_value(); }
};

/// Advances both equations by one step. dW_y is ignored unless the kind is
/// Independent.
void couple_step(CoupledPair& pair, const Model& model, const CouplingKind& kind,
                 const Eigen::VectorXd& dW_x, const Eigen::VectorXd& dW_y,
                 const FixedPointSettings& fp = {});

struct PairCheckpoint {
  double t;
  double head_dist;
  double norm_diff;
  double rho_r;
  double rho_r_delta;
  double log_R;
  bool tau_hit;
};

struct PairRun {
  CoupledPair pair;
  std::vector<PairCheckpoint> checkpoints;
};

/// Stream of the second noise under the independent coupling.
inline std::uint32_t partner_stream(std::uint32_t stream) { return stream ^ 0x80000000u; }

/// Runs a pair to the horizon with noise streams (seed, stream) and, for the
/// independent coupling, (seed, partner_stream(stream)). `delta` scales
/// rho_{r,delta} in the checkpoints. Both trajectories carry a snapshot per
/// checkpoint.
PairRun run_pair(const Model& model, const Path& xi, const Path& eta, const CouplingKind& kind,
                 const SimConfig& cfg, double delta = 1);

/// One draw of the coupling measure: index into the X pool and into the Y pool.
struct GluedPair {
  std::size_t x;
  std::size_t y;
  bool stuck;
};

/// Glues a pool of densities R_i: pair i keeps its own Y with probability
/// min(1, R_i); otherwise its Y is resampled from the pool with weights
/// (R_j - 1)^+. Uniforms come from (seed, stream).
std::vector<GluedPair> glue_pool(std::span<const double> R, std::uint64_t seed,
                                 std::uint32_t stream);

struct PiSample {
  std::vector<Path> x;      // X_t per pool member
  std::vector<Path> y;      // tilted Y_t per pool member
  std::vector<double> R;    // R_{t ∧ tau}
  std::vector<bool> tau_hit;
  std::vector<GluedPair> pairs;
  double t = 0;

  double stuck_fraction() const;
};

/// Simulates `n_pool` Girsanov-drift pairs to time cfg.horizon and glues them.
/// Pool member i uses stream cfg.stream + i.
PiSample sample_Pi(const Model& model, const Path& xi, const Path& eta, const GirsanovDrift& kind,
                   const SimConfig& cfg, int n_pool, int threads = 1);

/// Pools glued at every checkpoint of `cfg`, one pool run shared by all.
std::vector<PiSample> sample_Pi_series(const Model& model, const Path& xi, const Path& eta,
                                       const GirsanovDrift& kind, const SimConfig& cfg, int n_pool,
                                       int threads = 1);

/// Smallest time making B_R rho_{r,delta}-small for the given contraction
/// constant alpha of G.
double t_small(double R, double delta, double r, double alpha);

struct WilsonInterval {
  double low;
  double high;
};

/// 95% Wilson score interval for k successes in n trials.
WilsonInterval wilson95(std::int64_t k, std::int64_t n);

struct SmallnessResult {
  double alpha_t_hat = 0;       // min over initial conditions of P(X_t in B_{delta/4})
  double bound = 1;             // 1 - alpha^2 / 2
  WilsonInterval alpha_ci{0, 1};  // for the minimising initial condition
  std::vector<double> per_initial;
  double t = 0;
  double t_recommended = 0;
  bool below_recommended = false;
};

/// Estimates inf over B_R of P(||X_t||_r <= delta/4) from `n_init` initial
/// conditions, including the constant path at radius R, with `n_paths`
/// trajectories each.
SmallnessResult smallness_estimate(const Model& model, double R_ball, double delta, double t,
                                   int n_init, int n_paths, const SimConfig& base, int threads = 1);

}  // namespace neutral
