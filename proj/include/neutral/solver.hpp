#pragma once

// Euler-Maruyama on M(t) = X(t) - G(X_t) with the head recovered from
// x = M + G(segment ending in x) by fixed-point iteration.

#include "neutral/model.hpp"
#include "neutral/path_space.hpp"
#include "neutral/random.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

namespace neutral {

class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FixedPointSettings {
  double tol = 1e-12;
  int max_iter = 64;
};

struct SimConfig {
  double step = 0.01;
  double horizon = 1;
  std::uint64_t seed = 0;
  std::uint32_t stream = 0;
  double fp_tol = 1e-12;
  int fp_max_iter = 64;
  std::vector<double> checkpoints;

  FixedPointSettings fixed_point() const { return {fp_tol, fp_max_iter}; }
  /// Number of steps to reach the horizon; throws on invalid settings.
  std::int64_t n_steps() const;
  /// Step indices of the checkpoints; throws unless each is grid-aligned in [0, T].
  std::vector<std::int64_t> checkpoint_steps() const;
};

/// Iteration statistics of the implicit head solves.
struct FixedPointStats {
  std::int64_t solves = 0;
  std::int64_t iterations = 0;
  // Largest observed |x_{k+2} - x_{k+1}| / |x_{k+1} - x_k| among residuals above 1e-4 (1 + |x|).
  double max_ratio = 0;
  int max_iterations = 0;
};

struct Snapshot {
  double time;
  Eigen::Index size;  // grid points of the history up to this time
  Eigen::VectorXd lambda;
};

/// A simulated path with its running functionals. The stored history starts
/// with the initial segment; time 0 is the initial head.
class Trajectory {
 public:
  Trajectory(const Model& model, Path initial);

  const Path& path() const { return path_; }
  PathView segment() const { return path_.view(); }
  const Accumulators& accumulators() const { return acc_; }
  const Eigen::VectorXd& head() const { return head_; }
  /// Lambda^X(t) = X(t) - G(X_t), the semimartingale part.
  const Eigen::VectorXd& lambda() const { return lambda_; }
  double time() const { return time_; }
  std::int64_t steps() const { return steps_; }
  Eigen::Index initial_size() const { return initial_size_; }
  const FixedPointStats& fixed_point() const { return stats_; }

  dsl::Features features() const {
    return dsl::Features(head_, acc_.rates(), acc_.kmeans(), acc_.kclips());
  }

  const std::vector<Snapshot>& snapshots() const { return snapshots_; }
  PathView snapshot_segment(std::size_t i) const { return path_.prefix(snapshots_[i].size); }
  void take_snapshot() { snapshots_.push_back({time_, path_.size(), lambda_}); }
  void reserve(Eigen::Index extra_points) { path_.reserve(path_.size() + extra_points); }

 private:
  friend void neutral_step(Trajectory&, const Model&, const dsl::SmallVector&,
                           const dsl::SmallVector&, const Eigen::VectorXd&,
                           const Eigen::VectorXd*, const FixedPointSettings&);

  Path path_;
  Accumulators acc_;
  Eigen::VectorXd head_;
  Eigen::VectorXd lambda_;
  double time_ = 0;
  std::int64_t steps_ = 0;
  Eigen::Index initial_size_;
  FixedPointStats stats_;
  std::vector<Snapshot> snapshots_;
  // Scratch for the implicit solve.
  Eigen::MatrixXd kmean_scratch_;
  Eigen::VectorXd kclip_scratch_;
};

/// b and sigma at the current (pre-step) segment.
struct LeftCoefficients {
  dsl::SmallVector b;
  dsl::SmallVector sigma;
};

LeftCoefficients left_coefficients(const Trajectory& traj, const Model& model);

/// One step with precomputed left-point coefficients. `extra_drift` may be
/// null. dW is the Brownian increment over the step.
void neutral_step(Trajectory& traj, const Model& model, const dsl::SmallVector& b,
                  const dsl::SmallVector& sigma, const Eigen::VectorXd& dW,
                  const Eigen::VectorXd* extra_drift, const FixedPointSettings& fp);

void neutral_step(Trajectory& traj, const Model& model, const Eigen::VectorXd& dW,
                  const Eigen::VectorXd* extra_drift = nullptr,
                  const FixedPointSettings& fp = {});

/// Runs to the horizon, taking snapshots at the configured checkpoints.
/// The Brownian increment of step k is drawn at index k of (seed, stream).
Trajectory simulate(const Model& model, const Path& initial, const SimConfig& cfg);

struct MomentPoint {
  double t;
  double mean;
  double stderr_;
};

using PathFunctional = std::function<double(const PathView&)>;

/// Monte Carlo estimate of E V(X_t) at the checkpoints over `n_paths`
/// trajectories using streams cfg.stream, cfg.stream + 1, ...
std::vector<MomentPoint> estimate_PtV(const Model& model, const Path& initial, const SimConfig& cfg,
                                      const PathFunctional& V, int n_paths, int threads = 1);

/// Mean and standard error of the mean, summing in index order.
MomentPoint mean_stderr(double t, const std::vector<double>& values);

}  // namespace neutral
