#include "neutral/solver.hpp"

#include "neutral/parallel.hpp"

#include <cmath>
#include <string>

namespace neutral {

std::int64_t SimConfig::n_steps() const {
  if (!(step > 0) || !std::isfinite(step)) throw std::invalid_argument("step must be positive");
  if (!(horizon >= step)) throw std::invalid_argument("horizon must be at least one step");
  if (!(fp_tol > 0)) throw std::invalid_argument("fp_tol must be positive");
  if (fp_max_iter < 1) throw std::invalid_argument("fp_max_iter must be >= 1");
  const double n = horizon / step;
  const auto rounded = static_cast<std::int64_t>(std::llround(n));
  if (std::abs(n - static_cast<double>(rounded)) > 1e-9 * std::max(1.0, n))
    throw std::invalid_argument("horizon must be a multiple of the step");
  return rounded;
}

std::vector<std::int64_t> SimConfig::checkpoint_steps() const {
  const std::int64_t total = n_steps();
  std::vector<std::int64_t> out;
  out.reserve(checkpoints.size());
  for (double t : checkpoints) {
    const double k = t / step;
    const auto rounded = static_cast<std::int64_t>(std::llround(k));
    if (!(t >= 0) || rounded > total)
      throw std::invalid_argument("checkpoint outside [0, horizon]");
    if (std::abs(k - static_cast<double>(rounded)) > 1e-9 * std::max(1.0, k))
      throw std::invalid_argument("checkpoint not on the time grid");
    if (!out.empty() && rounded <= out.back())
      throw std::invalid_argument("checkpoints must be strictly increasing");
    out.push_back(rounded);
  }
  return out;
}

Trajectory::Trajectory(const Model& model, Path initial)
    : path_(std::move(initial)), initial_size_(path_.size()) {
  if (path_.dim() != model.dim())
    throw AlignmentError("initial segment dimension differs from the model");
  if (!detail::nearly_equal(path_.decay(), model.decay()))
    throw AlignmentError("initial segment decay differs from the model");
  acc_ = model.accumulators(path_.view());
  head_ = path_.head();
  lambda_ = head_ - Eigen::VectorXd(model.G(features()));
}

LeftCoefficients left_coefficients(const Trajectory& traj, const Model& model) {
  const dsl::Features f = traj.features();
  return {model.b(f), model.sigma(f)};
}

void neutral_step(Trajectory& traj, const Model& model, const dsl::SmallVector& b,
                  const dsl::SmallVector& sigma, const Eigen::VectorXd& dW,
                  const Eigen::VectorXd* extra_drift, const FixedPointSettings& fp) {
  const double h = traj.path_.step();
  Eigen::VectorXd m = traj.lambda_ + h * b + sigma.cwiseProduct(dW);
  if (extra_drift) m += h * *extra_drift;
  if (!m.allFinite()) throw NumericError("non-finite state at t = " + std::to_string(traj.time_));

  Eigen::VectorXd x = traj.head_;
  Eigen::VectorXd next(x.size());
  double previous_residual = -1;
  int it = 0;
  for (;;) {
    ++it;
    traj.acc_.preview(traj.head_, x, traj.kmean_scratch_, traj.kclip_scratch_);
    const dsl::Features f(x, traj.acc_.rates(), traj.kmean_scratch_, traj.kclip_scratch_);
    next = m + model.G(f);
    const double residual = (next - x).norm();
    if (!std::isfinite(residual))
      throw NumericError("non-finite fixed-point iterate at t = " + std::to_string(traj.time_));
    // A residual carries rounding error of order eps (1 + |x|), so only
    // residuals well above it resolve the ratio to ~1e-11.
    const double resolvable = 1e-4 * (1 + x.norm());
    if (previous_residual > resolvable && residual > resolvable)
      traj.stats_.max_ratio = std::max(traj.stats_.max_ratio, residual / previous_residual);
    x.swap(next);
    if (residual <= fp.tol * (1 + x.norm())) break;
    if (it >= fp.max_iter)
      throw NonConvergenceError("fixed point did not converge in " + std::to_string(fp.max_iter) +
                                    " iterations at t = " + std::to_string(traj.time_),
                                residual);
    previous_residual = residual;
  }
  traj.stats_.solves += 1;
  traj.stats_.iterations += it;
  traj.stats_.max_iterations = std::max(traj.stats_.max_iterations, it);

  traj.path_.push_back(x);
  traj.acc_.advance(traj.head_, x);
  traj.head_ = x;
  traj.lambda_ = m;
  traj.steps_ += 1;
  traj.time_ = h * static_cast<double>(traj.steps_);
}

void neutral_step(Trajectory& traj, const Model& model, const Eigen::VectorXd& dW,
                  const Eigen::VectorXd* extra_drift, const FixedPointSettings& fp) {
  const LeftCoefficients c = left_coefficients(traj, model);
  neutral_step(traj, model, c.b, c.sigma, dW, extra_drift, fp);
}

Trajectory simulate(const Model& model, const Path& initial, const SimConfig& cfg) {
  model.require_contraction();
  const std::int64_t n = cfg.n_steps();
  const auto marks = cfg.checkpoint_steps();
  if (!detail::nearly_equal(initial.step(), cfg.step))
    throw AlignmentError("initial segment grid step differs from the simulation step");
  Trajectory traj(model, initial);
  traj.reserve(n);
  const RandomStream rng(cfg.seed, cfg.stream);
  const FixedPointSettings fp = cfg.fixed_point();
  Eigen::VectorXd dW(model.dim());
  std::size_t next_mark = 0;
  for (std::int64_t k = 0;; ++k) {
    while (next_mark < marks.size() && marks[next_mark] == k) {
      traj.take_snapshot();
      ++next_mark;
    }
    if (k == n) break;
    rng.normals(static_cast<std::uint64_t>(k), dW);
    dW *= std::sqrt(cfg.step);
    neutral_step(traj, model, dW, nullptr, fp);
  }
  return traj;
}

MomentPoint mean_stderr(double t, const std::vector<double>& values) {
  const auto n = static_cast<double>(values.size());
  double sum = 0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double se = values.size() > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
  return {t, mean, se};
}

std::vector<MomentPoint> estimate_PtV(const Model& model, const Path& initial, const SimConfig& cfg,
                                      const PathFunctional& V, int n_paths, int threads) {
  if (n_paths < 2) throw std::invalid_argument("estimate_PtV needs at least 2 paths");
  const std::size_t n_marks = cfg.checkpoint_steps().size();
  std::vector<std::vector<double>> values(n_marks, std::vector<double>(static_cast<std::size_t>(n_paths)));
  parallel_for(static_cast<std::size_t>(n_paths), threads, [&](std::size_t i) {
    SimConfig c = cfg;
    c.stream = cfg.stream + static_cast<std::uint32_t>(i);
    const Trajectory traj = simulate(model, initial, c);
    for (std::size_t j = 0; j < n_marks; ++j) values[j][i] = V(traj.snapshot_segment(j));
  });
  std::vector<MomentPoint> out;
  out.reserve(n_marks);
  for (std::size_t j = 0; j < n_marks; ++j) out.push_back(mean_stderr(cfg.checkpoints[j], values[j]));
  return out;
}

}  // namespace neutral
