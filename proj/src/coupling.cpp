#include "neutral/coupling.hpp"

#include "neutral/parallel.hpp"

#include <cmath>
#include <numeric>

namespace neutral {

namespace {

double threshold_for(const CouplingKind& kind, const Path& xi, const Path& eta) {
  if (const auto* g = std::get_if<GirsanovDrift>(&kind)) {
    const double d = norm_r_diff(xi.view(), eta.view());
    return d * d / g->epsilon;
  }
  return 0;
}

}  // namespace

void validate(const CouplingKind& kind) {
  if (const auto* g = std::get_if<GirsanovDrift>(&kind)) {
    if (!(g->lambda >= 0) || !std::isfinite(g->lambda))
      throw std::invalid_argument("GirsanovDrift: lambda must be nonnegative");
    if (!(g->epsilon > 0 && g->epsilon < 1))
      throw std::invalid_argument("GirsanovDrift: epsilon must lie in (0, 1)");
  }
}

CoupledPair::CoupledPair(const Model& model, Path xi, Path eta, const CouplingKind& kind)
    : x(model, xi), y(model, eta), threshold(threshold_for(kind, xi, eta)) {
  check_aligned(xi.view(), eta.view());
}

void couple_step(CoupledPair& pair, const Model& model, const CouplingKind& kind,
                 const Eigen::VectorXd& dW_x, const Eigen::VectorXd& dW_y,
                 const FixedPointSettings& fp) {
  const double dt = pair.x.path().step();
  const LeftCoefficients cx = left_coefficients(pair.x, model);
  const LeftCoefficients cy = left_coefficients(pair.y, model);
  const bool independent = std::holds_alternative<Independent>(kind);
  const Eigen::VectorXd& noise_y = independent ? dW_y : dW_x;

  const auto* girsanov = std::get_if<GirsanovDrift>(&kind);
  if (girsanov && pair.drift_active()) {
    const Eigen::VectorXd u = girsanov->lambda * (pair.x.lambda() - pair.y.lambda());
    if ((cy.sigma.array() == 0).any())
      throw A2ViolationError("sigma is singular on the second trajectory at t = " +
                             std::to_string(pair.time()));
    const Eigen::VectorXd h = u.cwiseQuotient(Eigen::VectorXd(cy.sigma));
    const double h_sq = h.squaredNorm();
    pair.log_R += -h.dot(noise_y) - 0.5 * h_sq * dt;
    pair.h_sq_integral += h_sq * dt;
    neutral_step(pair.y, model, cy.b, cy.sigma, noise_y, &u, fp);
  } else {
    neutral_step(pair.y, model, cy.b, cy.sigma, noise_y, nullptr, fp);
  }
  neutral_step(pair.x, model, cx.b, cx.sigma, dW_x, nullptr, fp);

  if (girsanov && pair.drift_active() && pair.threshold > 0 &&
      pair.h_sq_integral >= pair.threshold)
    pair.tau = pair.time();
}

PairRun run_pair(const Model& model, const Path& xi, const Path& eta, const CouplingKind& kind,
                 const SimConfig& cfg, double delta) {
  validate(kind);
  if (!(delta > 0)) throw std::invalid_argument("run_pair: delta must be positive");
  model.require_contraction();
  const std::int64_t n = cfg.n_steps();
  const auto marks = cfg.checkpoint_steps();
  if (!detail::nearly_equal(xi.step(), cfg.step))
    throw AlignmentError("initial segment grid step differs from the simulation step");

  PairRun run{CoupledPair(model, xi, eta, kind), {}};
  CoupledPair& pair = run.pair;
  pair.x.reserve(n);
  pair.y.reserve(n);
  const RandomStream rx(cfg.seed, cfg.stream);
  const RandomStream ry(cfg.seed, partner_stream(cfg.stream));
  const bool independent = std::holds_alternative<Independent>(kind);
  const FixedPointSettings fp = cfg.fixed_point();
  const double root_h = std::sqrt(cfg.step);
  Eigen::VectorXd dwx(model.dim());
  Eigen::VectorXd dwy = Eigen::VectorXd::Zero(model.dim());

  std::size_t next_mark = 0;
  for (std::int64_t k = 0;; ++k) {
    while (next_mark < marks.size() && marks[next_mark] == k) {
      const double nd = norm_r_diff(pair.x.segment(), pair.y.segment());
      const double rho = std::min(1.0, nd);
      run.checkpoints.push_back({pair.time(), (pair.x.head() - pair.y.head()).norm(), nd, rho,
                                 std::min(1.0, rho / delta), pair.log_R, pair.tau.has_value()});
      pair.x.take_snapshot();
      pair.y.take_snapshot();
      ++next_mark;
    }
    if (k == n) break;
    rx.normals(static_cast<std::uint64_t>(k), dwx);
    dwx *= root_h;
    if (independent) {
      ry.normals(static_cast<std::uint64_t>(k), dwy);
      dwy *= root_h;
    }
    couple_step(pair, model, kind, dwx, dwy, fp);
  }
  return run;
}

std::vector<GluedPair> glue_pool(std::span<const double> R, std::uint64_t seed,
                                 std::uint32_t stream) {
  if (R.size() < 2) throw std::invalid_argument("glue_pool: the pool needs at least 2 members");
  for (double v : R)
    if (!(v >= 0) || !std::isfinite(v))
      throw std::invalid_argument("glue_pool: densities must be finite and nonnegative");
  std::vector<double> cumulative(R.size());
  double total = 0;
  for (std::size_t j = 0; j < R.size(); ++j) {
    total += std::max(0.0, R[j] - 1);
    cumulative[j] = total;
  }
  const RandomStream rng(seed, stream);
  std::vector<GluedPair> out;
  out.reserve(R.size());
  for (std::size_t i = 0; i < R.size(); ++i) {
    const auto u = rng.uniform_pair(i, 0);
    if (u[0] <= std::min(1.0, R[i])) {
      out.push_back({i, i, true});
      continue;
    }
    if (!(total > 0))
      throw DegeneratePoolError(
          "no pool member has R > 1 to absorb the unglued mass; increase the pool size");
    const double target = u[1] * total;
    auto it = std::lower_bound(cumulative.begin(), cumulative.end(), target);
    if (it == cumulative.end()) --it;
    out.push_back({i, static_cast<std::size_t>(it - cumulative.begin()), false});
  }
  return out;
}

double PiSample::stuck_fraction() const {
  if (pairs.empty()) return 0;
  const auto stuck = std::count_if(pairs.begin(), pairs.end(), [](const GluedPair& p) { return p.stuck; });
  return static_cast<double>(stuck) / static_cast<double>(pairs.size());
}

std::vector<PiSample> sample_Pi_series(const Model& model, const Path& xi, const Path& eta,
                                       const GirsanovDrift& kind, const SimConfig& cfg, int n_pool,
                                       int threads) {
  if (n_pool < 2) throw std::invalid_argument("sample_Pi: n_pool must be at least 2");
  const auto n = static_cast<std::size_t>(n_pool);
  const std::size_t marks = cfg.checkpoint_steps().size();
  std::vector<PiSample> out(marks);
  std::vector<std::vector<char>> hit(marks, std::vector<char>(n));
  for (auto& s : out) {
    s.x.resize(n, xi);
    s.y.resize(n, eta);
    s.R.resize(n);
  }
  parallel_for(n, threads, [&](std::size_t i) {
    SimConfig ci = cfg;
    ci.stream = cfg.stream + static_cast<std::uint32_t>(i);
    const PairRun run = run_pair(model, xi, eta, kind, ci);
    for (std::size_t k = 0; k < marks; ++k) {
      out[k].x[i] = run.pair.x.snapshot_segment(k).to_path();
      out[k].y[i] = run.pair.y.snapshot_segment(k).to_path();
      out[k].R[i] = std::exp(run.checkpoints[k].log_R);
      hit[k][i] = run.checkpoints[k].tau_hit;
    }
  });
  for (std::size_t k = 0; k < marks; ++k) {
    out[k].t = cfg.checkpoints[k];
    out[k].tau_hit.assign(hit[k].begin(), hit[k].end());
    out[k].pairs = glue_pool(out[k].R, cfg.seed, cfg.stream ^ (0x40000000u + static_cast<std::uint32_t>(k)));
  }
  return out;
}

PiSample sample_Pi(const Model& model, const Path& xi, const Path& eta, const GirsanovDrift& kind,
                   const SimConfig& cfg, int n_pool, int threads) {
  SimConfig c = cfg;
  c.checkpoints = {cfg.horizon};
  return std::move(sample_Pi_series(model, xi, eta, kind, c, n_pool, threads).front());
}

double t_small(double R, double delta, double r, double alpha) {
  if (!(R > 0) || !(delta > 0) || !(r > 0))
    throw std::invalid_argument("t_small: R, delta and r must be positive");
  if (!(alpha >= 0 && alpha < 1)) throw std::invalid_argument("t_small: alpha must lie in [0, 1)");
  const double q = 1 - alpha;
  const double spread = 2 * R + delta / 3;
  const double inner = 2 * std::exp(2 * r) / (q * q) * spread * spread + R * R / q;
  return 1 + std::log(3 / (2 * delta * delta) * inner) / (2 * r);
}

WilsonInterval wilson95(std::int64_t k, std::int64_t n) {
  if (n <= 0 || k < 0 || k > n) throw std::invalid_argument("wilson95: need 0 <= k <= n, n > 0");
  constexpr double z = 1.959963984540054;
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(k) / nn;
  const double denom = 1 + z * z / nn;
  const double center = (p + z * z / (2 * nn)) / denom;
  const double half = z * std::sqrt(p * (1 - p) / nn + z * z / (4 * nn * nn)) / denom;
  return {k == 0 ? 0.0 : std::max(0.0, center - half), k == n ? 1.0 : std::min(1.0, center + half)};
}

SmallnessResult smallness_estimate(const Model& model, double R_ball, double delta, double t,
                                   int n_init, int n_paths, const SimConfig& base, int threads) {
  if (!(R_ball > 0) || !(delta > 0) || !(t > 0))
    throw std::invalid_argument("smallness_estimate: R, delta and t must be positive");
  if (n_init < 1 || n_paths < 1)
    throw std::invalid_argument("smallness_estimate: need at least one initial condition and path");
  SmallnessResult out;
  SimConfig cfg = base;
  cfg.checkpoints.clear();
  cfg.horizon = std::ceil(t / cfg.step - 1e-9) * cfg.step;
  out.t = cfg.horizon;
  out.t_recommended = t_small(R_ball, delta / 4, model.decay(), std::min(model.alpha_hat(), 0.999999));
  out.below_recommended = out.t < out.t_recommended;

  const int dim = model.dim();
  std::vector<Path> initial;
  initial.reserve(static_cast<std::size_t>(n_init));
  for (int i = 0; i < n_init; ++i) {
    if (i == 0) {
      Eigen::VectorXd c = Eigen::VectorXd::Zero(dim);
      c(0) = R_ball;
      initial.push_back(Path::constant(c, cfg.step, model.decay()));
    } else {
      initial.push_back(detail::probe_path_on_grid(base.seed, static_cast<std::uint64_t>(i), dim,
                                                   model.decay(), R_ball, cfg.step, 200));
    }
  }

  const double target = delta / 4;
  const auto total = static_cast<std::size_t>(n_init) * static_cast<std::size_t>(n_paths);
  std::vector<char> inside(total);
  parallel_for(total, threads, [&](std::size_t k) {
    SimConfig c = cfg;
    c.stream = base.stream + static_cast<std::uint32_t>(k);
    const Trajectory traj = simulate(model, initial[k / static_cast<std::size_t>(n_paths)], c);
    inside[k] = norm_r(traj.segment()) <= target;
  });

  std::int64_t worst_hits = 0;
  out.alpha_t_hat = 2;
  for (int i = 0; i < n_init; ++i) {
    const auto begin = inside.begin() + static_cast<std::ptrdiff_t>(i) * n_paths;
    const std::int64_t hits = std::count(begin, begin + n_paths, char{1});
    const double p = static_cast<double>(hits) / n_paths;
    out.per_initial.push_back(p);
    if (p < out.alpha_t_hat) {
      out.alpha_t_hat = p;
      worst_hits = hits;
    }
  }
  out.alpha_ci = wilson95(worst_hits, n_paths);
  out.bound = 1 - out.alpha_t_hat * out.alpha_t_hat / 2;
  return out;
}

}  // namespace neutral
