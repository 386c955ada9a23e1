#include "neutral/harness.hpp"

#include "neutral/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace neutral {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string tag(std::string_view key, double v) { return std::string(key) + "=" + format_double(v); }

Series make_series(std::string name, const std::vector<double>& t, const std::vector<double>& v,
                   const std::vector<double>& se) {
  Series s{std::move(name), {}};
  for (std::size_t i = 0; i < t.size(); ++i) s.points.push_back({t[i], v[i], se.empty() ? 0.0 : se[i]});
  return s;
}

Series make_series(std::string name, const std::vector<MomentPoint>& pts) {
  Series s{std::move(name), {}};
  for (const auto& p : pts) s.points.push_back({p.t, p.mean, p.stderr_});
  return s;
}

Path shifted_constant(const Model& model, double value, double shift, double step) {
  Eigen::VectorXd c = Eigen::VectorXd::Constant(model.dim(), value);
  c(0) += shift;
  return Path::constant(c, step, model.decay());
}

nlohmann::ordered_json base_config(const Model& model, const ExperimentConfig& cfg) {
  nlohmann::ordered_json j = to_json(cfg);
  j["model_hash"] = model_hash(model.spec());
  return j;
}


}  // namespace

bool ExperimentReport::all_pass() const {
  return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
}

const Series& ExperimentReport::find_series(std::string_view name) const {
  for (const auto& s : series)
    if (s.name == name) return s;
  throw std::out_of_range("no series named " + std::string(name));
}

const RateFit& ExperimentReport::find_fit(std::string_view name) const {
  for (const auto& f : fits)
    if (f.series == name) return f.fit;
  throw std::out_of_range("no fit for series " + std::string(name));
}

double ExperimentReport::scalar(std::string_view name) const {
  for (const auto& [k, v] : scalars)
    if (k == name) return v;
  throw std::out_of_range("no scalar named " + std::string(name));
}

ExperimentConfig ExperimentConfig::defaults(std::string_view experiment) {
  ExperimentConfig c;
  c.sim.step = 0.01;
  c.sim.seed = 20240601;
  if (experiment == "lyapunov" || experiment == "smallset") {
    c.sim.horizon = 16;
    c.sim.checkpoints = {0, 0.5, 1, 2, 4, 8, 16};
    c.xi = 2;
  } else if (experiment == "lipschitz") {
    c.sim.horizon = 8;
    c.sim.checkpoints = {0, 1, 2, 4, 8};
    c.n_paths = 500;
  } else if (experiment == "contractivity") {
    c.sim.horizon = 10;
    for (int k = 0; k <= 10; ++k) c.sim.checkpoints.push_back(k);
  } else if (experiment == "ergodicity") {
    c.sim.horizon = 16;
    c.sim.checkpoints = {1, 2, 4, 8, 16};
  } else {
    throw std::invalid_argument("unknown experiment '" + std::string(experiment) + "'");
  }
  return c;
}

nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["step"] = c.sim.step;
  j["horizon"] = c.sim.horizon;
  j["seed"] = c.sim.seed;
  j["stream"] = c.sim.stream;
  j["fp_tol"] = c.sim.fp_tol;
  j["fp_max_iter"] = c.sim.fp_max_iter;
  j["checkpoints"] = c.sim.checkpoints;
  j["n_paths"] = c.n_paths;
  j["xi"] = c.xi;
  j["eta"] = c.eta;
  j["distances"] = c.distances;
  j["lambdas"] = c.lambdas;
  j["epsilons"] = c.epsilons;
  j["pair_distance"] = c.pair_distance;
  j["decay_window"] = {c.decay_from, c.decay_to};
  j["delta"] = c.delta;
  if (c.K_hat) j["K_hat"] = *c.K_hat;
  j["n_init"] = c.n_init;
  j["n_small_paths"] = c.n_small_paths;
  return j;
}

std::string model_hash(const ModelSpec& spec) {
  std::string text = std::to_string(spec.dim) + "|" + format_double(spec.decay) + "|" + spec.G + "|" +
                     spec.b + "|" + spec.sigma;
  for (const auto& m : spec.measures) text += "|" + format_double(m.rate) + "," + format_double(m.scale);
  for (const auto& [k, v] : spec.params) text += "|" + k + "=" + format_double(v);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Path constant_path(const Model& model, double value, double step) {
  return shifted_constant(model, value, 0, step);
}

ExperimentReport exp_lyapunov(const Model& model, const ExperimentConfig& cfg) {
  ExperimentReport rep;
  rep.experiment = "lyapunov";
  rep.config = base_config(model, cfg);
  const Path xi = constant_path(model, cfg.xi, cfg.sim.step);
  const double v0 = lyapunov_V(xi.view());
  const auto pts = estimate_PtV(model, xi, cfg.sim, [](const PathView& p) { return lyapunov_V(p); },
                                cfg.n_paths, cfg.threads);
  rep.series.push_back(make_series("PtV", pts));

  std::vector<double> t, y, se;
  for (const auto& p : pts) {
    t.push_back(p.t);
    y.push_back(p.mean);
    se.push_back(p.stderr_);
  }
  const RateFit fit = fit_exponential(t, y, true, se);
  rep.fits.push_back({"PtV", fit});

  const double gamma = fit.identifiable ? fit.lambda : kNaN;
  // Tightest K with K (e^{-gamma t} V(xi) + 1) >= P_t V at every checkpoint.
  double K = kNaN;
  if (gamma > 0) {
    K = 0;
    for (std::size_t i = 0; i < t.size(); ++i) K = std::max(K, y[i] / (std::exp(-gamma * t[i]) * v0 + 1));
  }
  rep.scalars = {{"V_xi", v0}, {"gamma_hat", gamma}, {"K_hat", K}};
  rep.verdicts.push_back({"fitted decay rate gamma > 0", fit.identifiable && gamma > 0,
                          "gamma = " + format_double(gamma) + ", 95% CI [" +
                              format_double(fit.lambda_ci_low) + ", " + format_double(fit.lambda_ci_high) + "]"});
  bool dominated = std::isfinite(K);
  if (dominated)
    for (std::size_t i = 0; i < t.size(); ++i)
      dominated = dominated && y[i] - 2 * se[i] <= K * (std::exp(-gamma * t[i]) * v0 + 1) * (1 + 1e-12);
  rep.verdicts.push_back({"K e^{-gamma t} V(xi) + K dominates P_t V within 2 SE", dominated,
                          "K = " + format_double(K)});
  if (const auto& c = model.spec().lyapunov) {
    const double delta = delta_r(model.mu0(), model.decay());
    const double margin = 1 - (c->alpha1 + c->alpha2 * delta);
    if (margin > 0) {
      const double beta = beta_const(c->alpha1, c->alpha2, delta).beta;
      const double certified = c->lambda1 - 2 * model.decay() * beta - c->lambda2 * delta;
      rep.scalars.push_back({"gamma_certified", certified});
      rep.verdicts.push_back({"moment condition certifies gamma > 0", certified > 0,
                              "gamma = " + format_double(certified)});
    }
  }
  return rep;
}

ExperimentReport exp_lipschitz(const Model& model, const ExperimentConfig& cfg) {
  if (cfg.distances.size() < 2) throw std::invalid_argument("lipschitz: need at least two distances");
  ExperimentReport rep;
  rep.experiment = "lipschitz";
  rep.config = base_config(model, cfg);
  const Path xi = constant_path(model, cfg.xi, cfg.sim.step);
  const std::size_t marks = cfg.sim.checkpoint_steps().size();
  const auto n = static_cast<std::size_t>(cfg.n_paths);

  std::vector<std::vector<MomentPoint>> sq(cfg.distances.size());
  for (std::size_t s = 0; s < cfg.distances.size(); ++s) {
    const double d = cfg.distances[s];
    if (!(d > 0)) throw std::invalid_argument("lipschitz: distances must be positive");
    const Path eta = shifted_constant(model, cfg.xi, d, cfg.sim.step);
    std::vector<std::vector<double>> values(marks, std::vector<double>(n));
    parallel_for(n, cfg.threads, [&](std::size_t i) {
      SimConfig c = cfg.sim;
      c.stream = cfg.sim.stream + static_cast<std::uint32_t>(s * n + i);
      const PairRun run = run_pair(model, xi, eta, Synchronous{}, c);
      for (std::size_t k = 0; k < marks; ++k) values[k][i] = run.checkpoints[k].norm_diff * run.checkpoints[k].norm_diff;
    });
    for (std::size_t k = 0; k < marks; ++k) sq[s].push_back(mean_stderr(cfg.sim.checkpoints[k], values[k]));
    rep.series.push_back(make_series(tag("sqdist_d", d), sq[s]));
    std::vector<MomentPoint> ratio = sq[s];
    for (auto& p : ratio) {
      p.mean /= d * d;
      p.stderr_ /= d * d;
    }
    rep.series.push_back(make_series(tag("ratio_d", d), ratio));
  }

  // Homogeneity of degree 2 between consecutive halvings.
  bool collapse = true;
  std::string detail;
  int compared = 0;
  for (std::size_t s = 0; s + 1 < cfg.distances.size(); ++s) {
    if (std::abs(cfg.distances[s + 1] * 2 - cfg.distances[s]) > 1e-12 * cfg.distances[s]) continue;
    ++compared;
    for (std::size_t k = 0; k < marks; ++k) {
      const auto& a = sq[s][k];
      const auto& b = sq[s + 1][k];
      const double se = std::sqrt(a.stderr_ * a.stderr_ / 16 + b.stderr_ * b.stderr_);
      const double gap = std::abs(a.mean / 4 - b.mean);
      const bool ok = gap <= 2 * se + 1e-12 * std::abs(a.mean);
      collapse = collapse && ok;
      if (!ok)
        detail += "d=" + format_double(cfg.distances[s]) + " t=" + format_double(a.t) + ": |a/4-b| = " +
                  format_double(gap) + " > 2 SE = " + format_double(2 * se) + "; ";
    }
  }
  if (detail.empty()) detail = std::to_string(compared) + " halvings agree at every checkpoint";
  rep.verdicts.push_back({"halving ||xi-eta||_r quarters E||X_t-Y_t||_r^2 within 2 SE", compared > 0 && collapse, detail});

  // Exponential envelope K e^{Kt} for the largest distance.
  const auto& ratio0 = rep.find_series(tag("ratio_d", cfg.distances.front()));
  double growth = 0;
  {
    std::vector<double> t, y, se;
    for (const auto& p : ratio0.points)
      if (p.value > 0) {
        t.push_back(p.t);
        y.push_back(p.value);
        se.push_back(p.stderr_);
      }
    if (t.size() >= 4) {
      const RateFit fit = fit_exponential(t, y, false, se);
      rep.fits.push_back({ratio0.name, fit});
      growth = std::max(0.0, -fit.lambda);
    }
  }
  double K = 0;
  for (const auto& p : ratio0.points) K = std::max(K, p.value * std::exp(-growth * p.t));
  K = std::max(K, growth);
  rep.scalars = {{"envelope_rate", growth}, {"envelope_K", K}};
  rep.verdicts.push_back({"ratios admit a finite envelope K e^{Kt}", std::isfinite(K),
                          "K = " + format_double(K) + ", rate = " + format_double(growth)});
  return rep;
}

ExperimentReport exp_contractivity(const Model& model, const ExperimentConfig& cfg) {
  ExperimentReport rep;
  rep.experiment = "contractivity";
  rep.config = base_config(model, cfg);
  const Path xi = constant_path(model, cfg.xi, cfg.sim.step);
  const Path eta = shifted_constant(model, cfg.xi, cfg.pair_distance, cfg.sim.step);
  const double dist = norm_r_diff(xi.view(), eta.view());
  const std::size_t marks = cfg.sim.checkpoint_steps().size();
  const auto n = static_cast<std::size_t>(cfg.n_paths);
  for (double eps : cfg.epsilons)
    if (!(dist < eps))
      throw std::invalid_argument("contractivity: rho_{r,delta}(xi, eta) must be < 1 (distance " +
                                  format_double(dist) + ", delta " + format_double(eps) + ")");

  // Decay of E||X_t - Y_t||_r^2 under the drift with an unreachable budget.
  double smallest_lambda = kNaN;
  std::string decay_detail;
  for (double lambda : cfg.lambdas) {
    std::vector<std::vector<double>> values(marks, std::vector<double>(n));
    parallel_for(n, cfg.threads, [&](std::size_t i) {
      SimConfig c = cfg.sim;
      c.stream = cfg.sim.stream + static_cast<std::uint32_t>(i);
      const PairRun run = run_pair(model, xi, eta, GirsanovDrift{lambda, 1e-300}, c);
      for (std::size_t k = 0; k < marks; ++k) values[k][i] = run.checkpoints[k].norm_diff * run.checkpoints[k].norm_diff;
    });
    std::vector<MomentPoint> pts;
    for (std::size_t k = 0; k < marks; ++k) pts.push_back(mean_stderr(cfg.sim.checkpoints[k], values[k]));
    const std::string name = tag("decay_lambda", lambda);
    rep.series.push_back(make_series(name, pts));
    std::vector<double> t, y, se;
    for (const auto& p : pts)
      if (p.t >= cfg.decay_from - 1e-12 && p.t <= cfg.decay_to + 1e-12 && p.mean > 0) {
        t.push_back(p.t);
        y.push_back(p.mean);
        se.push_back(p.stderr_);
      }
    if (t.size() >= 4) {
      const RateFit fit = fit_exponential(t, y, false, se);
      rep.fits.push_back({name, fit});
      decay_detail += "lambda=" + format_double(lambda) + ": slope " + format_double(-fit.lambda) + " CI [" +
                      format_double(-fit.lambda_ci_high) + ", " + format_double(-fit.lambda_ci_low) + "]; ";
      if (fit.lambda_positive() && std::isnan(smallest_lambda)) smallest_lambda = lambda;
    }
  }
  rep.scalars.push_back({"smallest_lambda_negative_slope", smallest_lambda});
  rep.verdicts.push_back({"some tested lambda gives a negative decay slope with 95% CI excluding 0",
                          !std::isnan(smallest_lambda), decay_detail});

  // Plain ensemble from eta for the marginal OT estimate.
  std::vector<std::vector<Path>> plain(marks, std::vector<Path>(n, eta));
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    SimConfig c = cfg.sim;
    c.stream = cfg.sim.stream + 0x10000000u + static_cast<std::uint32_t>(i);
    const Trajectory traj = simulate(model, eta, c);
    for (std::size_t k = 0; k < marks; ++k) plain[k][i] = traj.snapshot_segment(k).to_path();
  });

  bool contracted = false;
  bool mean_R_ok = true;
  bool i3_ok = true;
  std::string r_detail;
  for (double eps : cfg.epsilons) {
    const double delta = eps;
    const MetricSpec metric{Metric::RhoDelta, delta};
    const double rho0 = std::min(1.0, std::min(1.0, dist) / delta);
    const double x = dist * dist / eps;
    const double i3_bound = std::sqrt(3 * x * std::exp(3 * x));
    std::vector<double> w_marginal(marks);
    bool have_marginal = false;
    for (double lambda : cfg.lambdas) {
      const auto pools = sample_Pi_series(model, xi, eta, GirsanovDrift{lambda, eps}, cfg.sim, cfg.n_paths, cfg.threads);
      if (!have_marginal) {
        // The X marginal does not depend on lambda.
        for (std::size_t k = 0; k < marks; ++k)
          w_marginal[k] = empirical_W(pools[k].x, plain[k], metric, cfg.threads);
        rep.series.push_back(make_series(tag("W_marginal_eps", eps), cfg.sim.checkpoints, w_marginal, {}));
        have_marginal = true;
      }
      std::vector<double> bound(marks), i1(marks), i2(marks), i3(marks), meanR(marks), seR(marks), factor(marks);
      double first_t = kNaN;
      for (std::size_t k = 0; k < marks; ++k) {
        const PiSample& s = pools[k];
        double sb = 0, s1 = 0, s2 = 0, s3 = 0;
        std::vector<double> rs(n);
        for (std::size_t i = 0; i < n; ++i) {
          const GluedPair& g = s.pairs[i];
          sb += metric_value(s.x[g.x].view(), s.y[g.y].view(), metric);
          const double own = metric_value(s.x[i].view(), s.y[i].view(), metric);
          (s.tau_hit[i] ? s2 : s1) += own;
          s3 += std::max(0.0, s.R[i] - 1);
          rs[i] = s.R[i];
        }
        const double nn = static_cast<double>(n);
        bound[k] = sb / nn;
        i1[k] = s1 / nn;
        i2[k] = s2 / nn;
        i3[k] = s3 / nn;
        const MomentPoint mr = mean_stderr(s.t, rs);
        meanR[k] = mr.mean;
        seR[k] = mr.stderr_;
        factor[k] = bound[k] / rho0;
        if (s.t > 0 && factor[k] < 1 && std::isnan(first_t)) first_t = s.t;
        if (std::abs(mr.mean - 1) > 3 * mr.stderr_ + 1e-12) {
          mean_R_ok = false;
          r_detail += "lambda=" + format_double(lambda) + " eps=" + format_double(eps) + " t=" + format_double(s.t) +
                      ": mean R = " + format_double(mr.mean) + " +- " + format_double(mr.stderr_) + "; ";
        }
        if (i3[k] > i3_bound) {
          i3_ok = false;
          r_detail += "I3 = " + format_double(i3[k]) + " exceeds " + format_double(i3_bound) + "; ";
        }
      }
      const std::string suffix = "_lambda=" + format_double(lambda) + "_eps=" + format_double(eps);
      rep.series.push_back(make_series("Pi_bound" + suffix, cfg.sim.checkpoints, bound, {}));
      rep.series.push_back(make_series("factor" + suffix, cfg.sim.checkpoints, factor, {}));
      rep.series.push_back(make_series("I1" + suffix, cfg.sim.checkpoints, i1, {}));
      rep.series.push_back(make_series("I2" + suffix, cfg.sim.checkpoints, i2, {}));
      rep.series.push_back(make_series("I3" + suffix, cfg.sim.checkpoints, i3, {}));
      rep.series.push_back(make_series("mean_R" + suffix, cfg.sim.checkpoints, meanR, seR));
      rep.scalars.push_back({"first_contracting_t" + suffix, first_t});
      contracted = contracted || !std::isnan(first_t);
    }
  }
  rep.verdicts.push_back({"coupling bound gives a contraction factor < 1 at some checkpoint", contracted, ""});
  rep.verdicts.push_back({"mean of R_{t^tau} within 3 SE of 1", mean_R_ok, r_detail});
  rep.verdicts.push_back({"E(R-1)^+ below sqrt(3x e^{3x}), x = ||xi-eta||_r^2 / epsilon", i3_ok, r_detail});
  return rep;
}

ExperimentReport exp_ergodicity(const Model& model, const ExperimentConfig& cfg) {
  ExperimentReport rep;
  rep.experiment = "ergodicity";
  rep.config = base_config(model, cfg);
  const Path xi = constant_path(model, cfg.xi, cfg.sim.step);
  const Path eta = constant_path(model, cfg.eta, cfg.sim.step);
  const std::size_t marks = cfg.sim.checkpoint_steps().size();
  const auto n = static_cast<std::size_t>(cfg.n_paths);
  const MetricSpec metric{Metric::RhoV, 1};

  std::vector<std::vector<Path>> xs(marks, std::vector<Path>(n, xi));
  std::vector<std::vector<Path>> ys(marks, std::vector<Path>(n, eta));
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    SimConfig c = cfg.sim;
    c.stream = cfg.sim.stream + static_cast<std::uint32_t>(i);
    const PairRun run = run_pair(model, xi, eta, Synchronous{}, c);
    for (std::size_t k = 0; k < marks; ++k) {
      xs[k][i] = run.pair.x.snapshot_segment(k).to_path();
      ys[k][i] = run.pair.y.snapshot_segment(k).to_path();
    }
  });

  std::vector<double> w(marks), coupled(marks), coupled_se(marks);
  bool dominated = true;
  std::string dom_detail;
  for (std::size_t k = 0; k < marks; ++k) {
    const Eigen::MatrixXd cost = cost_matrix(xs[k], ys[k], metric, cfg.threads);
    w[k] = solve_exact(cost).value;
    std::vector<double> diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    const MomentPoint m = mean_stderr(cfg.sim.checkpoints[k], diag);
    coupled[k] = m.mean;
    coupled_se[k] = m.stderr_;
    if (w[k] > coupled[k] * (1 + 1e-12)) {
      dominated = false;
      dom_detail += "t=" + format_double(m.t) + ": W = " + format_double(w[k]) + " > " + format_double(coupled[k]) + "; ";
    }
  }
  rep.series.push_back(make_series("W_empirical", cfg.sim.checkpoints, w, {}));
  rep.series.push_back(make_series("W_coupled", cfg.sim.checkpoints, coupled, coupled_se));

  const RateFit fit = fit_exponential(cfg.sim.checkpoints, w, false);
  rep.fits.push_back({"W_empirical", fit});
  rep.scalars.push_back({"lambda_hat", fit.lambda});
  rep.verdicts.push_back({"fitted rate lambda > 0 with 95% CI excluding 0", fit.lambda_positive(),
                          "lambda = " + format_double(fit.lambda) + ", 95% CI [" + format_double(fit.lambda_ci_low) +
                              ", " + format_double(fit.lambda_ci_high) + "]"});
  rep.verdicts.push_back({"coupled upper bound dominates empirical W at every checkpoint", dominated,
                          dom_detail.empty() ? std::string("all checkpoints") : dom_detail});

  // Reference sample of the invariant law from one long run (heuristic).
  if (fit.lambda > 0 && std::isfinite(fit.lambda)) {
    const double burn = 5 / fit.lambda;
    const double spacing = 1 / fit.lambda;
    const std::size_t n_ref = std::min<std::size_t>(n, 64);
    const double total = burn + spacing * static_cast<double>(n_ref - 1);
    if (total <= 5000) {
      SimConfig c = cfg.sim;
      c.stream = cfg.sim.stream + 0x20000000u;
      const auto snap = [&](double t) { return std::ceil(t / c.step - 1e-9) * c.step; };
      c.checkpoints.clear();
      for (std::size_t j = 0; j < n_ref; ++j) {
        const double t = snap(burn + spacing * static_cast<double>(j));
        if (c.checkpoints.empty() || t > c.checkpoints.back()) c.checkpoints.push_back(t);
      }
      c.horizon = c.checkpoints.back();
      const Trajectory long_run = simulate(model, xi, c);
      std::vector<Path> ref, last;
      for (std::size_t j = 0; j < long_run.snapshots().size(); ++j) {
        ref.push_back(long_run.snapshot_segment(j).to_path());
        last.push_back(xs.back()[j]);
      }
      rep.scalars.push_back({"W_final_vs_reference", empirical_W(last, ref, metric, cfg.threads)});
      rep.scalars.push_back({"reference_burn_in", burn});
      rep.scalars.push_back({"reference_spacing", spacing});
    }
  }
  return rep;
}

ExperimentReport exp_smallset(const Model& model, const ExperimentConfig& cfg) {
  ExperimentReport rep;
  rep.experiment = "smallset";
  rep.config = base_config(model, cfg);
  double K = kNaN;
  if (cfg.K_hat) {
    K = *cfg.K_hat;
  } else {
    ExperimentConfig lc = cfg;
    const ExperimentConfig d = ExperimentConfig::defaults("lyapunov");
    lc.sim.horizon = d.sim.horizon;
    lc.sim.checkpoints = d.sim.checkpoints;
    const ExperimentReport ly = exp_lyapunov(model, lc);
    K = ly.scalar("K_hat");
    rep.scalars.push_back({"lyapunov_gamma_hat", ly.scalar("gamma_hat")});
  }
  if (!(K > 0) || !std::isfinite(K)) {
    rep.scalars.push_back({"K_hat", K});
    rep.verdicts.push_back({"Lyapunov fit provides a finite K", false, "K = " + format_double(K)});
    return rep;
  }
  const double R = std::sqrt(4 * K);
  const double alpha = std::min(model.alpha_hat(), 1 - 1e-12);
  const double t = t_small(R, cfg.delta / 4, model.decay(), alpha);
  const SmallnessResult s = smallness_estimate(model, R, cfg.delta, t, cfg.n_init, cfg.n_small_paths, cfg.sim, cfg.threads);
  rep.scalars.insert(rep.scalars.end(), {{"K_hat", K},
                 {"R", R},
                 {"t_small", t},
                 {"t", s.t},
                 {"alpha_t_hat", s.alpha_t_hat},
                 {"alpha_t_wilson_low", s.alpha_ci.low},
                 {"alpha_t_wilson_high", s.alpha_ci.high},
                 {"smallness_bound", s.bound}});
  std::vector<double> idx, probs;
  for (std::size_t i = 0; i < s.per_initial.size(); ++i) {
    idx.push_back(static_cast<double>(i));
    probs.push_back(s.per_initial[i]);
  }
  rep.series.push_back(make_series("hit_probability_by_initial", idx, probs, {}));
  rep.verdicts.push_back({"alpha_t > 0 with Wilson 95% lower bound > 0", s.alpha_t_hat > 0 && s.alpha_ci.low > 0,
                          "alpha_t = " + format_double(s.alpha_t_hat) + " at t = " + format_double(s.t) +
                              ", Wilson 95% [" + format_double(s.alpha_ci.low) + ", " +
                              format_double(s.alpha_ci.high) + "], bound 1 - alpha^2/2 = " + format_double(s.bound)});
  return rep;
}

ExperimentReport run_experiment(std::string_view name, const Model& model, const ExperimentConfig& cfg) {
  if (name == "lyapunov") return exp_lyapunov(model, cfg);
  if (name == "lipschitz") return exp_lipschitz(model, cfg);
  if (name == "smallset") return exp_smallset(model, cfg);
  if (name == "contractivity") return exp_contractivity(model, cfg);
  if (name == "ergodicity") return exp_ergodicity(model, cfg);
  throw std::invalid_argument("unknown experiment '" + std::string(name) +
                              "' (expected lyapunov, lipschitz, smallset, contractivity or ergodicity)");
}

PathwiseCheck check_pathwise_bounds(const Model& model, const Path& initial, const SimConfig& cfg,
                                    int n_paths, double alpha, int threads) {
  if (!(alpha >= 0 && alpha < 1)) throw std::invalid_argument("pathwise bounds need alpha in [0, 1)");
  model.require_contraction();
  const std::int64_t n_steps = cfg.n_steps();
  const auto marks = cfg.checkpoint_steps();
  const double r = model.decay();
  const double q = 1 - alpha;
  const double f0_sq = std::pow(norm_r(initial.view()), 2);
  const auto n = static_cast<std::size_t>(n_paths);
  std::vector<PathwiseCheck> per(n);

  parallel_for(n, threads, [&](std::size_t i) {
    PathwiseCheck& out = per[i];
    Trajectory f(model, initial), g(model, initial);
    f.reserve(n_steps);
    g.reserve(n_steps);
    const RandomStream rf(cfg.seed, cfg.stream + static_cast<std::uint32_t>(i));
    const RandomStream rg(cfg.seed, partner_stream(cfg.stream + static_cast<std::uint32_t>(i)));
    Eigen::VectorXd dw(model.dim());
    double sup_diff = 0, sup_single = 0;
    std::size_t next = 0;
    auto record = [&](double lhs, double rhs, double& worst) {
      ++out.checks;
      if (lhs > rhs * (1 + 1e-9) + 1e-12) ++out.violations;
      if (rhs > 0) worst = std::max(worst, lhs / rhs);
    };
    for (std::int64_t k = 0;; ++k) {
      const double s = f.time();
      const double w = std::exp(2 * r * s);
      sup_diff = std::max(sup_diff, w * (f.lambda() - g.lambda()).squaredNorm());
      sup_single = std::max(sup_single, w * f.lambda().squaredNorm());
      while (next < marks.size() && marks[next] == k) {
        const double nd = norm_r_diff(f.segment(), g.segment());
        const double nf = norm_r(f.segment());
        record(w * nd * nd, sup_diff / (q * q), out.worst_equal_start);
        record(w * nf * nf, f0_sq / q + sup_single / (q * q), out.worst_single);
        ++next;
      }
      if (k == n_steps) break;
      rf.normals(static_cast<std::uint64_t>(k), dw);
      dw *= std::sqrt(cfg.step);
      neutral_step(f, model, dw, nullptr, cfg.fixed_point());
      rg.normals(static_cast<std::uint64_t>(k), dw);
      dw *= std::sqrt(cfg.step);
      neutral_step(g, model, dw, nullptr, cfg.fixed_point());
    }
  });

  PathwiseCheck total;
  total.n_paths = n_paths;
  for (const auto& p : per) {
    total.checks += p.checks;
    total.violations += p.violations;
    total.worst_equal_start = std::max(total.worst_equal_start, p.worst_equal_start);
    total.worst_single = std::max(total.worst_single, p.worst_single);
  }
  return total;
}

nlohmann::ordered_json to_json(const ExperimentReport& report) {
  using nlohmann::ordered_json;
  // Non-finite numbers become null in JSON.
  auto num = [](double v) -> ordered_json { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); };
  ordered_json j;
  j["experiment"] = report.experiment;
  j["config"] = report.config;
  j["series"] = ordered_json::array();
  for (const auto& s : report.series) {
    ordered_json t = ordered_json::array(), v = ordered_json::array(), e = ordered_json::array();
    for (const auto& p : s.points) {
      t.push_back(num(p.t));
      v.push_back(num(p.value));
      e.push_back(num(p.stderr_));
    }
    j["series"].push_back({{"name", s.name}, {"t", t}, {"value", v}, {"stderr", e}});
  }
  j["fits"] = ordered_json::array();
  for (const auto& f : report.fits) {
    ordered_json params{{"C", num(f.fit.C)}, {"lambda", num(f.fit.lambda)}};
    if (f.fit.with_floor) params["c_inf"] = num(f.fit.c_inf);
    j["fits"].push_back({{"series", f.series},
                         {"form", f.fit.form()},
                         {"params", params},
                         {"residual", num(f.fit.residual)},
                         {"r_squared", num(f.fit.r_squared)},
                         {"lambda_se", num(f.fit.lambda_se)},
                         {"lambda_ci", {num(f.fit.lambda_ci_low), num(f.fit.lambda_ci_high)}},
                         {"t_range", {f.fit.t_min, f.fit.t_max}},
                         {"identifiable", f.fit.identifiable}});
  }
  j["scalars"] = ordered_json::object();
  for (const auto& [k, v] : report.scalars) j["scalars"][k] = num(v);
  j["verdicts"] = ordered_json::array();
  for (const auto& v : report.verdicts) j["verdicts"].push_back({{"claim", v.claim}, {"pass", v.pass}, {"detail", v.detail}});
  j["all_pass"] = report.all_pass();
  return j;
}

std::vector<std::string> write_report(const ExperimentReport& report, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> written;
  const auto open = [&](const fs::path& p) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    written.push_back(p.string());
    return out;
  };
  {
    auto out = open(fs::path(dir) / (report.experiment + ".json"));
    out << to_json(report).dump(2) << "\n";
  }
  for (const auto& s : report.series) {
    std::string name = s.name;
    for (char& c : name)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_')) c = '_';
    auto out = open(fs::path(dir) / (report.experiment + "_" + name + ".csv"));
    out << "t,value,stderr\n";
    for (const auto& p : s.points)
      out << format_double(p.t) << "," << format_double(p.value) << "," << format_double(p.stderr_) << "\n";
  }
  return written;
}

}  // namespace neutral
