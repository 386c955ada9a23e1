#include "neutral/model.hpp"

#include "neutral/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <set>

namespace neutral {

namespace {

std::string literal(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Sequential draws from a counter-based stream.
class Draws {
 public:
  Draws(std::uint64_t seed, std::uint64_t index)
      : stream_(seed ^ (index * 0x9E3779B97F4A7C15ULL), static_cast<std::uint32_t>(index)) {}

  double uniform() { return stream_.uniform(counter_++); }
  Eigen::VectorXd normal(int dim) {
    Eigen::VectorXd z(dim);
    stream_.normals(counter_++, z);
    return z;
  }

 private:
  RandomStream stream_;
  std::uint64_t counter_ = 0;
};

Path random_walk(Draws& draws, int dim, double decay, Eigen::Index n, double step) {
  Eigen::MatrixXd values(dim, n);
  const double amplitude = 0.1 + 3.0 * draws.uniform();
  values.col(0) = draws.normal(dim);
  for (Eigen::Index k = 1; k < n; ++k)
    values.col(k) = values.col(k - 1) + amplitude * std::sqrt(step) * draws.normal(dim);
  return Path(values, step, decay);
}

Path scaled(const Path& p, double factor) {
  return Path(Eigen::MatrixXd(p.values() * factor), p.step(), p.decay());
}

Path scaled_to(const Path& p, double target) {
  const double n = norm_r(p.view());
  return n > 0 ? scaled(p, target / n) : p;
}

double hs_sq_diff(const dsl::SmallVector& a, const dsl::SmallVector& b) {
  return (a - b).squaredNorm();
}

}  // namespace

double delta_r(const MemoryMeasure& measure, double r) {
  if (!(measure.rate > 0) || !(measure.scale > 0))
    throw std::invalid_argument("memory measure needs positive rate and scale");
  if (r < 0) throw std::invalid_argument("delta_r: r must be nonnegative");
  if (!(measure.rate > 2 * r))
    throw DivergenceError("delta_r diverges: measure rate " + literal(measure.rate) +
                          " must exceed 2r = " + literal(2 * r));
  return measure.scale / (measure.rate - 2 * r);
}

double measure_integral_sq(const PathView& path, const MemoryMeasure& measure) {
  const double h = path.step();
  const Eigen::Index n = path.size();
  double total = path.oldest().squaredNorm() * std::exp(-measure.rate * path.span()) / measure.rate;
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const double w_old = std::exp(-measure.rate * h * static_cast<double>(n - 1 - i));
    const double w_new = std::exp(-measure.rate * h * static_cast<double>(n - 2 - i));
    total += h / 2 * (w_old * path.point(i).squaredNorm() + w_new * path.point(i + 1).squaredNorm());
  }
  return measure.scale * total;
}

BetaConstant beta_const(double alpha1, double alpha2, double delta) {
  const double load = alpha1 + alpha2 * delta;
  const double margin = 1 - load;
  if (!(margin > 0))
    throw HypothesisError("alpha1 + alpha2 * delta_r = " + literal(load) + " is not < 1");
  const double root = 1 + std::sqrt(load);
  return {root * root, margin};
}

D4Check check_d4(const Example1Params& p, double r) {
  const double r0 = p.r0;
  if (!(r0 > 2 * r))
    throw DivergenceError("d4 needs r0 > 2r (r0 = " + literal(r0) + ", r = " + literal(r) + ")");
  const auto& g = p.gamma;
  const double q = r0 * (r0 - 2 * r);
  const double sq = std::sqrt(q);
  D4Check c;
  c.lhs1 = g[0] * g[0];
  c.rhs1 = q;
  c.pass1 = c.lhs1 < c.rhs1;
  const double lead = 1 + g[0] / sq;
  c.lhs2 = 2 * g[2];
  c.rhs2 = 2 * r * lead * lead + g[1] * g[1] / q + 2 * (g[4] + g[0] * g[2]) / sq;
  c.pass2 = c.lhs2 > c.rhs2;
  return c;
}

LyapunovConstants example1_lyapunov_constants(const Example1Params& p, double r, int dim) {
  const auto& g = p.gamma;
  const MemoryMeasure mu0{p.r0, 1 / p.r0};
  const double delta = delta_r(mu0, r);
  // Holder's inequality against mu0 costs its mass when the mass exceeds 1.
  const double mass_factor = std::max(1.0, mu0.mass());
  const double d = dim;
  const double mix = g[4] + g[0] * g[2];
  const double eps = std::sqrt(mass_factor * delta);
  const double lead = 1 + g[0] * eps;
  const double noise = mass_factor * d * g[1] * g[1] * delta;
  const double base_slack = 2 * g[2] - 2 * r * lead * lead - 2 * mix * eps - noise;

  double young = 1;
  if (g[1] > 0 && base_slack > 0) young = std::min(1.0, base_slack / (2 * noise));

  LyapunovConstants c;
  c.alpha1 = 0;
  c.alpha2 = g[0] * g[0] * mass_factor;
  c.lambda1 = 2 * g[2] - mix * eps;
  c.lambda2 = mass_factor * (mix / eps + d * (1 + young) * g[1] * g[1]);
  c.c0 = std::max(d * (1 + 1 / young), d * (1 + young) * g[1] * g[1] * mass_factor);
  return c;
}

ModelSpec ModelSpec::example1(const Example1Params& p, double r, int dim) {
  ModelSpec s;
  s.dim = dim;
  s.decay = r;
  const std::string k = literal(p.r0);
  s.G = "g1 * m0 * kmean(" + k + ")";
  s.b = "-g3 * x0 - g4 * cbrt(x0 - g1 * m0 * kmean(" + k + ")) + g5 * m0 * kmean(" + k + ")";
  s.sigma = "1 + g2 * m0 * kclip(" + k + ")";
  s.measures = {MemoryMeasure{p.r0, 1 / p.r0}};
  s.params = {{"g1", p.gamma[0]}, {"g2", p.gamma[1]}, {"g3", p.gamma[2]},
              {"g4", p.gamma[3]}, {"g5", p.gamma[4]}, {"m0", 1 / p.r0}};
  s.preset = p;
  s.lyapunov = example1_lyapunov_constants(p, r, dim);
  return s;
}

ModelSpec ModelSpec::canonical() {
  return example1(Example1Params{{0.1, 0.1, 1.0, 0.5, 0.05}, 1.0}, 0.05);
}

Model::Model(ModelSpec spec, const ProbeSettings& alpha_probe)
    : spec_(std::move(spec)),
      G_(dsl::parse("0")),
      b_(dsl::parse("0")),
      sigma_(dsl::parse("0")) {
  if (spec_.dim < 1 || spec_.dim > dsl::kMaxDim)
    throw ModelError("dim must be in [1, " + std::to_string(dsl::kMaxDim) + "]");
  if (!(spec_.decay > 0)) throw ModelError("decay r must be positive");
  if (spec_.measures.empty()) throw ModelError("at least one memory measure is required");
  for (const auto& m : spec_.measures)
    if (!(m.rate > 0) || !(m.scale > 0))
      throw ModelError("memory measures need positive rate and scale");
  try {
    delta_r(mu0(), spec_.decay);
  } catch (const DivergenceError& e) {
    throw ModelError(e.what());
  }

  std::set<std::string, std::less<>> known;
  for (const auto& [name, value] : spec_.params) {
    if (!std::isfinite(value)) throw ModelError("parameter '" + name + "' is not finite");
    known.insert(name);
  }
  auto load = [&](const std::string& src, const char* which) {
    try {
      return dsl::parse(src, &known).bind(spec_.params);
    } catch (const dsl::ParseError& e) {
      throw ModelError(std::string(which) + ": " + e.what());
    }
  };
  G_ = load(spec_.G, "G");
  b_ = load(spec_.b, "b");
  sigma_ = load(spec_.sigma, "sigma");
  if (G_.shape() != dsl::Shape::Vector) throw ModelError("G must be vector-valued");
  if (b_.shape() != dsl::Shape::Vector) throw ModelError("b must be vector-valued");

  std::set<double> rates;
  for (const auto* e : {&G_, &b_, &sigma_})
    for (const auto& req : e->requests()) rates.insert(req.rate);
  rates_.assign(rates.begin(), rates.end());

  const Path zero = Path::constant(Eigen::VectorXd::Zero(spec_.dim), 0.01, spec_.decay);
  const double g0 = G(zero.view()).norm();
  if (g0 > 1e-12) throw ModelError("G must vanish on the zero path, |G(0)| = " + literal(g0));

  alpha_hat_ = probe_G_lipschitz(*this, alpha_probe).alpha_hat;
}

dsl::SmallVector Model::vector_coefficient(const dsl::Expr& e, const dsl::Features& f,
                                           const char* name) const {
  auto v = std::get<dsl::SmallVector>(dsl::evaluate(e, f));
  if (v.size() != spec_.dim)
    throw ModelError(std::string(name) + " evaluated to the wrong dimension");
  return v;
}

dsl::SmallVector Model::G(const dsl::Features& f) const { return vector_coefficient(G_, f, "G"); }
dsl::SmallVector Model::b(const dsl::Features& f) const { return vector_coefficient(b_, f, "b"); }

dsl::SmallVector Model::sigma(const dsl::Features& f) const {
  const dsl::Value v = dsl::evaluate(sigma_, f);
  if (dsl::is_scalar(v)) return dsl::SmallVector::Constant(spec_.dim, std::get<double>(v));
  auto diag = std::get<dsl::SmallVector>(v);
  if (diag.size() != spec_.dim) throw ModelError("sigma evaluated to the wrong dimension");
  return diag;
}

Accumulators Model::accumulators(const PathView& path) const {
  return Accumulators::from_path(path, rates_);
}

Coefficients Model::coefficients(const PathView& path) const {
  const Accumulators acc = accumulators(path);
  const Eigen::VectorXd head = path.head();
  const dsl::Features f(head, acc.rates(), acc.kmeans(), acc.kclips());
  return {G(f), b(f), sigma(f)};
}

dsl::SmallVector Model::G(const PathView& path) const {
  const Accumulators acc = accumulators(path);
  const Eigen::VectorXd head = path.head();
  return G(dsl::Features(head, acc.rates(), acc.kmeans(), acc.kclips()));
}

void Model::require_contraction() const {
  if (!(alpha_hat_ < 1))
    throw HypothesisError("probed contraction constant of G is " + literal(alpha_hat_) +
                          ", simulation requires < 1");
}

namespace detail {

Path probe_path(std::uint64_t seed, std::uint64_t index, int dim, double decay, double radius) {
  Draws draws(seed, index);
  static constexpr double kSteps[] = {0.01, 0.02, 0.05};
  const double step = kSteps[static_cast<int>(draws.uniform() * 3) % 3];
  const auto n = static_cast<Eigen::Index>(2 + draws.uniform() * 1998);
  return scaled_to(random_walk(draws, dim, decay, n, step), radius * draws.uniform());
}

Path probe_path_on_grid(std::uint64_t seed, std::uint64_t index, int dim, double decay,
                        double radius, double step, Eigen::Index n_points) {
  Draws draws(seed, index);
  return scaled_to(random_walk(draws, dim, decay, n_points, step), radius * draws.uniform());
}

std::pair<Path, Path> probe_pair(std::uint64_t seed, std::uint64_t index, int dim, double decay,
                                 double radius) {
  Draws draws(seed, index);
  static constexpr double kSteps[] = {0.01, 0.02, 0.05};
  const double step = kSteps[static_cast<int>(draws.uniform() * 3) % 3];
  const auto n = static_cast<Eigen::Index>(2 + draws.uniform() * 1998);
  Path xi = scaled_to(random_walk(draws, dim, decay, n, step), radius * draws.uniform());
  Eigen::MatrixXd other = xi.values();
  switch (index % 4) {
    case 0:
      other = scaled_to(random_walk(draws, dim, decay, n, step), radius * draws.uniform()).values();
      break;
    case 1:
      other.col(n - 1) += radius * draws.uniform() * draws.normal(dim);
      break;
    case 2: {
      // e^{-r theta} u has unit weighted magnitude at every grid point.
      const Eigen::VectorXd u = draws.normal(dim).normalized() * radius * draws.uniform();
      for (Eigen::Index k = 0; k < n; ++k)
        other.col(k) += std::exp(decay * step * static_cast<double>(n - 1 - k)) * u;
      break;
    }
    default:
      other += 1e-3 * radius * random_walk(draws, dim, decay, n, step).values();
  }
  Path eta(other, step, decay);
  const double biggest = std::max(norm_r(xi.view()), norm_r(eta.view()));
  if (biggest > radius) {
    xi = scaled(xi, radius / biggest);
    eta = scaled(eta, radius / biggest);
  }
  return {std::move(xi), std::move(eta)};
}

}  // namespace detail

LipschitzProbe probe_G_lipschitz(const Model& model, const ProbeSettings& settings) {
  if (settings.n_probes < 2) throw std::invalid_argument("probe_G_lipschitz: n_probes >= 2");
  LipschitzProbe out;
  out.n_probes = settings.n_probes;
  out.radius = settings.radius;
  for (int i = 0; i < settings.n_probes; ++i) {
    const auto [xi, eta] = detail::probe_pair(settings.seed, static_cast<std::uint64_t>(i),
                                              model.dim(), model.decay(), settings.radius);
    const double dist = norm_r_diff(xi.view(), eta.view());
    if (!(dist > 0)) continue;
    const double ratio = (model.G(xi.view()) - model.G(eta.view())).norm() / dist;
    out.alpha_hat = std::max(out.alpha_hat, ratio);
  }
  if (const auto& p = model.spec().preset)
    out.analytic_bound = p->gamma[0] * std::sqrt(delta_r(model.mu0(), model.decay()));
  return out;
}

A1A2Probe probe_A1_A2(const Model& model, const ProbeSettings& settings) {
  if (settings.n_probes < 2) throw std::invalid_argument("probe_A1_A2: n_probes >= 2");
  A1A2Probe out;
  out.n_probes = settings.n_probes;
  out.radius = settings.radius;
  auto record_sigma = [&](const dsl::SmallVector& s) {
    const double smallest = s.cwiseAbs().minCoeff();
    out.sigma_sup = std::max(out.sigma_sup, s.cwiseAbs().maxCoeff());
    if (!(smallest > 0) || !std::isfinite(1 / smallest)) {
      ++out.singular_count;
      out.sigma_inv_sup = std::numeric_limits<double>::infinity();
    } else {
      out.sigma_inv_sup = std::max(out.sigma_inv_sup, 1 / smallest);
    }
  };
  for (int i = 0; i < settings.n_probes; ++i) {
    const auto [xi, eta] = detail::probe_pair(settings.seed + 1, static_cast<std::uint64_t>(i),
                                              model.dim(), model.decay(), settings.radius);
    const double dist = norm_r_diff(xi.view(), eta.view());
    const Coefficients cx = model.coefficients(xi.view());
    const Coefficients cy = model.coefficients(eta.view());
    record_sigma(cx.sigma);
    record_sigma(cy.sigma);
    if (!(dist > 0)) continue;
    const dsl::SmallVector lhs = xi.head() - eta.head() + cy.G - cx.G;
    const double inner = std::max(0.0, lhs.dot(cx.b - cy.b));
    out.L0_hat = std::max(out.L0_hat, (inner + hs_sq_diff(cx.sigma, cy.sigma)) / (dist * dist));
  }
  return out;
}

MomentProbe probe_moment_conditions(const Model& model, const LyapunovConstants& c,
                                    const ProbeSettings& settings) {
  MomentProbe out;
  out.n_probes = settings.n_probes;
  for (int i = 0; i < settings.n_probes; ++i) {
    const Path xi = detail::probe_path(settings.seed + 2, static_cast<std::uint64_t>(i),
                                       model.dim(), model.decay(), settings.radius);
    const Coefficients co = model.coefficients(xi.view());
    const double head_sq = xi.head().squaredNorm();
    const double memory = measure_integral_sq(xi.view(), model.mu0());
    const double sigma_hs = co.sigma.squaredNorm();
    const dsl::SmallVector centered = xi.head() - co.G;
    const double lhs1 = 2 * centered.dot(co.b) + sigma_hs;
    const double rhs1 = c.c0 - c.lambda1 * head_sq + c.lambda2 * memory;
    const double rhs11 = c.c0 * (1 + head_sq + memory);
    out.r1_violation = std::max(out.r1_violation, lhs1 - rhs1);
    out.r11_violation = std::max(out.r11_violation, sigma_hs - rhs11);
    if (i == 0) {
      out.r1_violation = lhs1 - rhs1;
      out.r11_violation = sigma_hs - rhs11;
    }
  }
  return out;
}

bool ConditionReport::all_pass() const {
  return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
}

ConditionReport check_conditions(const Model& model, const ProbeSettings& settings) {
  ConditionReport rep;
  const LipschitzProbe lip = probe_G_lipschitz(model, settings);
  rep.alpha_hat = lip.alpha_hat;
  rep.alpha_analytic = lip.analytic_bound;
  const A1A2Probe a12 = probe_A1_A2(model, settings);
  ProbeSettings doubled = settings;
  doubled.n_probes *= 2;
  const A1A2Probe a12_refined = probe_A1_A2(model, doubled);
  rep.L0_hat = a12.L0_hat;
  rep.L0_hat_refined = a12_refined.L0_hat;
  rep.sigma_sup = a12.sigma_sup;
  rep.sigma_inv_sup = a12.sigma_inv_sup;
  rep.sigma_singular = a12.singular_count;
  rep.G_at_zero =
      model.G(Path::constant(Eigen::VectorXd::Zero(model.dim()), 0.01, model.decay()).view()).norm();
  rep.delta_r = delta_r(model.mu0(), model.decay());
  rep.mu0_mass = model.mu0().mass();

  auto add = [&](std::string claim, bool pass, std::string detail) {
    rep.verdicts.push_back({std::move(claim), pass, std::move(detail)});
  };
  add("G(0) = 0", rep.G_at_zero <= 1e-12, "|G(0)| = " + literal(rep.G_at_zero));
  add("A0: G contraction alpha < 1", rep.alpha_hat < 1,
      "probed alpha = " + literal(rep.alpha_hat) + " over " + std::to_string(settings.n_probes) +
          " pairs within radius " + literal(settings.radius));
  add("A1: finite L0", std::isfinite(rep.L0_hat) && std::isfinite(rep.L0_hat_refined),
      "L0 = " + literal(rep.L0_hat) + " (" + literal(rep.L0_hat_refined) + " with doubled probes)");
  add("A2: sigma invertible and bounded",
      rep.sigma_singular == 0 && std::isfinite(rep.sigma_sup) && std::isfinite(rep.sigma_inv_sup),
      "sup|sigma| = " + literal(rep.sigma_sup) + ", sup|sigma^-1| = " + literal(rep.sigma_inv_sup));
  add("delta_r(mu0) finite", std::isfinite(rep.delta_r), "delta_r = " + literal(rep.delta_r));

  if (model.spec().lyapunov) {
    const LyapunovConstants& c = *model.spec().lyapunov;
    rep.lyapunov = c;
    const double load = c.alpha1 + c.alpha2 * rep.delta_r;
    rep.beta_margin = 1 - load;
    const bool cond_i = *rep.beta_margin > 0;
    add("Lyapunov (i): alpha1 + alpha2 delta_r < 1", cond_i, "margin = " + literal(*rep.beta_margin));
    if (cond_i) {
      rep.beta = beta_const(c.alpha1, c.alpha2, rep.delta_r).beta;
      rep.gamma_rate = c.lambda1 - 2 * model.decay() * *rep.beta - c.lambda2 * rep.delta_r;
      add("Lyapunov (ii): gamma > 0", *rep.gamma_rate > 0, "gamma = " + literal(*rep.gamma_rate));
    }
    ProbeSettings wide = settings;
    wide.radius = 4 * settings.radius;
    rep.moment_probe = probe_moment_conditions(model, c, wide);
    add("Lyapunov (ii): drift inequality on probes", rep.moment_probe->r1_violation <= 1e-9,
        "max violation = " + literal(rep.moment_probe->r1_violation));
    add("Lyapunov (ii): sigma growth bound on probes", rep.moment_probe->r11_violation <= 1e-9,
        "max violation = " + literal(rep.moment_probe->r11_violation));
  }
  if (const auto& p = model.spec().preset) {
    rep.d4 = check_d4(*p, model.decay());
    add("d4 first: gamma1^2 < r0 (r0 - 2r)", rep.d4->pass1, "slack = " + literal(rep.d4->slack1()));
    add("d4 second", rep.d4->pass2, "slack = " + literal(rep.d4->slack2()));
  }
  return rep;
}

}  // namespace neutral
