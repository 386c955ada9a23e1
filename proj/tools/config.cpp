#include "config.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

namespace neutral::cli {

namespace {

using nlohmann::json;

// Typed access to one JSON object, tracking its pointer for messages and
// rejecting keys nobody asked for.
class Object {
 public:
  Object(const json& j, std::string ptr, std::initializer_list<const char*> allowed)
      : j_(j), ptr_(std::move(ptr)) {
    if (!j.is_object()) fail(ptr_, "expected an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : j.items())
      if (!ok.count(key)) fail(ptr_ + "/" + key, "unknown key");
  }

  [[noreturn]] static void fail(const std::string& ptr, const std::string& msg) {
    throw ConfigError((ptr.empty() ? std::string("/") : ptr) + ": " + msg);
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) const { return j_.at(key); }
  std::string at(const char* key) const { return ptr_ + "/" + key; }

  double number(const char* key) const { return as_number(raw(key), at(key)); }
  double number(const char* key, double fallback) const { return has(key) ? number(key) : fallback; }

  long long integer(const char* key, long long lo, long long hi) const {
    const json& v = raw(key);
    if (!v.is_number_integer() && !v.is_number_unsigned()) fail(at(key), "expected an integer");
    const auto i = v.get<long long>();
    if (i < lo || i > hi)
      fail(at(key), "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return i;
  }

  std::uint64_t unsigned_integer(const char* key) const {
    const json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      fail(at(key), "expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }

  std::string string(const char* key) const {
    const json& v = raw(key);
    if (!v.is_string()) fail(at(key), "expected a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const char* key) const {
    const json& v = raw(key);
    if (!v.is_array()) fail(at(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_number(v[i], at(key) + "/" + std::to_string(i)));
    return out;
  }

  static double as_number(const json& v, const std::string& ptr) {
    if (!v.is_number()) fail(ptr, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(ptr, "expected a finite number");
    return d;
  }

 private:
  const json& j_;
  std::string ptr_;
};

void require_positive(const Object& o, const char* key, double v) {
  if (!(v > 0)) Object::fail(o.at(key), "must be positive");
}

void check_version(const Object& o) {
  if (!o.has("schema_version")) Object::fail(o.at("schema_version"), "required key missing");
  if (o.integer("schema_version", 0, 1 << 30) != kSchemaVersion)
    Object::fail(o.at("schema_version"), "unsupported version (expected " + std::to_string(kSchemaVersion) + ")");
}

LyapunovConstants parse_lyapunov(const Object& o) {
  LyapunovConstants c;
  for (const char* k : {"alpha1", "alpha2", "lambda1", "lambda2", "c0"})
    if (!o.has(k)) Object::fail(o.at(k), "required key missing");
  c.alpha1 = o.number("alpha1");
  c.alpha2 = o.number("alpha2");
  c.lambda1 = o.number("lambda1");
  c.lambda2 = o.number("lambda2");
  c.c0 = o.number("c0");
  return c;
}

}  // namespace

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

ModelSpec parse_model(const nlohmann::json& j, const std::string& where) {
  const Object o(j, where,
                 {"schema_version", "dim", "r", "G", "b", "sigma", "measures", "params", "preset", "lyapunov"});
  if (where.empty()) check_version(o);
  const int dim = o.has("dim") ? static_cast<int>(o.integer("dim", 1, 16)) : 1;
  if (!o.has("r")) Object::fail(o.at("r"), "required key missing");
  const double r = o.number("r");
  require_positive(o, "r", r);

  ModelSpec spec;
  if (o.has("preset")) {
    for (const char* k : {"G", "b", "sigma", "measures", "params"})
      if (o.has(k)) Object::fail(o.at(k), "not allowed together with a preset");
    const Object p(o.raw("preset"), o.at("preset"), {"name", "gamma", "r0"});
    if (!p.has("name") || p.string("name") != "example1")
      Object::fail(p.at("name"), "expected the preset name \"example1\"");
    Example1Params ep;
    if (p.has("gamma")) {
      const auto g = p.numbers("gamma");
      if (g.size() != 5) Object::fail(p.at("gamma"), "expected five numbers");
      std::copy(g.begin(), g.end(), ep.gamma.begin());
    } else {
      ep.gamma = {0.1, 0.1, 1, 0.5, 0.05};
    }
    ep.r0 = p.number("r0", 1);
    require_positive(p, "r0", ep.r0);
    spec = ModelSpec::example1(ep, r, dim);
  } else {
    for (const char* k : {"G", "b", "sigma", "measures"})
      if (!o.has(k)) Object::fail(o.at(k), "required key missing");
    spec.dim = dim;
    spec.decay = r;
    spec.G = o.string("G");
    spec.b = o.string("b");
    spec.sigma = o.string("sigma");
    const json& ms = o.raw("measures");
    if (!ms.is_array() || ms.empty()) Object::fail(o.at("measures"), "expected a nonempty array");
    for (std::size_t i = 0; i < ms.size(); ++i) {
      const Object m(ms[i], o.at("measures") + "/" + std::to_string(i), {"rate", "scale"});
      if (!m.has("rate")) Object::fail(m.at("rate"), "required key missing");
      MemoryMeasure mm;
      mm.rate = m.number("rate");
      mm.scale = m.number("scale", 1);
      require_positive(m, "rate", mm.rate);
      require_positive(m, "scale", mm.scale);
      spec.measures.push_back(mm);
    }
    if (o.has("params")) {
      const json& ps = o.raw("params");
      if (!ps.is_object()) Object::fail(o.at("params"), "expected an object");
      for (const auto& [k, v] : ps.items()) spec.params[k] = Object::as_number(v, o.at("params") + "/" + k);
    }
  }
  if (o.has("lyapunov"))
    spec.lyapunov = parse_lyapunov(Object(o.raw("lyapunov"), o.at("lyapunov"),
                                          {"alpha1", "alpha2", "lambda1", "lambda2", "c0"}));
  return spec;
}

ModelSpec load_model(const std::string& path) {
  const json j = read_json_file(path);
  try {
    return parse_model(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

RunConfig parse_run_config(const nlohmann::json& j, const std::string& base_dir,
                           const std::string& experiment) {
  const Object o(j, "", {"schema_version", "model", "sim", "n_paths", "threads", "initial", "coupling", "experiment",
                         "output"});
  check_version(o);
  RunConfig rc;
  rc.exp = experiment.empty() ? ExperimentConfig{} : ExperimentConfig::defaults(experiment);

  if (!o.has("model")) Object::fail(o.at("model"), "required key missing");
  if (o.raw("model").is_string()) {
    std::filesystem::path p = o.string("model");
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    rc.model = load_model(p.string());
  } else {
    rc.model = parse_model(o.raw("model"), o.at("model"));
  }

  SimConfig& sim = rc.exp.sim;
  if (o.has("sim")) {
    const Object s(o.raw("sim"), o.at("sim"),
                   {"step", "horizon", "T0", "seed", "stream", "checkpoints", "fp_tol", "fp_max_iter"});
    sim.step = s.number("step", sim.step);
    require_positive(s, "step", sim.step);
    sim.horizon = s.number("horizon", sim.horizon);
    require_positive(s, "horizon", sim.horizon);
    if (s.has("T0")) {
      rc.T0 = s.number("T0");
      if (!(*rc.T0 >= 0)) Object::fail(s.at("T0"), "must be nonnegative");
    }
    if (s.has("seed")) sim.seed = s.unsigned_integer("seed");
    if (s.has("stream")) sim.stream = static_cast<std::uint32_t>(s.integer("stream", 0, 0xffffffffLL));
    if (s.has("checkpoints")) sim.checkpoints = s.numbers("checkpoints");
    sim.fp_tol = s.number("fp_tol", sim.fp_tol);
    require_positive(s, "fp_tol", sim.fp_tol);
    if (s.has("fp_max_iter")) sim.fp_max_iter = static_cast<int>(s.integer("fp_max_iter", 1, 100000));
  }
  if (sim.checkpoints.empty()) sim.checkpoints = {sim.horizon};
  try {
    sim.checkpoint_steps();
  } catch (const std::invalid_argument& e) {
    Object::fail("/sim", e.what());
  }

  if (o.has("n_paths")) rc.exp.n_paths = static_cast<int>(o.integer("n_paths", 1, 1 << 24));
  if (o.has("threads")) rc.exp.threads = static_cast<int>(o.integer("threads", 1, 1024));
  if (o.has("initial")) {
    const Object in(o.raw("initial"), o.at("initial"), {"xi", "eta"});
    rc.exp.xi = in.number("xi", rc.exp.xi);
    rc.exp.eta = in.number("eta", rc.exp.eta);
  }
  if (o.has("coupling")) {
    const Object c(o.raw("coupling"), o.at("coupling"), {"kind", "lambda", "epsilon", "delta"});
    const std::string kind = c.has("kind") ? c.string("kind") : "synchronous";
    if (kind == "independent") {
      rc.coupling = Independent{};
    } else if (kind == "synchronous") {
      rc.coupling = Synchronous{};
    } else if (kind == "girsanov") {
      GirsanovDrift g;
      g.lambda = c.number("lambda", g.lambda);
      g.epsilon = c.number("epsilon", g.epsilon);
      if (!(g.lambda >= 0)) Object::fail(c.at("lambda"), "must be nonnegative");
      if (!(g.epsilon > 0 && g.epsilon < 1)) Object::fail(c.at("epsilon"), "must lie in (0, 1)");
      rc.coupling = g;
    } else {
      Object::fail(c.at("kind"), "expected independent, synchronous or girsanov");
    }
    rc.delta = c.number("delta", rc.delta);
    if (!(rc.delta > 0 && rc.delta <= 1)) Object::fail(c.at("delta"), "must lie in (0, 1]");
  }
  if (o.has("experiment")) {
    const Object e(o.raw("experiment"), o.at("experiment"),
                   {"distances", "lambdas", "epsilons", "pair_distance", "decay_window", "delta", "K_hat", "n_init",
                    "n_small_paths"});
    ExperimentConfig& x = rc.exp;
    if (e.has("distances")) x.distances = e.numbers("distances");
    if (e.has("lambdas")) x.lambdas = e.numbers("lambdas");
    if (e.has("epsilons")) x.epsilons = e.numbers("epsilons");
    for (std::size_t i = 0; i < x.lambdas.size(); ++i)
      if (!(x.lambdas[i] >= 0)) Object::fail(e.at("lambdas") + "/" + std::to_string(i), "must be nonnegative");
    for (std::size_t i = 0; i < x.epsilons.size(); ++i)
      if (!(x.epsilons[i] > 0 && x.epsilons[i] < 1))
        Object::fail(e.at("epsilons") + "/" + std::to_string(i), "must lie in (0, 1)");
    x.pair_distance = e.number("pair_distance", x.pair_distance);
    require_positive(e, "pair_distance", x.pair_distance);
    if (e.has("decay_window")) {
      const auto w = e.numbers("decay_window");
      if (w.size() != 2 || !(w[0] < w[1])) Object::fail(e.at("decay_window"), "expected [from, to] with from < to");
      x.decay_from = w[0];
      x.decay_to = w[1];
    }
    x.delta = e.number("delta", x.delta);
    if (!(x.delta > 0 && x.delta <= 1)) Object::fail(e.at("delta"), "must lie in (0, 1]");
    if (e.has("K_hat")) {
      x.K_hat = e.number("K_hat");
      require_positive(e, "K_hat", *x.K_hat);
    }
    if (e.has("n_init")) x.n_init = static_cast<int>(e.integer("n_init", 1, 1 << 20));
    if (e.has("n_small_paths")) x.n_small_paths = static_cast<int>(e.integer("n_small_paths", 1, 1 << 24));
  }
  if (o.has("output")) rc.output = o.string("output");
  return rc;
}

RunConfig load_run_config(const std::string& path, const std::string& experiment) {
  const json j = read_json_file(path);
  try {
    return parse_run_config(j, std::filesystem::path(path).parent_path().string(), experiment);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    // Nested model files already carry their own path.
    if (msg.rfind(path, 0) == 0) throw;
    throw ConfigError(path + ": " + msg);
  }
}

Path initial_history(const Model& model, double c, const RunConfig& rc) {
  const double h = rc.exp.sim.step;
  const Eigen::Index n = rc.T0 ? static_cast<Eigen::Index>(std::llround(*rc.T0 / h)) + 1 : 1;
  return Path::constant(Eigen::VectorXd::Constant(model.dim(), c), h, model.decay(), n);
}

}  // namespace neutral::cli
