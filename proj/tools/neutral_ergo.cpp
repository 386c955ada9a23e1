// neutral_ergo: condition checks, simulation, couplings, transport and
// experiments for neutral SDEs with exponentially fading memory.
//
// Exit codes: 0 pass, 2 input error, 3 hypothesis or verdict failure,
// 4 numeric failure.

#include "config.hpp"

#include "neutral/coupling.hpp"
#include "neutral/harness.hpp"
#include "neutral/model.hpp"
#include "neutral/parallel.hpp"
#include "neutral/solver.hpp"
#include "neutral/transport.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace neutral;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

enum Exit { kPass = 0, kInput = 2, kHypothesis = 3, kNumeric = 4 };

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> stream;
  std::optional<int> threads;
  std::string out;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Override sim.seed");
  cmd->add_option("--stream", o.stream, "Override sim.stream");
  cmd->add_option("--threads", o.threads, "Worker threads (default: NEUTRAL_ERGO_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out, "Output directory (overrides the config's output)");
}

cli::RunConfig load(const std::string& path, const Overrides& o, const std::string& experiment = "") {
  cli::RunConfig rc = cli::load_run_config(path, experiment);
  if (o.seed) rc.exp.sim.seed = *o.seed;
  if (o.stream) rc.exp.sim.stream = *o.stream;
  // Precedence: flag, then config, then environment / hardware.
  if (o.threads) {
    rc.exp.threads = *o.threads;
  } else if (!cli::read_json_file(path).contains("threads")) {
    rc.exp.threads = default_threads();
  }
  if (!o.out.empty()) rc.output = o.out;
  return rc;
}

std::ofstream open_out(const fs::path& p) {
  fs::create_directories(p.parent_path().empty() ? fs::path(".") : p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

// Run metadata lives apart from the data files so reruns compare equal.
void write_meta(const fs::path& dir, const std::string& command, const ordered_json& config) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  ordered_json meta{{"command", command}, {"timestamp", stamp}, {"config", config}};
  open_out(dir / (command + ".meta.json")) << meta.dump(2) << "\n";
}

ordered_json lyapunov_json(const LyapunovConstants& c) {
  return {{"alpha1", c.alpha1}, {"alpha2", c.alpha2}, {"lambda1", c.lambda1}, {"lambda2", c.lambda2}, {"c0", c.c0}};
}

ordered_json samples_json(const Model& model, double step, const std::vector<Path>& paths) {
  ordered_json samples = ordered_json::array();
  for (const Path& p : paths) {
    ordered_json pts = ordered_json::array();
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const auto v = p.point(k);
      pts.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    }
    samples.push_back(std::move(pts));
  }
  return {{"schema_version", cli::kSchemaVersion}, {"kind", "segment_samples"}, {"dim", model.dim()},
          {"step", step},  {"decay", model.decay()},   {"samples", samples}};
}

std::vector<Path> load_samples(const std::string& file) {
  const auto j = cli::read_json_file(file);
  auto fail = [&](const std::string& ptr, const std::string& msg) {
    throw cli::ConfigError(file + ": " + ptr + ": " + msg);
  };
  if (!j.is_object()) fail("/", "expected an object");
  for (const auto& [k, _] : j.items())
    if (k != "schema_version" && k != "kind" && k != "dim" && k != "step" && k != "decay" && k != "samples")
      fail("/" + k, "unknown key");
  for (const char* k : {"schema_version", "dim", "step", "decay", "samples"})
    if (!j.contains(k)) fail(std::string("/") + k, "required key missing");
  if (j["schema_version"] != cli::kSchemaVersion) fail("/schema_version", "unsupported version");
  if (!j["dim"].is_number_integer() || j["dim"].get<int>() < 1) fail("/dim", "expected a positive integer");
  if (!j["step"].is_number() || !(j["step"].get<double>() > 0)) fail("/step", "expected a positive number");
  if (!j["decay"].is_number() || !(j["decay"].get<double>() > 0)) fail("/decay", "expected a positive number");
  const int dim = j["dim"].get<int>();
  const double step = j["step"].get<double>();
  const double decay = j["decay"].get<double>();
  const auto& s = j["samples"];
  if (!s.is_array() || s.empty()) fail("/samples", "expected a nonempty array");
  std::vector<Path> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::string ptr = "/samples/" + std::to_string(i);
    if (!s[i].is_array() || s[i].empty()) fail(ptr, "expected a nonempty array of points");
    Eigen::MatrixXd values(dim, static_cast<Eigen::Index>(s[i].size()));
    for (std::size_t k = 0; k < s[i].size(); ++k) {
      const auto& pt = s[i][k];
      if (!pt.is_array() || static_cast<int>(pt.size()) != dim)
        fail(ptr + "/" + std::to_string(k), "expected " + std::to_string(dim) + " numbers");
      for (int c = 0; c < dim; ++c) {
        if (!pt[c].is_number()) fail(ptr + "/" + std::to_string(k) + "/" + std::to_string(c), "expected a number");
        values(c, static_cast<Eigen::Index>(k)) = pt[c].get<double>();
      }
    }
    out.emplace_back(values, step, decay);
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_check(const std::string& model_file, const std::string& json_out, int probes, std::uint64_t seed) {
  const ModelSpec spec = cli::load_model(model_file);
  ProbeSettings ps;
  ps.n_probes = probes;
  ps.seed = seed;
  const Model model(spec, ps);
  const ConditionReport rep = check_conditions(model, ps);

  auto line = [](const std::string& k, double v) { std::cout << "  " << k << " = " << format_double(v) << "\n"; };
  std::cout << "model " << model_hash(spec) << " (dim " << spec.dim << ", r " << format_double(spec.decay) << ")\n";
  line("alpha_hat", rep.alpha_hat);
  if (rep.alpha_analytic) line("alpha_analytic", *rep.alpha_analytic);
  line("L0_hat", rep.L0_hat);
  line("L0_hat_refined", rep.L0_hat_refined);
  line("sigma_sup", rep.sigma_sup);
  line("sigma_inv_sup", rep.sigma_inv_sup);
  line("G_at_zero", rep.G_at_zero);
  line("delta_r", rep.delta_r);
  line("mu0_mass", rep.mu0_mass);
  if (rep.beta) line("beta", *rep.beta);
  if (rep.beta_margin) line("beta_margin", *rep.beta_margin);
  if (rep.gamma_rate) line("gamma", *rep.gamma_rate);
  if (rep.d4) {
    line("d4_slack1", rep.d4->slack1());
    line("d4_slack2", rep.d4->slack2());
  }
  for (const auto& v : rep.verdicts)
    std::cout << (v.pass ? "PASS " : "FAIL ") << v.claim << (v.detail.empty() ? "" : "  [" + v.detail + "]") << "\n";
  const bool ok = rep.all_pass();
  std::cout << "overall: " << (ok ? "PASS" : "FAIL") << "\n";

  if (!json_out.empty()) {
    ordered_json j{{"model_hash", model_hash(spec)},
                   {"probes", probes},
                   {"alpha_hat", rep.alpha_hat},
                   {"L0_hat", rep.L0_hat},
                   {"L0_hat_refined", rep.L0_hat_refined},
                   {"sigma_sup", rep.sigma_sup},
                   {"sigma_inv_sup", rep.sigma_inv_sup},
                   {"sigma_singular", rep.sigma_singular},
                   {"G_at_zero", rep.G_at_zero},
                   {"delta_r", rep.delta_r},
                   {"mu0_mass", rep.mu0_mass}};
    if (rep.alpha_analytic) j["alpha_analytic"] = *rep.alpha_analytic;
    if (rep.lyapunov) j["lyapunov"] = lyapunov_json(*rep.lyapunov);
    if (rep.beta) j["beta"] = *rep.beta;
    if (rep.beta_margin) j["beta_margin"] = *rep.beta_margin;
    if (rep.gamma_rate) j["gamma"] = *rep.gamma_rate;
    if (rep.d4) j["d4"] = {{"pass1", rep.d4->pass1}, {"pass2", rep.d4->pass2},
                           {"slack1", rep.d4->slack1()}, {"slack2", rep.d4->slack2()}};
    j["verdicts"] = ordered_json::array();
    for (const auto& v : rep.verdicts) j["verdicts"].push_back({{"claim", v.claim}, {"pass", v.pass}, {"detail", v.detail}});
    j["all_pass"] = ok;
    open_out(json_out) << j.dump(2) << "\n";
  }
  return ok ? kPass : kHypothesis;
}

int cmd_simulate(const std::string& config_file, const Overrides& ov) {
  const cli::RunConfig rc = load(config_file, ov);
  const Model model(rc.model);
  const SimConfig& sim = rc.exp.sim;
  const Path xi = cli::initial_history(model, rc.exp.xi, rc);
  const auto n = static_cast<std::size_t>(rc.exp.n_paths);
  const std::size_t marks = sim.checkpoint_steps().size();

  std::vector<Trajectory> trajs;
  trajs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) trajs.emplace_back(model, xi);
  parallel_for(n, rc.exp.threads, [&](std::size_t i) {
    SimConfig c = sim;
    c.stream = sim.stream + static_cast<std::uint32_t>(i);
    trajs[i] = simulate(model, xi, c);
  });

  const fs::path dir = rc.output;
  {
    auto out = open_out(dir / "simulate_checkpoints.csv");
    out << "path,t";
    for (int c = 0; c < model.dim(); ++c) out << ",x" << c;
    out << ",norm_r,V\n";
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < marks; ++k) {
        const PathView seg = trajs[i].snapshot_segment(k);
        const double nr = norm_r(seg);
        out << i << "," << format_double(trajs[i].snapshots()[k].time);
        const auto head = seg.point(seg.size() - 1);
        for (int c = 0; c < model.dim(); ++c) out << "," << format_double(head(c));
        out << "," << format_double(nr) << "," << format_double(nr * nr) << "\n";
      }
  }
  std::vector<double> t_col, mean_col, se_col;
  {
    auto out = open_out(dir / "simulate_PtV.csv");
    out << "t,value,stderr\n";
    for (std::size_t k = 0; k < marks; ++k) {
      std::vector<double> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = lyapunov_V(trajs[i].snapshot_segment(k));
      const MomentPoint m = mean_stderr(sim.checkpoints[k], v);
      out << format_double(m.t) << "," << format_double(m.mean) << "," << format_double(m.stderr_) << "\n";
    }
  }
  std::vector<Path> finals;
  for (const auto& tr : trajs) finals.push_back(tr.path());
  open_out(dir / "simulate_samples.json") << samples_json(model, sim.step, finals).dump() << "\n";

  FixedPointStats fp;
  for (const auto& tr : trajs) {
    fp.solves += tr.fixed_point().solves;
    fp.iterations += tr.fixed_point().iterations;
    fp.max_ratio = std::max(fp.max_ratio, tr.fixed_point().max_ratio);
    fp.max_iterations = std::max(fp.max_iterations, tr.fixed_point().max_iterations);
  }
  ordered_json summary{{"model_hash", model_hash(rc.model)},
                       {"config", to_json(rc.exp)},
                       {"fixed_point", {{"solves", fp.solves},
                                        {"iterations", fp.iterations},
                                        {"max_ratio", fp.max_ratio},
                                        {"max_iterations", fp.max_iterations}}}};
  open_out(dir / "simulate.json") << summary.dump(2) << "\n";
  write_meta(dir, "simulate", to_json(rc.exp));
  std::cout << "simulated " << n << " paths to t = " << format_double(sim.horizon) << "; outputs in " << dir.string()
            << "\n";
  return kPass;
}

int cmd_couple(const std::string& config_file, const Overrides& ov) {
  const cli::RunConfig rc = load(config_file, ov);
  const Model model(rc.model);
  validate(rc.coupling);
  const SimConfig& sim = rc.exp.sim;
  const Path xi = cli::initial_history(model, rc.exp.xi, rc);
  const Path eta = cli::initial_history(model, rc.exp.eta, rc);
  const auto n = static_cast<std::size_t>(rc.exp.n_paths);
  std::vector<std::vector<PairCheckpoint>> runs(n);
  parallel_for(n, rc.exp.threads, [&](std::size_t i) {
    SimConfig c = sim;
    c.stream = sim.stream + static_cast<std::uint32_t>(i);
    runs[i] = run_pair(model, xi, eta, rc.coupling, c, rc.delta).checkpoints;
  });

  const fs::path dir = rc.output;
  auto out = open_out(dir / "couple_pairs.csv");
  out << "pair,t,head_dist,norm_r_diff,rho_r,rho_r_delta,log_R,tau_hit\n";
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& c : runs[i])
      out << i << "," << format_double(c.t) << "," << format_double(c.head_dist) << "," << format_double(c.norm_diff)
          << "," << format_double(c.rho_r) << "," << format_double(c.rho_r_delta) << "," << format_double(c.log_R)
          << "," << (c.tau_hit ? 1 : 0) << "\n";

  auto mean = open_out(dir / "couple_mean.csv");
  mean << "t,head_dist,norm_r_diff,rho_r,rho_r_delta,R,tau_fraction\n";
  for (std::size_t k = 0; k < runs.front().size(); ++k) {
    double s[6] = {0, 0, 0, 0, 0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      const auto& c = runs[i][k];
      s[0] += c.head_dist;
      s[1] += c.norm_diff;
      s[2] += c.rho_r;
      s[3] += c.rho_r_delta;
      s[4] += std::exp(c.log_R);
      s[5] += c.tau_hit ? 1 : 0;
    }
    mean << format_double(runs.front()[k].t);
    for (double v : s) mean << "," << format_double(v / static_cast<double>(n));
    mean << "\n";
  }
  write_meta(dir, "couple", to_json(rc.exp));
  std::cout << "coupled " << n << " pairs; outputs in " << dir.string() << "\n";
  return kPass;
}

int cmd_wasserstein(const std::string& a_file, const std::string& b_file, const std::string& metric_name,
                    double delta, double reg, int threads, const std::string& json_out) {
  const auto a = load_samples(a_file);
  const auto b = load_samples(b_file);
  if (a.size() != b.size())
    throw cli::ConfigError("sample files differ in size (" + std::to_string(a.size()) + " vs " +
                           std::to_string(b.size()) + ")");
  MetricSpec metric;
  if (metric_name == "rho") {
    metric.kind = Metric::Rho;
  } else if (metric_name == "rho_delta") {
    metric = {Metric::RhoDelta, delta};
  } else {
    metric.kind = Metric::RhoV;
  }
  const Eigen::MatrixXd cost = cost_matrix(a, b, metric, threads);
  const TransportPlan plan = reg > 0 ? solve_entropic(cost, reg) : solve_exact(cost);
  std::cout << format_double(plan.value) << "\n";
  if (!json_out.empty()) {
    ordered_json j{{"metric", metric_name}, {"n", a.size()}, {"value", plan.value}, {"exact", plan.exact}};
    if (metric.kind == Metric::RhoDelta) j["delta"] = delta;
    if (plan.exact) j["assignment"] = plan.assignment;
    else j["reg"] = plan.reg;
    open_out(json_out) << j.dump(2) << "\n";
  }
  return kPass;
}

int cmd_experiment(const std::string& name, const std::string& config_file, const Overrides& ov) {
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    throw cli::ConfigError("unknown experiment '" + name +
                           "' (expected lyapunov, lipschitz, smallset, contractivity or ergodicity)");
  const cli::RunConfig rc = load(config_file, ov, name);
  const Model model(rc.model);
  const ExperimentReport rep = run_experiment(name, model, rc.exp);
  const auto files = write_report(rep, rc.output);
  write_meta(rc.output, name, rep.config);
  for (const auto& v : rep.verdicts)
    std::cout << (v.pass ? "PASS " : "FAIL ") << v.claim << (v.detail.empty() ? "" : "  [" + v.detail + "]") << "\n";
  std::cout << "wrote " << files.size() << " files to " << rc.output << "\n";
  return rep.all_pass() ? kPass : kHypothesis;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ergodicity diagnostics for neutral SDEs with exponentially fading memory"};
  app.require_subcommand(1);

  std::string model_file, json_out, config_file, a_file, b_file, metric = "rho", name;
  int probes = 256;
  std::uint64_t probe_seed = 0x5eed;
  double delta = 1, reg = 0;
  std::optional<int> w_threads;
  Overrides ov;

  auto* check = app.add_subcommand("check", "Probe the model's hypotheses and print the constants");
  check->add_option("model", model_file, "Model JSON file")->required();
  check->add_option("--json", json_out, "Also write the report as JSON");
  check->add_option("--probes", probes, "Probe pairs per check")->check(CLI::Range(1, 1 << 20));
  check->add_option("--seed", probe_seed, "Probe seed");

  auto* sim = app.add_subcommand("simulate", "Simulate an ensemble and dump checkpoints and final segments");
  sim->add_option("config", config_file, "Run config JSON file")->required();
  add_overrides(sim, ov);

  auto* couple = app.add_subcommand("couple", "Run coupled pairs and dump pair time series");
  couple->add_option("config", config_file, "Run config JSON file")->required();
  add_overrides(couple, ov);

  auto* w = app.add_subcommand("wasserstein", "Empirical Wasserstein distance between two sample files");
  w->add_option("a", a_file, "First samples JSON")->required();
  w->add_option("b", b_file, "Second samples JSON")->required();
  w->add_option("--metric", metric, "rho | rho_delta | rho_v")
      ->check(CLI::IsMember({"rho", "rho_delta", "rho_v"}));
  w->add_option("--delta", delta, "delta of rho_delta")->check(CLI::Range(1e-300, 1.0));
  w->add_option("--reg", reg, "Entropic regularisation (0 = exact assignment)")->check(CLI::NonNegativeNumber);
  w->add_option("--threads", w_threads, "Worker threads")->check(CLI::PositiveNumber);
  w->add_option("--json", json_out, "Also write the result as JSON");

  auto* exp = app.add_subcommand("experiment", "Run a named experiment and write its report");
  exp->add_option("name", name, "lyapunov | lipschitz | smallset | contractivity | ergodicity")->required();
  exp->add_option("config", config_file, "Run config JSON file")->required();
  add_overrides(exp, ov);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kPass : kInput;
  }

  try {
    if (*check) return cmd_check(model_file, json_out, probes, probe_seed);
    if (*sim) return cmd_simulate(config_file, ov);
    if (*couple) return cmd_couple(config_file, ov);
    if (*w) return cmd_wasserstein(a_file, b_file, metric, delta, reg, w_threads.value_or(default_threads()), json_out);
    if (*exp) return cmd_experiment(name, config_file, ov);
  } catch (const HypothesisError& e) {
    std::cerr << "hypothesis failure: " << e.what() << "\n";
    return kHypothesis;
  } catch (const A2ViolationError& e) {
    std::cerr << "hypothesis failure: " << e.what() << "\n";
    return kHypothesis;
  } catch (const NonConvergenceError& e) {
    std::cerr << "numeric failure: " << e.what() << " (residual " << format_double(e.residual()) << ")\n";
    return kNumeric;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const SinkhornError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const DegeneratePoolError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const dsl::ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInput;
  } catch (const dsl::EvalError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInput;
  } catch (const std::logic_error& e) {  // invalid_argument, length_error, domain_error
    std::cerr << "input error: " << e.what() << "\n";
    return kInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  }
  return kInput;
}
