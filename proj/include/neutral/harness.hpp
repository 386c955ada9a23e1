#pragma once

// Experiments that estimate the constants of the ergodicity statements from
// simulated ensembles, and the report they produce.

#include "neutral/coupling.hpp"
#include "neutral/model.hpp"
#include "neutral/solver.hpp"
#include "neutral/transport.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace neutral {

/// y(t) ~ C exp(-lambda t) (+ c_inf).
struct RateFit {
  bool with_floor = false;
  double C = 0;
  double lambda = 0;
  double c_inf = 0;
  double lambda_se = 0;
  double lambda_ci_low = 0;  // 95%
  double lambda_ci_high = 0;
  double residual = 0;  // l2 norm of y - fitted y
  double r_squared = 0;
  double t_min = 0;
  double t_max = 0;
  int n = 0;
  bool identifiable = true;

  std::string form() const { return with_floor ? "C*exp(-lambda*t)+c_inf" : "C*exp(-lambda*t)"; }
  bool lambda_positive() const { return identifiable && lambda_ci_low > 0; }
};

/// Log-linear least squares, or with a floor a search over c_inf around a
/// log-linear inner fit. `y_se` (optional) propagates Monte Carlo error into
/// lambda_se, which is the larger of the residual-based and propagated values.
RateFit fit_exponential(std::span<const double> t, std::span<const double> y, bool with_floor,
                        std::span<const double> y_se = {});

struct SeriesPoint {
  double t;
  double value;
  double stderr_;
};

struct Series {
  std::string name;
  std::vector<SeriesPoint> points;
};

struct FitEntry {
  std::string series;
  RateFit fit;
};

struct ExperimentReport {
  std::string experiment;
  nlohmann::ordered_json config;
  std::vector<Series> series;
  std::vector<FitEntry> fits;
  std::vector<std::pair<std::string, double>> scalars;
  std::vector<Verdict> verdicts;

  bool all_pass() const;
  const Series& find_series(std::string_view name) const;
  const RateFit& find_fit(std::string_view series) const;
  double scalar(std::string_view name) const;
};

struct ExperimentConfig {
  SimConfig sim;
  int n_paths = 256;
  int threads = 1;
  double xi = 1;   // constant initial segments (every component)
  double eta = -1;
  // lipschitz
  std::vector<double> distances{0.2, 0.1, 0.05};
  // contractivity
  std::vector<double> lambdas{0.5, 1, 2, 4, 8};
  std::vector<double> epsilons{0.25};  // delta = epsilon
  double pair_distance = 0.1;
  double decay_from = 2;
  double decay_to = 10;
  // smallset
  double delta = 0.5;
  std::optional<double> K_hat;
  int n_init = 8;
  int n_small_paths = 128;

  /// Defaults used by the named experiment.
  static ExperimentConfig defaults(std::string_view experiment);
};

nlohmann::ordered_json to_json(const ExperimentConfig& cfg);

/// Stable hash of the model's coefficients, parameters and measures.
std::string model_hash(const ModelSpec& spec);

Path constant_path(const Model& model, double value, double step);

ExperimentReport exp_lyapunov(const Model& model, const ExperimentConfig& cfg);
ExperimentReport exp_lipschitz(const Model& model, const ExperimentConfig& cfg);
ExperimentReport exp_contractivity(const Model& model, const ExperimentConfig& cfg);
ExperimentReport exp_ergodicity(const Model& model, const ExperimentConfig& cfg);
/// Uses cfg.K_hat when set, otherwise runs exp_lyapunov first.
ExperimentReport exp_smallset(const Model& model, const ExperimentConfig& cfg);

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"lyapunov", "lipschitz", "smallset", "contractivity",
                                              "ergodicity"};
  return names;
}

/// Throws std::invalid_argument for an unknown name.
ExperimentReport run_experiment(std::string_view name, const Model& model, const ExperimentConfig& cfg);

/// Largest violations of the two pathwise bounds relating ||X_t||_r to
/// sup e^{rs}|Lambda(s)| (positive means violated).
struct PathwiseCheck {
  int n_paths = 0;
  std::int64_t checks = 0;
  std::int64_t violations = 0;
  double worst_equal_start = -1;  // max lhs / rhs, equal initial segments
  double worst_single = -1;       // max lhs / rhs, single paths
};

PathwiseCheck check_pathwise_bounds(const Model& model, const Path& initial, const SimConfig& cfg,
                                    int n_paths, double alpha, int threads = 1);

nlohmann::ordered_json to_json(const ExperimentReport& report);

/// Writes <dir>/<experiment>.json and one <experiment>_<series>.csv per series.
/// Returns the written file paths.
std::vector<std::string> write_report(const ExperimentReport& report, const std::string& dir);

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace neutral
