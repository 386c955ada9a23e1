#pragma once

// Model and run configuration files.

#include "neutral/coupling.hpp"
#include "neutral/harness.hpp"
#include "neutral/model.hpp"

#include <json.hpp>

#include <optional>
#include <stdexcept>
#include <string>

namespace neutral::cli {

inline constexpr int kSchemaVersion = 1;

/// Malformed or schema-violating input; the message carries a position
/// (byte offset or JSON pointer).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

nlohmann::json read_json_file(const std::string& path);

ModelSpec parse_model(const nlohmann::json& j, const std::string& where = "");
ModelSpec load_model(const std::string& path);

struct RunConfig {
  ModelSpec model;
  ExperimentConfig exp;
  std::optional<double> T0;  // grid length of constant initial histories
  CouplingKind coupling = Synchronous{};
  double delta = 1;  // rho_{r,delta} in pair outputs
  std::string output = "out";
};

/// `experiment` selects the defaults filled in before the file is applied;
/// empty means the simulation defaults.
RunConfig parse_run_config(const nlohmann::json& j, const std::string& base_dir,
                           const std::string& experiment = "");
RunConfig load_run_config(const std::string& path, const std::string& experiment = "");

/// Constant history with value `c` in every component, spanning T0 when set.
Path initial_history(const Model& model, double c, const RunConfig& rc);

}  // namespace neutral::cli
