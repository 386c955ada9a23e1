#include "config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <functional>
#include <fstream>

namespace neutral::cli {
namespace {

using nlohmann::json;

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

json canonical_model() {
  return json::parse(R"j({"schema_version": 1, "dim": 1, "r": 0.05,
                         "preset": {"name": "example1", "gamma": [0.1, 0.1, 1, 0.5, 0.05], "r0": 1}})j");
}

TEST(ModelConfig, PresetMatchesBuiltIn) {
  const ModelSpec s = parse_model(canonical_model());
  const ModelSpec c = ModelSpec::canonical();
  EXPECT_EQ(s.G, c.G);
  EXPECT_EQ(s.b, c.b);
  EXPECT_EQ(s.sigma, c.sigma);
  EXPECT_EQ(s.decay, c.decay);
  EXPECT_EQ(s.params, c.params);
}

TEST(ModelConfig, ExplicitCoefficients) {
  const ModelSpec s = parse_model(json::parse(R"j({"schema_version": 1, "dim": 2, "r": 0.1,
      "G": "a * kmean(1)", "b": "-1 * x0", "sigma": "1", "measures": [{"rate": 1}, {"rate": 3, "scale": 2}],
      "params": {"a": 0.2},
      "lyapunov": {"alpha1": 0.1, "alpha2": 0.1, "lambda1": 1, "lambda2": 0.5, "c0": 1}})j"));
  EXPECT_EQ(s.dim, 2);
  ASSERT_EQ(s.measures.size(), 2u);
  EXPECT_EQ(s.measures[0].scale, 1);
  EXPECT_EQ(s.measures[1].scale, 2);
  EXPECT_EQ(s.params.at("a"), 0.2);
  ASSERT_TRUE(s.lyapunov.has_value());
  EXPECT_EQ(s.lyapunov->lambda2, 0.5);
  EXPECT_NO_THROW(Model{s});
}

TEST(ModelConfig, ErrorsCarryPointers) {
  struct Case {
    const char* patch;
    const char* expect;
  };
  for (const Case& c : {
           Case{R"j({"schema_version": 2})j", "/schema_version: unsupported version"},
           Case{R"j({"schema_version": 1.5})j", "/schema_version: expected an integer"},
           Case{R"j({"extra": 1})j", "/extra: unknown key"},
           Case{R"j({"r": -1})j", "/r: must be positive"},
           Case{R"j({"r": "x"})j", "/r: expected a number"},
           Case{R"j({"dim": 0})j", "/dim: must lie in [1, 16]"},
           Case{R"j({"preset": {"name": "other"}})j", "/preset/name: expected the preset name"},
           Case{R"j({"preset": {"name": "example1", "gamma": [1, 2]}})j", "/preset/gamma: expected five numbers"},
           Case{R"j({"preset": {"name": "example1", "gamma": [1, 2, 3, 4, "a"]}})j", "/preset/gamma/4: expected a number"},
           Case{R"j({"preset": {"name": "example1", "foo": 1}})j", "/preset/foo: unknown key"},
           Case{R"j({"G": "x0"})j", "/G: not allowed together with a preset"},
           Case{R"j({"lyapunov": {"alpha1": 1}})j", "/lyapunov/alpha2: required key missing"},
       }) {
    json j = canonical_model();
    j.merge_patch(json::parse(c.patch));
    const std::string msg = error_of([&] { parse_model(j); });
    EXPECT_NE(msg.find(c.expect), std::string::npos) << c.patch << " -> " << msg;
  }
  json j = canonical_model();
  j.erase("schema_version");
  EXPECT_NE(error_of([&] { parse_model(j); }).find("/schema_version: required key missing"), std::string::npos);
  j = canonical_model();
  j.erase("preset");
  EXPECT_NE(error_of([&] { parse_model(j); }).find("/G: required key missing"), std::string::npos);
  j = json::parse(R"j({"schema_version": 1, "r": 0.1, "G": "0 * x0", "b": "0 * x0", "sigma": "1",
                      "measures": [{"rate": 1, "scale": 0}]})j");
  EXPECT_NE(error_of([&] { parse_model(j); }).find("/measures/0/scale: must be positive"), std::string::npos);
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() / ("neutral_cfg_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::string write(const std::string& name, const std::string& text) {
    const auto p = dir_ / name;
    std::ofstream(p) << text;
    return p.string();
  }
  std::filesystem::path dir_;
};

TEST_F(TempDir, MalformedJsonReportsByteOffset) {
  const std::string p = write("bad.json", "{\"r\": 0.05,\n  \"dim\": }");
  const std::string msg = error_of([&] { read_json_file(p); });
  EXPECT_NE(msg.find("malformed JSON at byte 22"), std::string::npos) << msg;
  EXPECT_NE(error_of([&] { read_json_file((dir_ / "missing.json").string()); }).find("cannot open"),
            std::string::npos);
}

TEST_F(TempDir, RunConfigResolvesRelativeModel) {
  write("m.json", canonical_model().dump());
  const std::string p = write("run.json", R"j({"schema_version": 1, "model": "m.json",
      "sim": {"step": 0.02, "horizon": 2, "T0": 1, "seed": 7, "checkpoints": [0, 1, 2]},
      "n_paths": 10, "threads": 2, "initial": {"xi": 3},
      "coupling": {"kind": "girsanov", "lambda": 2, "epsilon": 0.3, "delta": 0.5},
      "output": "o"})j");
  const RunConfig rc = load_run_config(p);
  EXPECT_EQ(rc.model.G, ModelSpec::canonical().G);
  EXPECT_EQ(rc.exp.sim.step, 0.02);
  EXPECT_EQ(rc.exp.sim.seed, 7u);
  EXPECT_EQ(rc.exp.n_paths, 10);
  EXPECT_EQ(rc.exp.threads, 2);
  EXPECT_EQ(rc.exp.xi, 3);
  EXPECT_EQ(rc.exp.eta, -1);
  ASSERT_TRUE(std::holds_alternative<GirsanovDrift>(rc.coupling));
  EXPECT_EQ(std::get<GirsanovDrift>(rc.coupling).epsilon, 0.3);
  EXPECT_EQ(rc.delta, 0.5);
  EXPECT_EQ(rc.output, "o");
  const Model m(rc.model);
  const Path h = initial_history(m, 3, rc);
  EXPECT_EQ(h.size(), 51);
  EXPECT_EQ(h.view().head()(0), 3);
}

TEST_F(TempDir, RunConfigErrors) {
  write("m.json", canonical_model().dump());
  struct Case {
    const char* text;
    const char* expect;
  };
  for (const Case& c : {
           Case{R"j({"model": "m.json"})j", "/schema_version: required key missing"},
           Case{R"j({"schema_version": 1})j", "/model: required key missing"},
           Case{R"j({"schema_version": 1, "model": "m.json", "simm": {}})j", "/simm: unknown key"},
           Case{R"j({"schema_version": 1, "model": "m.json", "sim": {"stepp": 1}})j", "/sim/stepp: unknown key"},
           Case{R"j({"schema_version": 1, "model": "m.json", "sim": {"horizon": 1, "checkpoints": [2]}})j", "/sim:"},
           Case{R"j({"schema_version": 1, "model": "m.json", "coupling": {"kind": "magic"}})j", "/coupling/kind:"},
           Case{R"j({"schema_version": 1, "model": "m.json", "coupling": {"kind": "girsanov", "epsilon": 1}})j",
                "/coupling/epsilon: must lie in (0, 1)"},
           Case{R"j({"schema_version": 1, "model": "m.json", "experiment": {"lambdas": [1, -1]}})j",
                "/experiment/lambdas/1: must be nonnegative"},
           Case{R"j({"schema_version": 1, "model": "m.json", "experiment": {"decay_window": [3, 1]}})j",
                "/experiment/decay_window:"},
           Case{R"j({"schema_version": 1, "model": {"r": 0.05, "bogus": 1}})j", "/model/bogus: unknown key"},
           Case{R"j({"schema_version": 1, "model": "nowhere.json"})j", "cannot open"},
           Case{R"j({"schema_version": 1, "model": "m.json", "n_paths": 0})j", "/n_paths: must lie in"},
       }) {
    const std::string p = write("run.json", c.text);
    const std::string msg = error_of([&] { load_run_config(p); });
    EXPECT_NE(msg.find(c.expect), std::string::npos) << c.text << " -> " << msg;
    EXPECT_EQ(msg.rfind(p, 0), 0u) << msg;
  }
}

TEST_F(TempDir, ExperimentDefaultsAreOverlaid) {
  write("m.json", canonical_model().dump());
  const std::string p = write("run.json", R"j({"schema_version": 1, "model": "m.json",
      "experiment": {"lambdas": [1, 2], "K_hat": 3}})j");
  const RunConfig rc = load_run_config(p, "contractivity");
  EXPECT_EQ(rc.exp.sim.horizon, 10);
  EXPECT_EQ(rc.exp.lambdas, (std::vector<double>{1, 2}));
  EXPECT_EQ(*rc.exp.K_hat, 3);
  EXPECT_THROW(load_run_config(p, "unknown"), std::invalid_argument);
}

}  // namespace
}  // namespace neutral::cli
