#include "neutral/path_space.hpp"
#include "neutral/transport.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace {

namespace fs = std::filesystem;

struct Invocation {
  int code;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("neutral_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Invocation run(const std::string& args) {
    const fs::path log = dir_ / "stdout.txt";
    const std::string cmd = std::string(NEUTRAL_ERGO_BIN) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
  }

  std::string write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return (dir_ / name).string();
  }

  static std::string config(const std::string& name) { return std::string(NEUTRAL_CONFIG_DIR) + "/" + name; }

  fs::path dir_;
};

TEST_F(Cli, CheckCanonicalPasses) {
  const Invocation r = run("check " + config("example1_canonical.json"));
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("alpha_hat"), std::string::npos);
  EXPECT_NE(r.out.find("overall"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST_F(Cli, CheckViolatedModelExitsThree) {
  const Invocation r = run("check " + config("example1_d4_violated.json"));
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}

TEST_F(Cli, InputErrorsExitTwo) {
  const std::string bad = write("bad.json", "{\"schema_version\": 1, \"r\": }");
  Invocation r = run("check " + bad);
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("byte"), std::string::npos) << r.out;

  r = run("experiment nonsense " + config("experiment_canonical.json"));
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("unknown experiment"), std::string::npos);

  r = run("simulate " + write("run.json", R"({"schema_version": 1, "model": "nowhere.json"})"));
  EXPECT_EQ(r.code, 2) << r.out;

  r = run("check " + write("dsl.json", R"({"schema_version": 1, "r": 0.05, "G": "0 * x0", "b": "x0 +",
                                          "sigma": "1", "measures": [{"rate": 1}]})"));
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("position"), std::string::npos) << r.out;

  r = run("simulate");
  EXPECT_EQ(r.code, 2) << r.out;
}

TEST_F(Cli, FixedPointFailureExitsFour) {
  const std::string cfg = write("run.json", R"({"schema_version": 1,
      "model": {"r": 0.05, "G": "0.9 * x0", "b": "0 * x0", "sigma": "1", "measures": [{"rate": 1}]},
      "sim": {"horizon": 0.1, "fp_max_iter": 2}, "n_paths": 2})");
  const Invocation r = run("simulate " + cfg + " --out " + (dir_ / "o").string());
  EXPECT_EQ(r.code, 4) << r.out;
}

TEST_F(Cli, SimulateIsReproducibleAcrossRunsAndThreads) {
  const std::string cfg = config("run_canonical.json");
  ASSERT_EQ(run("simulate " + cfg + " --threads 1 --out " + (dir_ / "a").string()).code, 0);
  ASSERT_EQ(run("simulate " + cfg + " --threads 1 --out " + (dir_ / "b").string()).code, 0);
  ASSERT_EQ(run("simulate " + cfg + " --threads 3 --out " + (dir_ / "c").string()).code, 0);
  for (const char* f : {"simulate_checkpoints.csv", "simulate_PtV.csv", "simulate_samples.json", "simulate.json"}) {
    const std::string a = slurp(dir_ / "a" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(dir_ / "b" / f)) << f;
    EXPECT_EQ(a, slurp(dir_ / "c" / f)) << f;
  }
  const auto meta = nlohmann::json::parse(slurp(dir_ / "a" / "simulate.meta.json"));
  EXPECT_TRUE(meta.contains("timestamp"));
  // A different seed changes the data.
  ASSERT_EQ(run("simulate " + cfg + " --seed 99 --out " + (dir_ / "d").string()).code, 0);
  EXPECT_NE(slurp(dir_ / "a" / "simulate_PtV.csv"), slurp(dir_ / "d" / "simulate_PtV.csv"));
}

TEST_F(Cli, CoupleWritesPairSeries) {
  const Invocation r = run("couple " + config("run_canonical.json") + " --out " + (dir_ / "o").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string mean = slurp(dir_ / "o" / "couple_mean.csv");
  EXPECT_EQ(mean.substr(0, mean.find('\n')), "t,head_dist,norm_r_diff,rho_r,rho_r_delta,R,tau_fraction");
  EXPECT_EQ(std::count(mean.begin(), mean.end(), '\n'), 5);
}

TEST_F(Cli, WassersteinMatchesBruteForce) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  std::vector<neutral::Path> a, b;
  nlohmann::json ja = {{"schema_version", 1}, {"kind", "segment_samples"}, {"dim", 1}, {"step", 0.5}, {"decay", 0.05}};
  nlohmann::json jb = ja;
  for (int i = 0; i < 4; ++i) {
    Eigen::MatrixXd va(1, 3), vb(1, 3);
    for (int k = 0; k < 3; ++k) {
      va(0, k) = 0.3 * nd(gen);
      vb(0, k) = 0.3 * nd(gen) + 0.2;
      ja["samples"][i][k] = {va(0, k)};
      jb["samples"][i][k] = {vb(0, k)};
    }
    a.emplace_back(va, 0.5, 0.05);
    b.emplace_back(vb, 0.5, 0.05);
  }
  const std::string fa = write("a.json", ja.dump()), fb = write("b.json", jb.dump());
  const Eigen::MatrixXd c = neutral::cost_matrix(a, b, {neutral::Metric::Rho, 1});
  std::vector<int> perm{0, 1, 2, 3};
  double best = 1e300;
  do {
    double s = 0;
    for (int i = 0; i < 4; ++i) s += c(i, perm[static_cast<std::size_t>(i)]);
    best = std::min(best, s / 4);
  } while (std::next_permutation(perm.begin(), perm.end()));

  const Invocation r = run("wasserstein " + fa + " " + fb + " --json " + (dir_ / "w.json").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NEAR(std::stod(r.out), best, 1e-12);
  const auto j = nlohmann::json::parse(slurp(dir_ / "w.json"));
  EXPECT_EQ(j["exact"], true);
  EXPECT_EQ(j["n"], 4);

  EXPECT_EQ(run("wasserstein " + fa + " " + fb + " --metric nope").code, 2);
  jb["samples"].erase(0);
  EXPECT_EQ(run("wasserstein " + fa + " " + write("b3.json", jb.dump())).code, 2);
}

}  // namespace
