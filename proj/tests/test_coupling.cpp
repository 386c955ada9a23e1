#include "neutral/coupling.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

namespace neutral {
namespace {

Path constant(double c, double step = 0.01, double decay = 0.05) {
  return Path::constant(Eigen::VectorXd::Constant(1, c), step, decay);
}

SimConfig config(double horizon, std::uint32_t stream = 0) {
  SimConfig c;
  c.step = 0.01;
  c.horizon = horizon;
  c.seed = 77;
  c.stream = stream;
  c.checkpoints = {0, horizon / 2, horizon};
  return c;
}

TEST(Coupling, SynchronousFromEqualStartsStaysEqual) {
  const Model m(ModelSpec::canonical());
  const PairRun run = run_pair(m, constant(1), constant(1), Synchronous{}, config(2));
  EXPECT_EQ(run.pair.x.path().values(), run.pair.y.path().values());
  for (const auto& c : run.checkpoints) EXPECT_EQ(c.norm_diff, 0.0);
}

TEST(Coupling, XMarginalIsTheUncoupledSolution) {
  const Model m(ModelSpec::canonical());
  const SimConfig cfg = config(2, 5);
  const Trajectory alone = simulate(m, constant(1), cfg);
  for (const CouplingKind& kind : {CouplingKind{Independent{}}, CouplingKind{Synchronous{}},
                                   CouplingKind{GirsanovDrift{4, 0.25}}}) {
    const PairRun run = run_pair(m, constant(1), constant(0.9), kind, cfg);
    EXPECT_EQ(run.pair.x.path().values(), alone.path().values());
  }
}

TEST(Coupling, IndependentUsesThePartnerStream) {
  const Model m(ModelSpec::canonical());
  SimConfig cfg = config(1, 3);
  const PairRun run = run_pair(m, constant(1), constant(-1), Independent{}, cfg);
  SimConfig partner = cfg;
  partner.stream = partner_stream(cfg.stream);
  const Trajectory y = simulate(m, constant(-1), partner);
  EXPECT_EQ(run.pair.y.path().values(), y.path().values());
}

TEST(Coupling, ZeroLambdaIsSynchronous) {
  const Model m(ModelSpec::canonical());
  const SimConfig cfg = config(2, 1);
  const PairRun sync = run_pair(m, constant(1), constant(0.9), Synchronous{}, cfg);
  const PairRun g0 = run_pair(m, constant(1), constant(0.9), GirsanovDrift{0, 0.25}, cfg);
  EXPECT_EQ(sync.pair.y.path().values(), g0.pair.y.path().values());
  EXPECT_EQ(g0.pair.log_R, 0.0);
  EXPECT_FALSE(g0.pair.tau.has_value());
}

// log R = -int h dW - 1/2 int |h|^2 dt with h = lambda (Lambda^X - Lambda^Y) / sigma(Y),
// accumulated here from the pair's own state before each step.
TEST(Coupling, GirsanovDensityRecursion) {
  const Model m(ModelSpec::canonical());
  const GirsanovDrift kind{3, 0.01};
  CoupledPair pair(m, constant(1), constant(0.9), kind);
  const RandomStream rng(1, 2);
  double log_R = 0, h_sq = 0;
  for (std::uint64_t k = 0; k < 300; ++k) {
    const Eigen::VectorXd dw = rng.brownian_increment(k, 1, 0.01);
    if (!pair.tau) {
      const double sigma_y = m.coefficients(pair.y.segment()).sigma(0);
      const double h = kind.lambda * (pair.x.lambda()(0) - pair.y.lambda()(0)) / sigma_y;
      log_R += -h * dw(0) - 0.5 * h * h * 0.01;
      h_sq += h * h * 0.01;
    }
    couple_step(pair, m, kind, dw, dw);
  }
  EXPECT_NEAR(pair.log_R, log_R, 1e-12);
  EXPECT_NEAR(pair.h_sq_integral, h_sq, 1e-12);
  EXPECT_NEAR(pair.threshold, 0.01 / 0.01, 1e-12);
}

TEST(Coupling, DriftStopsAtTheBudget) {
  const Model m(ModelSpec::canonical());
  const GirsanovDrift kind{50, 0.05};
  CoupledPair pair(m, constant(1), constant(0.5), kind);
  const RandomStream rng(3, 0);
  double frozen_log_R = 0, frozen_h = 0;
  for (std::uint64_t k = 0; k < 500; ++k) {
    const bool was_active = pair.drift_active();
    couple_step(pair, m, kind, rng.brownian_increment(k, 1, 0.01), Eigen::VectorXd::Zero(1));
    if (was_active && pair.tau) {
      EXPECT_GE(pair.h_sq_integral, pair.threshold);
      frozen_log_R = pair.log_R;
      frozen_h = pair.h_sq_integral;
    }
  }
  ASSERT_TRUE(pair.tau.has_value());
  EXPECT_EQ(pair.log_R, frozen_log_R);
  EXPECT_EQ(pair.h_sq_integral, frozen_h);
}

// Without memory in G the head is Lambda, so the drift acts on it directly.
TEST(Coupling, DriftPullsTheSecondSolutionIn) {
  ModelSpec s;
  s.b = "-1 * x0";
  s.measures = {MemoryMeasure{1, 1}};
  const Model m(s);
  SimConfig cfg = config(4);
  const PairRun sync = run_pair(m, constant(1), constant(0.9), Synchronous{}, cfg);
  const PairRun pulled = run_pair(m, constant(1), constant(0.9), GirsanovDrift{8, 1e-300}, cfg);
  EXPECT_LT(pulled.checkpoints.back().head_dist, 0.1 * sync.checkpoints.back().head_dist);
}

TEST(Coupling, DensityHasMeanOne) {
  const Model m(ModelSpec::canonical());
  std::vector<double> R;
  for (std::uint32_t i = 0; i < 400; ++i) {
    const PairRun run = run_pair(m, constant(1), constant(0.9), GirsanovDrift{2, 0.25}, config(2, i));
    R.push_back(std::exp(run.pair.log_R));
  }
  const MomentPoint p = mean_stderr(2, R);
  EXPECT_NEAR(p.mean, 1.0, 4 * p.stderr_);
}

TEST(Coupling, Validation) {
  EXPECT_THROW(validate(GirsanovDrift{-1, 0.25}), std::invalid_argument);
  EXPECT_THROW(validate(GirsanovDrift{1, 0}), std::invalid_argument);
  EXPECT_THROW(validate(GirsanovDrift{1, 1}), std::invalid_argument);
  EXPECT_NO_THROW(validate(GirsanovDrift{0, 0.5}));
  const Model m(ModelSpec::canonical());
  EXPECT_THROW(run_pair(m, constant(1), constant(1), Synchronous{}, config(1), 0), std::invalid_argument);
  EXPECT_THROW(CoupledPair(m, constant(1), constant(1, 0.02), Synchronous{}), AlignmentError);
}

TEST(Coupling, SingularSigmaIsAnA2Violation) {
  ModelSpec s;
  s.measures = {MemoryMeasure{1, 1}};
  s.sigma = "x0";
  const Model m(s);
  CoupledPair pair(m, constant(1), constant(0), GirsanovDrift{1, 0.5});
  EXPECT_THROW(couple_step(pair, m, GirsanovDrift{1, 0.5}, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)),
               A2ViolationError);
}

TEST(Glue, DensityOneKeepsEveryPair) {
  const std::vector<double> R(50, 1.0);
  for (const auto& g : glue_pool(R, 1, 0)) {
    EXPECT_TRUE(g.stuck);
    EXPECT_EQ(g.x, g.y);
  }
}

TEST(Glue, ResamplesOnlyFromMembersAboveOne) {
  std::vector<double> R;
  for (int i = 0; i < 1000; ++i) R.push_back(i % 4 == 0 ? 3.0 : (i % 4 == 1 ? 2.0 : 0.0));
  std::map<std::size_t, int> counts;
  int unstuck = 0;
  const auto pairs = glue_pool(R, 5, 1);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const GluedPair& g = pairs[i];
    EXPECT_EQ(g.x, i);
    if (R[g.x] >= 1) {
      EXPECT_TRUE(g.stuck);
      continue;
    }
    EXPECT_FALSE(g.stuck);  // R = 0 never keeps its own partner
    EXPECT_GT(R[g.y], 1.0);
    ++unstuck;
    ++counts[g.y % 4];
  }
  EXPECT_EQ(unstuck, 500);
  // Weights (R - 1)^+ are 2 and 1.
  const double share = static_cast<double>(counts[0]) / unstuck;
  EXPECT_NEAR(share, 2.0 / 3.0, 4 * std::sqrt(2.0 / 9.0 / unstuck));
}

TEST(Glue, KeepProbabilityIsMinOneR) {
  std::vector<double> R(20000, 0.3);
  R[0] = 20000;  // absorbs the unglued mass
  int stuck = 0;
  const auto pairs = glue_pool(R, 2, 2);
  for (std::size_t i = 1; i < pairs.size(); ++i) stuck += pairs[i].stuck;
  const double n = static_cast<double>(pairs.size() - 1);
  EXPECT_NEAR(stuck / n, 0.3, 4 * std::sqrt(0.21 / n));
}

TEST(Glue, DegeneratePool) {
  const std::vector<double> R{0.0, 0.5};
  EXPECT_THROW(glue_pool(R, 1, 0), DegeneratePoolError);
  EXPECT_THROW(glue_pool(std::vector<double>{1.0}, 1, 0), std::invalid_argument);
  EXPECT_THROW(glue_pool(std::vector<double>{1.0, -1.0}, 1, 0), std::invalid_argument);
}

TEST(Glue, PiSampleMarginals) {
  const Model m(ModelSpec::canonical());
  SimConfig cfg = config(1);
  const PiSample s = sample_Pi(m, constant(1), constant(0.9), GirsanovDrift{2, 0.25}, cfg, 64);
  ASSERT_EQ(s.x.size(), 64u);
  EXPECT_DOUBLE_EQ(s.t, 1.0);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_EQ(s.pairs[i].x, i);
    // X pool member i is the plain solution on stream i.
    SimConfig ci = cfg;
    ci.stream = static_cast<std::uint32_t>(i);
    ci.checkpoints = {};
    if (i < 3) {
      EXPECT_EQ(s.x[i].values(), simulate(m, constant(1), ci).path().values());
    }
  }
  EXPECT_GE(s.stuck_fraction(), 0.0);
  EXPECT_LE(s.stuck_fraction(), 1.0);
}

TEST(Smallness, TSmallFormula) {
  // Reference values computed independently.
  EXPECT_NEAR(t_small(2.0, 0.125, 0.05, 0.1), 85.56573733469978, 1e-9);
  EXPECT_NEAR(t_small(1, 0.5, 1, 0.5), 4.712381072014442, 1e-12);
  EXPECT_THROW(t_small(1, 0.5, 1, 1.0), std::invalid_argument);
  EXPECT_THROW(t_small(0, 0.5, 1, 0.5), std::invalid_argument);
}

TEST(Smallness, Wilson) {
  const auto a = wilson95(5, 10);
  EXPECT_NEAR(a.low, 0.236593090512564, 1e-12);
  EXPECT_NEAR(a.high, 0.7634069094874361, 1e-12);
  const auto b = wilson95(0, 128);
  EXPECT_EQ(b.low, 0.0);
  EXPECT_NEAR(b.high, 0.029136956273508416, 1e-12);
  const auto c = wilson95(37, 200);
  EXPECT_NEAR(c.low, 0.13730192800616042, 1e-12);
  EXPECT_NEAR(c.high, 0.2445706276115175, 1e-12);
  EXPECT_EQ(wilson95(10, 10).high, 1.0);
  EXPECT_THROW(wilson95(3, 2), std::invalid_argument);
}

TEST(Smallness, FastForgettingModelIsSmall) {
  ModelSpec s;
  s.decay = 1;
  s.b = "-5 * x0";
  s.sigma = "0.01";
  s.measures = {MemoryMeasure{3, 1}};
  const Model m(s);
  SimConfig base;
  base.step = 0.01;
  base.seed = 4;
  const SmallnessResult r = smallness_estimate(m, 1.0, 1.0, 10, 4, 32, base);
  ASSERT_EQ(r.per_initial.size(), 4u);
  EXPECT_EQ(r.alpha_t_hat, 1.0);
  EXPECT_EQ(r.bound, 0.5);
  EXPECT_GT(r.alpha_ci.low, 0.8);
  EXPECT_DOUBLE_EQ(r.t, 10);
}

TEST(Smallness, ReportsTheWorstInitialCondition) {
  ModelSpec s;
  s.decay = 1;
  s.b = "-1 * x0";
  s.sigma = "0.5";
  s.measures = {MemoryMeasure{3, 1}};
  const Model m(s);
  SimConfig base;
  base.step = 0.01;
  base.seed = 4;
  const SmallnessResult r = smallness_estimate(m, 2.0, 1.0, 2, 5, 64, base);
  EXPECT_EQ(r.alpha_t_hat, *std::min_element(r.per_initial.begin(), r.per_initial.end()));
  EXPECT_DOUBLE_EQ(r.bound, 1 - r.alpha_t_hat * r.alpha_t_hat / 2);
}

}  // namespace
}  // namespace neutral
