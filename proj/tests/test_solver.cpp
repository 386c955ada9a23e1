#include "neutral/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace neutral {
namespace {

ModelSpec linear_spec(const std::string& G, const std::string& b, const std::string& sigma, int dim = 1) {
  ModelSpec s;
  s.dim = dim;
  s.decay = 0.05;
  s.G = G;
  s.b = b;
  s.sigma = sigma;
  s.measures = {MemoryMeasure{1, 1}};
  return s;
}

Path constant(int dim, double c, double step = 0.01) {
  return Path::constant(Eigen::VectorXd::Constant(dim, c), step, 0.05);
}

SimConfig config(double horizon, std::uint64_t seed = 1, std::uint32_t stream = 0) {
  SimConfig c;
  c.step = 0.01;
  c.horizon = horizon;
  c.seed = seed;
  c.stream = stream;
  return c;
}

TEST(Solver, BrownianMotionIsTheSumOfIncrements) {
  const Model m(linear_spec("0 * x0", "0 * x0", "1", 2));
  SimConfig cfg = config(1);
  const Trajectory tr = simulate(m, constant(2, 0.5), cfg);
  const RandomStream rng(cfg.seed, cfg.stream);
  Eigen::VectorXd x = Eigen::VectorXd::Constant(2, 0.5);
  for (std::int64_t k = 0; k < 100; ++k) x += rng.brownian_increment(static_cast<std::uint64_t>(k), 2, 0.01);
  EXPECT_LT((tr.head() - x).norm(), 1e-13);
  EXPECT_EQ(tr.steps(), 100);
  EXPECT_DOUBLE_EQ(tr.time(), 1.0);
  EXPECT_EQ(tr.path().size(), 101);
}

TEST(Solver, LinearDriftMatchesEulerRecursion) {
  const Model m(linear_spec("0 * x0", "-0.7 * x0", "0.3"));
  SimConfig cfg = config(2, 9, 4);
  const Trajectory tr = simulate(m, constant(1, 1.2), cfg);
  const RandomStream rng(cfg.seed, cfg.stream);
  double x = 1.2;
  for (std::int64_t k = 0; k < 200; ++k)
    x = x * (1 - 0.7 * 0.01) + 0.3 * rng.brownian_increment(static_cast<std::uint64_t>(k), 1, 0.01)(0);
  EXPECT_NEAR(tr.head()(0), x, 1e-12);
}

// With G = g x0 the implicit head solves x = m / (1 - g).
TEST(Solver, HeadDependentGSolvesTheImplicitEquation) {
  const double g = 0.4;
  const Model m(linear_spec("0.4 * x0", "-1 * x0", "0.5"));
  SimConfig cfg = config(1, 3);
  const Trajectory tr = simulate(m, constant(1, 1), cfg);
  const RandomStream rng(cfg.seed, cfg.stream);
  double x = 1;
  double lambda = (1 - g) * x;
  for (std::int64_t k = 0; k < 100; ++k) {
    lambda += -x * 0.01 + 0.5 * rng.brownian_increment(static_cast<std::uint64_t>(k), 1, 0.01)(0);
    x = lambda / (1 - g);
  }
  EXPECT_NEAR(tr.head()(0), x, 1e-10);
  EXPECT_NEAR(tr.lambda()(0), lambda, 1e-12);
  // Fixed-point error contracts by g per iteration.
  EXPECT_LE(tr.fixed_point().max_ratio, g + 1e-10);
  EXPECT_GT(tr.fixed_point().max_ratio, 0.5 * g);
}

TEST(Solver, LambdaIsHeadMinusG) {
  const Model m(ModelSpec::canonical());
  SimConfig cfg = config(1, 5);
  const Trajectory tr = simulate(m, constant(1, 1), cfg);
  const Eigen::VectorXd G = m.G(tr.segment());
  EXPECT_LT((tr.lambda() - (tr.head() - G)).norm(), 1e-10);
}

TEST(Solver, CanonicalFixedPointContractsWithinProbedAlpha) {
  const Model m(ModelSpec::canonical());
  SimConfig cfg = config(10, 11);
  const Trajectory tr = simulate(m, constant(1, 1), cfg);
  EXPECT_EQ(tr.fixed_point().solves, 1000);
  EXPECT_LE(tr.fixed_point().max_ratio, m.alpha_hat() + 1e-10);
}

TEST(Solver, SnapshotsAtCheckpoints) {
  const Model m(ModelSpec::canonical());
  SimConfig cfg = config(2);
  cfg.checkpoints = {0, 0.5, 2};
  const Trajectory tr = simulate(m, constant(1, 1), cfg);
  ASSERT_EQ(tr.snapshots().size(), 3u);
  EXPECT_EQ(tr.snapshot_segment(0).size(), 1);
  EXPECT_EQ(tr.snapshot_segment(1).size(), 51);
  EXPECT_EQ(tr.snapshot_segment(2).size(), 201);
  EXPECT_DOUBLE_EQ(tr.snapshots()[1].time, 0.5);
}

TEST(Solver, DeterministicAndStreamDependent) {
  const Model m(ModelSpec::canonical());
  const Trajectory a = simulate(m, constant(1, 1), config(1, 7, 0));
  const Trajectory b = simulate(m, constant(1, 1), config(1, 7, 0));
  const Trajectory c = simulate(m, constant(1, 1), config(1, 7, 1));
  EXPECT_EQ(a.path().values(), b.path().values());
  EXPECT_NE(a.head()(0), c.head()(0));
}

TEST(Solver, ConfigValidation) {
  SimConfig c = config(1);
  c.horizon = 1.005;
  EXPECT_THROW(c.n_steps(), std::invalid_argument);
  c = config(1);
  c.checkpoints = {0.5, 0.25};
  EXPECT_THROW(c.checkpoint_steps(), std::invalid_argument);
  c.checkpoints = {0.123};
  EXPECT_THROW(c.checkpoint_steps(), std::invalid_argument);
  c.checkpoints = {2};
  EXPECT_THROW(c.checkpoint_steps(), std::invalid_argument);
  c.checkpoints = {0, 1};
  EXPECT_EQ(c.checkpoint_steps(), (std::vector<std::int64_t>{0, 100}));
  c.step = 0;
  EXPECT_THROW(c.n_steps(), std::invalid_argument);
}

TEST(Solver, RejectsMisalignedInitialSegment) {
  const Model m(ModelSpec::canonical());
  EXPECT_THROW(simulate(m, constant(1, 1, 0.02), config(1)), AlignmentError);
  EXPECT_THROW(simulate(m, constant(2, 1), config(1)), std::invalid_argument);
}

TEST(Solver, NonConvergenceIsReported) {
  const Model m(linear_spec("0.9 * x0", "0 * x0", "1"));
  SimConfig cfg = config(1);
  cfg.fp_max_iter = 3;
  try {
    simulate(m, constant(1, 1), cfg);
    FAIL();
  } catch (const NonConvergenceError& e) {
    EXPECT_GT(e.residual(), 0);
  }
}

TEST(Solver, RefusesNonContractiveG) {
  const Model m(linear_spec("1.2 * x0", "0 * x0", "1"));
  EXPECT_THROW(simulate(m, constant(1, 1), config(1)), HypothesisError);
}

TEST(Solver, BlowUpIsANumericError) {
  const Model m(linear_spec("0 * x0", "pow(x0, 3)", "1"));
  SimConfig cfg = config(5);
  EXPECT_THROW(simulate(m, constant(1, 100), cfg), NumericError);
}

TEST(MomentEstimate, ThreadCountDoesNotChangeResults) {
  const Model m(ModelSpec::canonical());
  SimConfig cfg = config(1, 21);
  cfg.checkpoints = {0, 0.5, 1};
  const auto V = [](const PathView& p) { return lyapunov_V(p); };
  const auto a = estimate_PtV(m, constant(1, 1), cfg, V, 16, 1);
  const auto b = estimate_PtV(m, constant(1, 1), cfg, V, 16, 3);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].mean, b[i].mean);
    EXPECT_EQ(a[i].stderr_, b[i].stderr_);
  }
  EXPECT_EQ(a[0].mean, 1.0);
  EXPECT_EQ(a[0].stderr_, 0.0);
}

// E X(t) for dX = -a X dt + s dW is x0 e^{-a t}.
TEST(MomentEstimate, OrnsteinUhlenbeckMean) {
  const Model m(linear_spec("0 * x0", "-1 * x0", "0.5"));
  SimConfig cfg = config(1, 8);
  cfg.checkpoints = {1};
  const auto head = [](const PathView& p) { return p.head()(0); };
  const auto est = estimate_PtV(m, constant(1, 2), cfg, head, 4000, 1);
  const double euler = 2 * std::pow(1 - 0.01, 100);
  EXPECT_NEAR(est[0].mean, euler, 4 * est[0].stderr_);
  // Variance of the Euler chain: s^2 h sum (1 - h)^{2k}.
  double var = 0;
  for (int k = 0; k < 100; ++k) var += 0.25 * 0.01 * std::pow(0.99, 2 * k);
  EXPECT_NEAR(est[0].stderr_, std::sqrt(var / 4000), 0.1 * std::sqrt(var / 4000));
}

TEST(MomentEstimate, MeanStderr) {
  const MomentPoint p = mean_stderr(1, {1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(p.mean, 2.5);
  EXPECT_DOUBLE_EQ(p.stderr_, std::sqrt((1.5 * 1.5 * 2 + 0.5 * 0.5 * 2) / 3 / 4));
}

}  // namespace
}  // namespace neutral
