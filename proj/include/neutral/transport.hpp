#pragma once

// Optimal transport between equal-size empirical measures of segments.

#include "neutral/path_space.hpp"

#include <Eigen/Dense>

#include <span>
#include <stdexcept>
#include <vector>

namespace neutral {

class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class SinkhornError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Metric { Rho, RhoDelta, RhoV };

struct MetricSpec {
  Metric kind = Metric::Rho;
  double delta = 1;  // RhoDelta only; RhoV uses V = ||.||_r^2
};

double metric_value(const PathView& a, const PathView& b, const MetricSpec& metric);

/// cost(i, j) = metric(a_i, b_j).
Eigen::MatrixXd cost_matrix(std::span<const Path> a, std::span<const Path> b,
                            const MetricSpec& metric, int threads = 1);

struct TransportPlan {
  std::vector<int> assignment;  // column of each row; empty for entropic plans
  Eigen::MatrixXd plan;         // rows and columns sum to 1/n
  double value = 0;             // sum of plan .* cost
  bool exact = false;
  double reg = 0;               // entropic regularisation, 0 when exact
  int iterations = 0;
  // Dual potentials of the assignment problem; cost - u - v^T >= 0.
  Eigen::VectorXd u;
  Eigen::VectorXd v;
  double min_reduced_cost = 0;
};

inline constexpr int kExactCap = 512;

/// Minimum-cost perfect assignment by the Hungarian method with potentials.
TransportPlan solve_exact(const Eigen::MatrixXd& cost, int cap = kExactCap);

/// Log-domain Sinkhorn iterations for uniform marginals; stops once the row
/// marginal violation (l1) drops below `tol`.
TransportPlan solve_entropic(const Eigen::MatrixXd& cost, double reg, int max_iter = 10000,
                             double tol = 1e-8);

/// Exact empirical Wasserstein distance (mean matched cost).
double empirical_W(std::span<const Path> a, std::span<const Path> b, const MetricSpec& metric,
                   int threads = 1);

}  // namespace neutral
