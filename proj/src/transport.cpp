#include "neutral/transport.hpp"

#include "neutral/parallel.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace neutral {

namespace {

double v_of(const PathView& p) {
  const double n = norm_r(p);
  return n * n;
}

double capped_rho(const PathView& a, const PathView& b, double cap) {
  return std::min(1.0, norm_r_diff(a, b, std::min(1.0, cap)));
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

}  // namespace

double metric_value(const PathView& a, const PathView& b, const MetricSpec& metric) {
  switch (metric.kind) {
    case Metric::Rho:
      return capped_rho(a, b, 1);
    case Metric::RhoDelta:
      if (!(metric.delta > 0)) throw std::invalid_argument("rho_r_delta: delta must be > 0");
      return std::min(1.0, capped_rho(a, b, metric.delta) / metric.delta);
    case Metric::RhoV:
      return std::sqrt(capped_rho(a, b, 1) * (1 + v_of(a) + v_of(b)));
  }
  throw std::invalid_argument("unknown metric");
}

Eigen::MatrixXd cost_matrix(std::span<const Path> a, std::span<const Path> b,
                            const MetricSpec& metric, int threads) {
  if (a.empty() || b.empty()) throw std::invalid_argument("cost_matrix: empty sample");
  for (const auto& p : a) check_aligned(a.front().view(), p.view());
  for (const auto& p : b) check_aligned(a.front().view(), p.view());
  if (metric.kind == Metric::RhoDelta && !(metric.delta > 0))
    throw std::invalid_argument("rho_r_delta: delta must be > 0");

  std::vector<double> va, vb;
  if (metric.kind == Metric::RhoV) {
    for (const auto& p : a) va.push_back(v_of(p.view()));
    for (const auto& p : b) vb.push_back(v_of(p.view()));
  }
  Eigen::MatrixXd cost(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  parallel_for(a.size(), threads, [&](std::size_t i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      const auto ii = static_cast<Eigen::Index>(i);
      const auto jj = static_cast<Eigen::Index>(j);
      if (metric.kind == Metric::RhoV) {
        cost(ii, jj) = std::sqrt(capped_rho(a[i].view(), b[j].view(), 1) * (1 + va[i] + vb[j]));
      } else {
        cost(ii, jj) = metric_value(a[i].view(), b[j].view(), metric);
      }
    }
  });
  return cost;
}

TransportPlan solve_exact(const Eigen::MatrixXd& cost, int cap) {
  const Eigen::Index n = cost.rows();
  if (n < 1 || cost.cols() != n) throw std::invalid_argument("solve_exact: cost must be square and nonempty");
  if (n > cap)
    throw CapacityError("solve_exact: n = " + std::to_string(n) + " exceeds the cap of " +
                        std::to_string(cap) + "; use solve_entropic");
  if (!cost.allFinite()) throw std::invalid_argument("solve_exact: non-finite cost");

  // Shortest augmenting paths with potentials, rows and columns 1-based.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0), minv(n + 1);
  std::vector<Eigen::Index> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (Eigen::Index i = 1; i <= n; ++i) {
    match[0] = i;
    Eigen::Index j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const Eigen::Index i0 = match[j0];
      double delta = kInf;
      Eigen::Index j1 = 0;
      for (Eigen::Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Eigen::Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const Eigen::Index j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  TransportPlan out;
  out.exact = true;
  out.assignment.assign(static_cast<std::size_t>(n), -1);
  for (Eigen::Index j = 1; j <= n; ++j)
    out.assignment[static_cast<std::size_t>(match[j] - 1)] = static_cast<int>(j - 1);
  out.u = Eigen::Map<const Eigen::VectorXd>(u.data() + 1, n);
  out.v = Eigen::Map<const Eigen::VectorXd>(v.data() + 1, n);
  out.min_reduced_cost = (cost - out.u.replicate(1, n) - out.v.transpose().replicate(n, 1)).minCoeff();
  out.plan = Eigen::MatrixXd::Zero(n, n);
  double total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int j = out.assignment[static_cast<std::size_t>(i)];
    out.plan(i, j) = 1.0 / static_cast<double>(n);
    total += cost(i, j);
  }
  out.value = total / static_cast<double>(n);
  return out;
}

TransportPlan solve_entropic(const Eigen::MatrixXd& cost, double reg, int max_iter, double tol) {
  const Eigen::Index n = cost.rows();
  if (n < 1 || cost.cols() != n) throw std::invalid_argument("solve_entropic: cost must be square and nonempty");
  if (!(reg > 0)) throw std::invalid_argument("solve_entropic: reg must be positive");
  const double log_a = -std::log(static_cast<double>(n));
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd scratch(n);
  for (int it = 1; it <= max_iter; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      scratch = (g - cost.row(i).transpose()) / reg;
      f(i) = reg * (log_a - log_sum_exp(scratch));
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      scratch = (f - cost.col(j)) / reg;
      g(j) = reg * (log_a - log_sum_exp(scratch));
    }
    // Columns are exact after the g update; check the rows.
    double violation = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      scratch = (g - cost.row(i).transpose()).array() + f(i);
      violation += std::abs(std::exp(log_sum_exp(scratch / reg)) - std::exp(log_a));
    }
    if (violation < tol) {
      TransportPlan out;
      out.reg = reg;
      out.iterations = it;
      out.plan = ((f.replicate(1, n) + g.transpose().replicate(n, 1) - cost) / reg).array().exp();
      out.value = (out.plan.array() * cost.array()).sum();
      return out;
    }
  }
  throw SinkhornError("Sinkhorn did not reach marginal tolerance in " + std::to_string(max_iter) +
                      " iterations; increase reg or max_iter");
}

double empirical_W(std::span<const Path> a, std::span<const Path> b, const MetricSpec& metric,
                   int threads) {
  if (a.size() != b.size()) throw std::invalid_argument("empirical_W: samples must have equal size");
  return solve_exact(cost_matrix(a, b, metric, threads)).value;
}

}  // namespace neutral
