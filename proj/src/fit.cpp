#include "neutral/harness.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace neutral {

namespace {

struct LogLinear {
  double intercept = 0;
  double slope = 0;
  double slope_se = 0;
};

// OLS of log z on t; z > 0.
LogLinear log_linear(std::span<const double> t, std::span<const double> z,
                     std::span<const double> z_se) {
  const auto n = static_cast<double>(t.size());
  double tbar = 0, lbar = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    tbar += t[i];
    lbar += std::log(z[i]);
  }
  tbar /= n;
  lbar /= n;
  double stt = 0, stl = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    stt += (t[i] - tbar) * (t[i] - tbar);
    stl += (t[i] - tbar) * (std::log(z[i]) - lbar);
  }
  LogLinear f;
  f.slope = stl / stt;
  f.intercept = lbar - f.slope * tbar;
  double sse = 0, var_mc = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double e = std::log(z[i]) - (f.intercept + f.slope * t[i]);
    sse += e * e;
    if (!z_se.empty()) {
      const double w = (t[i] - tbar) / stt;
      const double rel = z_se[i] / z[i];
      var_mc += w * w * rel * rel;
    }
  }
  const double var_res = sse / (n - 2) / stt;
  f.slope_se = std::sqrt(std::max(var_res, var_mc));
  return f;
}

struct Candidate {
  double c_inf;
  double sign;
  LogLinear inner;
  double sse;
};

Candidate evaluate_floor(std::span<const double> t, std::span<const double> y,
                         std::span<const double> y_se, double c_inf, double sign) {
  std::vector<double> z(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) z[i] = sign * (y[i] - c_inf);
  Candidate c{c_inf, sign, log_linear(t, z, y_se), 0};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double fitted = c_inf + sign * std::exp(c.inner.intercept + c.inner.slope * t[i]);
    c.sse += (y[i] - fitted) * (y[i] - fitted);
  }
  return c;
}

}  // namespace

RateFit fit_exponential(std::span<const double> t, std::span<const double> y, bool with_floor,
                        std::span<const double> y_se) {
  if (t.size() != y.size()) throw std::invalid_argument("fit_exponential: t and y differ in length");
  if (!y_se.empty() && y_se.size() != y.size())
    throw std::invalid_argument("fit_exponential: stderr length differs");
  if (t.size() < 4) throw std::invalid_argument("fit_exponential: need at least 4 points");
  const auto [t_lo, t_hi] = std::minmax_element(t.begin(), t.end());
  if (!(*t_hi > *t_lo)) throw std::invalid_argument("fit_exponential: degenerate time grid");
  for (double v : y)
    if (!std::isfinite(v)) throw std::invalid_argument("fit_exponential: non-finite data");

  RateFit fit;
  fit.with_floor = with_floor;
  fit.n = static_cast<int>(t.size());
  fit.t_min = *t_lo;
  fit.t_max = *t_hi;
  const auto [y_lo, y_hi] = std::minmax_element(y.begin(), y.end());
  const double span = *y_hi - *y_lo;

  LogLinear inner;
  if (!with_floor) {
    for (double v : y)
      if (!(v > 0)) throw std::invalid_argument("fit_exponential: log-linear mode needs y > 0");
    inner = log_linear(t, y, y_se);
    fit.C = std::exp(inner.intercept);
  } else {
    double mean = 0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    if (!(span > 1e-12 * std::max(1.0, std::abs(mean)))) {
      fit.identifiable = false;
      fit.c_inf = mean;
      return fit;
    }
    // c_inf = y_min - span e^u (decaying from above) or y_max + span e^u.
    auto at = [&](double u, double sign) {
      const double c = sign > 0 ? *y_lo - span * std::exp(u) : *y_hi + span * std::exp(u);
      return evaluate_floor(t, y, y_se, c, sign);
    };
    constexpr double kLo = -20, kHi = 8, kStep = 0.1;
    Candidate best{0, 0, {}, std::numeric_limits<double>::infinity()};
    for (double sign : {1.0, -1.0}) {
      double best_u = kLo;
      double best_sse = std::numeric_limits<double>::infinity();
      for (double u = kLo; u <= kHi + 1e-12; u += kStep) {
        const double s = at(u, sign).sse;
        if (s < best_sse) {
          best_sse = s;
          best_u = u;
        }
      }
      // Golden-section refinement around the best grid point.
      const double g = (std::sqrt(5.0) - 1) / 2;
      double a = best_u - kStep, b = best_u + kStep;
      double x1 = b - g * (b - a), x2 = a + g * (b - a);
      double f1 = at(x1, sign).sse, f2 = at(x2, sign).sse;
      for (int it = 0; it < 100 && b - a > 1e-12; ++it) {
        if (f1 < f2) {
          b = x2;
          x2 = x1;
          f2 = f1;
          x1 = b - g * (b - a);
          f1 = at(x1, sign).sse;
        } else {
          a = x1;
          x1 = x2;
          f1 = f2;
          x2 = a + g * (b - a);
          f2 = at(x2, sign).sse;
        }
      }
      for (double u : {best_u, 0.5 * (a + b)}) {
        Candidate c = at(u, sign);
        if (c.sse < best.sse) best = c;
      }
    }
    inner = best.inner;
    fit.c_inf = best.c_inf;
    fit.C = best.sign * std::exp(inner.intercept);
  }

  fit.lambda = -inner.slope;
  fit.lambda_se = inner.slope_se;
  const boost::math::students_t dist(static_cast<double>(fit.n - (with_floor ? 3 : 2)));
  const double q = boost::math::quantile(boost::math::complement(dist, 0.025));
  fit.lambda_ci_low = fit.lambda - q * fit.lambda_se;
  fit.lambda_ci_high = fit.lambda + q * fit.lambda_se;

  double mean = 0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double sse = 0, sst = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double fitted = fit.c_inf + fit.C * std::exp(-fit.lambda * t[i]);
    sse += (y[i] - fitted) * (y[i] - fitted);
    sst += (y[i] - mean) * (y[i] - mean);
  }
  fit.residual = std::sqrt(sse);
  fit.r_squared = sst > 0 ? 1 - sse / sst : 1;
  return fit;
}

}  // namespace neutral
