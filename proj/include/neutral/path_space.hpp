#pragma once

// Grid representation of the weighted path space C_r: paths on (-inf, 0]
// stored on a uniform grid over [-T0, 0] and extended by a constant tail.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace neutral {

class AlignmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Tag for how a grid path continues past its oldest stored point.
enum class Extension { ConstantTail };

template <typename Scalar>
class SegmentPath;

/// Non-owning view of the newest `size()` points of a path.
///
/// Grid index 0 is the oldest stored point (time -T0), index size()-1 is the
/// head (time 0). Everything older than index 0 equals point(0).
template <typename Scalar>
class SegmentView {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using ConstColumn = Eigen::Map<const Vector>;

  SegmentView(const Scalar* data, Eigen::Index dim, Eigen::Index size,
              Scalar step, Scalar decay)
      : data_(data), dim_(dim), size_(size), step_(step), decay_(decay) {}

  Eigen::Index dim() const { return dim_; }
  Eigen::Index size() const { return size_; }
  Scalar step() const { return step_; }
  Scalar decay() const { return decay_; }
  Scalar span() const { return step_ * static_cast<Scalar>(size_ - 1); }

  ConstColumn point(Eigen::Index k) const {
    return ConstColumn(data_ + k * dim_, dim_);
  }
  ConstColumn head() const { return point(size_ - 1); }
  ConstColumn oldest() const { return point(0); }

  /// Value at theta = -lag*step, constant past the oldest point.
  ConstColumn at_lag(Eigen::Index lag) const {
    return point(std::max<Eigen::Index>(size_ - 1 - lag, 0));
  }

  /// The first `n` grid points as a segment ending at grid index n-1.
  SegmentView prefix(Eigen::Index n) const {
    return SegmentView(data_, dim_, n, step_, decay_);
  }

  SegmentPath<Scalar> to_path() const;

 private:
  const Scalar* data_;
  Eigen::Index dim_;
  Eigen::Index size_;
  Scalar step_;
  Scalar decay_;
};

/// Owning grid path with a constant-tail extension.
template <typename Scalar>
class SegmentPath {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using ConstColumn = Eigen::Map<const Vector>;

  /// `values` is dim x n, columns ordered oldest to newest.
  SegmentPath(const Matrix& values, Scalar step, Scalar decay)
      : dim_(values.rows()), step_(step), decay_(decay) {
    if (values.rows() < 1 || values.cols() < 1)
      throw std::invalid_argument("SegmentPath: values must be nonempty");
    validate_params();
    data_.resize(static_cast<std::size_t>(values.size()));
    Eigen::Map<Matrix>(data_.data(), values.rows(), values.cols()) = values;
    for (Scalar v : data_)
      if (!std::isfinite(v))
        throw std::invalid_argument("SegmentPath: non-finite value");
  }

  /// Constant path c sampled on `n_points` grid points.
  static SegmentPath constant(const Vector& c, Scalar step, Scalar decay,
                              Eigen::Index n_points = 1) {
    return SegmentPath(c.replicate(1, n_points), step, decay);
  }

  Eigen::Index dim() const { return dim_; }
  Eigen::Index size() const {
    return static_cast<Eigen::Index>(data_.size()) / dim_;
  }
  Scalar step() const { return step_; }
  Scalar decay() const { return decay_; }
  Scalar span() const { return step_ * static_cast<Scalar>(size() - 1); }
  Extension extension() const { return Extension::ConstantTail; }

  ConstColumn point(Eigen::Index k) const {
    return ConstColumn(data_.data() + k * dim_, dim_);
  }
  ConstColumn head() const { return point(size() - 1); }

  Eigen::Map<const Matrix> values() const {
    return Eigen::Map<const Matrix>(data_.data(), dim_, size());
  }

  SegmentView<Scalar> view() const {
    return SegmentView<Scalar>(data_.data(), dim_, size(), step_, decay_);
  }
  SegmentView<Scalar> prefix(Eigen::Index n) const {
    return SegmentView<Scalar>(data_.data(), dim_, n, step_, decay_);
  }
  operator SegmentView<Scalar>() const { return view(); }  // NOLINT

  template <typename Derived>
  void push_back(const Eigen::MatrixBase<Derived>& v) {
    if (v.size() != dim_)
      throw AlignmentError("SegmentPath: appended vector has wrong dimension");
    for (Eigen::Index i = 0; i < dim_; ++i) {
      if (!std::isfinite(v(i)))
        throw std::invalid_argument("SegmentPath: non-finite value");
      data_.push_back(v(i));
    }
  }

  void reserve(Eigen::Index n_points) {
    data_.reserve(static_cast<std::size_t>(n_points * dim_));
  }

 private:
  void validate_params() const {
    if (!(step_ > 0) || !std::isfinite(step_))
      throw std::invalid_argument("SegmentPath: step must be positive");
    if (!(decay_ > 0) || !std::isfinite(decay_))
      throw std::invalid_argument("SegmentPath: decay must be positive");
  }

  Eigen::Index dim_;
  Scalar step_;
  Scalar decay_;
  std::vector<Scalar> data_;
};

template <typename Scalar>
SegmentPath<Scalar> SegmentView<Scalar>::to_path() const {
  using Matrix = typename SegmentPath<Scalar>::Matrix;
  return SegmentPath<Scalar>(
      Matrix(Eigen::Map<const Matrix>(data_, dim_, size_)), step_, decay_);
}

using Path = SegmentPath<double>;
using PathView = SegmentView<double>;

namespace detail {

template <typename Scalar>
bool nearly_equal(Scalar a, Scalar b) {
  return std::abs(a - b) <= Scalar(1e-12) * std::max(std::abs(a), std::abs(b));
}

}  // namespace detail

template <typename Scalar>
void check_aligned(const SegmentView<Scalar>& a, const SegmentView<Scalar>& b) {
  if (a.dim() != b.dim())
    throw AlignmentError("paths differ in dimension");
  if (!detail::nearly_equal(a.step(), b.step()))
    throw AlignmentError("paths differ in grid step");
  if (!detail::nearly_equal(a.decay(), b.decay()))
    throw AlignmentError("paths differ in decay rate");
}

/// sup over theta <= 0 of e^{r theta}|phi(theta)| at grid resolution.
///
/// The constant tail contributes e^{-r T0}|phi(-T0)|, which is the weight of
/// the oldest grid point itself, so the grid scan is exact for the extension.
template <typename Scalar>
Scalar norm_r(const SegmentView<Scalar>& path) {
  const Scalar factor = std::exp(-path.decay() * path.step());
  Scalar weight = 1;
  Scalar best = 0;
  for (Eigen::Index lag = 0; lag < path.size(); ++lag) {
    best = std::max(best, weight * path.at_lag(lag).norm());
    weight *= factor;
  }
  return best;
}

/// ||a - b||_r with both paths aligned at the head; the shorter path is
/// padded by its constant tail.
template <typename Scalar>
Scalar norm_r_diff(const SegmentView<Scalar>& a, const SegmentView<Scalar>& b) {
  check_aligned(a, b);
  const Eigen::Index n = std::max(a.size(), b.size());
  const Scalar factor = std::exp(-a.decay() * a.step());
  Scalar weight = 1;
  Scalar best = 0;
  for (Eigen::Index lag = 0; lag < n; ++lag) {
    best = std::max(best, weight * (a.at_lag(lag) - b.at_lag(lag)).norm());
    weight *= factor;
  }
  return best;
}

/// Like norm_r_diff, but stops scanning once the running max reaches `cap`;
/// min(cap, result) is exact.
template <typename Scalar>
Scalar norm_r_diff(const SegmentView<Scalar>& a, const SegmentView<Scalar>& b,
                   Scalar cap) {
  check_aligned(a, b);
  const Eigen::Index n = std::max(a.size(), b.size());
  const Scalar factor = std::exp(-a.decay() * a.step());
  Scalar weight = 1;
  Scalar best = 0;
  for (Eigen::Index lag = 0; lag < n && best < cap; ++lag) {
    best = std::max(best, weight * (a.at_lag(lag) - b.at_lag(lag)).norm());
    weight *= factor;
  }
  return best;
}

/// rho_r = 1 ∧ ||a - b||_r.
template <typename Scalar>
Scalar rho_r(const SegmentView<Scalar>& a, const SegmentView<Scalar>& b) {
  return std::min<Scalar>(1, norm_r_diff(a, b, Scalar(1)));
}

/// rho_{r,delta} = 1 ∧ (rho_r / delta).
template <typename Scalar>
Scalar rho_r_delta(const SegmentView<Scalar>& a, const SegmentView<Scalar>& b,
                   Scalar delta) {
  if (!(delta > 0)) throw std::invalid_argument("rho_r_delta: delta must be > 0");
  return std::min<Scalar>(1, rho_r(a, b) / delta);
}

/// sqrt(rho_r(a,b) (1 + V(a) + V(b))) given precomputed Lyapunov values.
template <typename Scalar>
Scalar rho_r_V(const SegmentView<Scalar>& a, const SegmentView<Scalar>& b,
               Scalar v_a, Scalar v_b) {
  if (v_a < 0 || v_b < 0)
    throw std::invalid_argument("rho_r_V: Lyapunov values must be nonnegative");
  return std::sqrt(rho_r(a, b) * (1 + v_a + v_b));
}

template <typename Scalar, typename Functional>
Scalar rho_r_V(const SegmentView<Scalar>& a, const SegmentView<Scalar>& b,
               Functional&& V) {
  return rho_r_V(a, b, static_cast<Scalar>(V(a)), static_cast<Scalar>(V(b)));
}

/// Running weighted sup and exponential-kernel integrals of a path.
///
/// For each kernel rate k it holds the vector integral
///   int_{-inf}^0 e^{k theta} phi(t + theta) d theta
/// and the scalar clipped variant with integrand 1 ∧ |phi|, both by
/// trapezoid quadrature on the grid plus the exact constant-tail term.
template <typename Scalar>
class RunningAccumulators {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  RunningAccumulators() = default;

  /// Full-grid evaluation for the given kernel rates.
  static RunningAccumulators from_path(const SegmentView<Scalar>& path,
                                       std::span<const Scalar> rates) {
    RunningAccumulators acc;
    acc.step_ = path.step();
    acc.decay_ = path.decay();
    acc.sup_factor_ = std::exp(-path.decay() * path.step());
    acc.rates_.assign(rates.begin(), rates.end());
    const auto k = static_cast<Eigen::Index>(rates.size());
    acc.kernel_factor_.resize(k);
    acc.kmean_.setZero(path.dim(), k);
    acc.kclip_.setZero(k);
    acc.weighted_sup_ = norm_r(path);

    const Scalar h = path.step();
    const Eigen::Index n = path.size();
    for (Eigen::Index j = 0; j < k; ++j) {
      const Scalar rate = acc.rates_[static_cast<std::size_t>(j)];
      if (!(rate > 0))
        throw std::invalid_argument("kernel rates must be positive");
      acc.kernel_factor_(j) = std::exp(-rate * h);
      // Constant tail beyond -T0.
      const Scalar tail = std::exp(-rate * path.span()) / rate;
      Vector mean = tail * path.oldest();
      Scalar clip = tail * clip_abs(path.oldest());
      // Trapezoid over grid intervals, accumulated from the oldest point.
      for (Eigen::Index i = 0; i + 1 < n; ++i) {
        const Scalar w_old = std::exp(-rate * h * static_cast<Scalar>(n - 1 - i));
        const Scalar w_new = std::exp(-rate * h * static_cast<Scalar>(n - 2 - i));
        mean += (h / 2) * (w_old * path.point(i) + w_new * path.point(i + 1));
        clip += (h / 2) * (w_old * clip_abs(path.point(i)) +
                           w_new * clip_abs(path.point(i + 1)));
      }
      acc.kmean_.col(j) = mean;
      acc.kclip_(j) = clip;
    }
    return acc;
  }

  Scalar weighted_sup() const { return weighted_sup_; }
  std::span<const Scalar> rates() const { return rates_; }
  const Matrix& kmeans() const { return kmean_; }
  const Vector& kclips() const { return kclip_; }

  Eigen::Index rate_index(Scalar rate) const {
    for (std::size_t j = 0; j < rates_.size(); ++j)
      if (rates_[j] == rate) return static_cast<Eigen::Index>(j);
    throw std::out_of_range("RunningAccumulators: rate not tracked");
  }
  auto kmean(Scalar rate) const { return kmean_.col(rate_index(rate)); }
  Scalar kclip(Scalar rate) const { return kclip_(rate_index(rate)); }

  /// O(1) update for a new head appended after `previous_head`.
  template <typename D1, typename D2>
  void advance(const Eigen::MatrixBase<D1>& previous_head,
               const Eigen::MatrixBase<D2>& new_head) {
    weighted_sup_ = std::max<Scalar>(new_head.norm(), sup_factor_ * weighted_sup_);
    const Scalar half = step_ / 2;
    const Scalar clip_prev = clip_abs(previous_head);
    const Scalar clip_new = clip_abs(new_head);
    for (Eigen::Index j = 0; j < kmean_.cols(); ++j) {
      const Scalar f = kernel_factor_(j);
      kmean_.col(j) = f * kmean_.col(j) + half * (f * previous_head + new_head);
      kclip_(j) = f * kclip_(j) + half * (f * clip_prev + clip_new);
    }
  }

  /// Kernel integrals as they would be after appending `candidate`, written
  /// into caller-owned storage. Used by implicit head solves.
  template <typename D1, typename D2>
  void preview(const Eigen::MatrixBase<D1>& previous_head,
               const Eigen::MatrixBase<D2>& candidate, Matrix& kmean_out,
               Vector& kclip_out) const {
    const Scalar half = step_ / 2;
    const Scalar clip_prev = clip_abs(previous_head);
    const Scalar clip_new = clip_abs(candidate);
    kmean_out.resize(kmean_.rows(), kmean_.cols());
    kclip_out.resize(kclip_.size());
    for (Eigen::Index j = 0; j < kmean_.cols(); ++j) {
      const Scalar f = kernel_factor_(j);
      kmean_out.col(j) = f * kmean_.col(j) + half * (f * previous_head + candidate);
      kclip_out(j) = f * kclip_(j) + half * (f * clip_prev + clip_new);
    }
  }

  template <typename Derived>
  static Scalar clip_abs(const Eigen::MatrixBase<Derived>& v) {
    return std::min<Scalar>(1, v.norm());
  }

 private:
  Scalar step_ = 0;
  Scalar decay_ = 0;
  Scalar sup_factor_ = 0;
  Scalar weighted_sup_ = 0;
  std::vector<Scalar> rates_;
  Vector kernel_factor_;
  Matrix kmean_;
  Vector kclip_;
};

using Accumulators = RunningAccumulators<double>;

/// Appends `new_head` to the path and updates the accumulators in O(1).
template <typename Scalar, typename Derived>
std::pair<SegmentPath<Scalar>, RunningAccumulators<Scalar>> advance(
    SegmentPath<Scalar> path, RunningAccumulators<Scalar> acc,
    const Eigen::MatrixBase<Derived>& new_head) {
  const typename SegmentPath<Scalar>::Vector previous = path.head();
  path.push_back(new_head);
  acc.advance(previous, new_head);
  return {std::move(path), std::move(acc)};
}

}  // namespace neutral
