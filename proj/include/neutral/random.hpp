#pragma once

// Counter-based random streams. Every draw is a pure function of
// (seed, stream, counter), so trajectories are reproducible independently of
// scheduling and can be regenerated at any step.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace neutral {

/// Philox4x32-10 block function (Salmon et al., SC'11).
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57;
  static constexpr std::uint32_t kW0 = 0x9E3779B9;
  static constexpr std::uint32_t kW1 = 0xBB67AE85;
};

/// A reproducible stream of uniforms/normals keyed by (seed, stream).
///
/// Draw `block` at `index` is Philox(counter = {block, index_lo, index_hi,
/// stream}, key = seed). Each block yields two doubles.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint32_t stream)
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  std::uint64_t seed() const {
    return (std::uint64_t{key_[1]} << 32) | key_[0];
  }
  std::uint32_t stream() const { return stream_; }

  /// Two uniforms in (0, 1] from one block.
  std::array<double, 2> uniform_pair(std::uint64_t index,
                                     std::uint32_t block) const {
    const auto out = Philox4x32::generate(
        {block, static_cast<std::uint32_t>(index),
         static_cast<std::uint32_t>(index >> 32), stream_},
        key_);
    const std::uint64_t a = (std::uint64_t{out[0]} << 32) | out[1];
    const std::uint64_t b = (std::uint64_t{out[2]} << 32) | out[3];
    return {to_unit(a), to_unit(b)};
  }

  double uniform(std::uint64_t index, std::uint32_t block = 0) const {
    return uniform_pair(index, block)[0];
  }

  /// Standard normals for draw `index`, filled two per block (Box-Muller).
  template <typename Derived>
  void normals(std::uint64_t index, Eigen::MatrixBase<Derived>& out) const {
    const Eigen::Index n = out.size();
    for (Eigen::Index i = 0; i < n; i += 2) {
      const auto u = uniform_pair(index, static_cast<std::uint32_t>(i / 2));
      const double radius = std::sqrt(-2.0 * std::log(u[0]));
      const double angle = 2.0 * std::numbers::pi * u[1];
      out(i) = radius * std::cos(angle);
      if (i + 1 < n) out(i + 1) = radius * std::sin(angle);
    }
  }

  /// Brownian increment over a step of length `dt` at step `index`.
  Eigen::VectorXd brownian_increment(std::uint64_t index, Eigen::Index dim,
                                     double dt) const {
    Eigen::VectorXd dw(dim);
    normals(index, dw);
    dw *= std::sqrt(dt);
    return dw;
  }

 private:
  // 53 random bits mapped to (0, 1].
  static double to_unit(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint32_t stream_;
};

}  // namespace neutral
