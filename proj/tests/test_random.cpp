#include "neutral/random.hpp"

#include <boost/math/distributions/normal.hpp>
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace neutral {
namespace {

// Known-answer vectors of the Random123 distribution.
TEST(Philox, KnownAnswers) {
  using C = Philox4x32::Counter;
  EXPECT_EQ(Philox4x32::generate({0, 0, 0, 0}, {0, 0}), (C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(Philox4x32::generate({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(Philox4x32::generate({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(RandomStream, IsAPureFunctionOfItsCoordinates) {
  const RandomStream a(42, 3), b(42, 3);
  for (std::uint64_t i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(i), b.uniform(i));
  // Reading out of order does not change values.
  EXPECT_EQ(a.uniform(77), b.uniform(77));
  EXPECT_EQ(a.seed(), 42u);
  EXPECT_EQ(a.stream(), 3u);
}

TEST(RandomStream, DistinctCoordinatesGiveDistinctDraws) {
  const RandomStream a(42, 3), b(42, 4), c(43, 3);
  int equal = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    equal += a.uniform(i) == b.uniform(i);
    equal += a.uniform(i) == c.uniform(i);
    equal += a.uniform(i, 0) == a.uniform(i, 1);
  }
  EXPECT_EQ(equal, 0);
}

TEST(RandomStream, UniformsInUnitInterval) {
  const RandomStream s(1, 0);
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const auto u = s.uniform_pair(i, 0);
    for (double v : u) {
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

// Kolmogorov-Smirnov against the standard normal; 5e4 draws.
TEST(RandomStream, NormalsPassKolmogorovSmirnov) {
  const RandomStream s(2024, 9);
  std::vector<double> x;
  Eigen::VectorXd buf(5);
  for (std::uint64_t i = 0; i < 10000; ++i) {
    s.normals(i, buf);
    for (double v : buf) x.push_back(v);
  }
  std::sort(x.begin(), x.end());
  const boost::math::normal nd;
  double d = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double F = boost::math::cdf(nd, x[i]);
    d = std::max({d, std::abs(F - static_cast<double>(i) / n), std::abs(F - static_cast<double>(i + 1) / n)});
  }
  // 1% critical value 1.63 / sqrt(n).
  EXPECT_LT(d, 1.63 / std::sqrt(n));
}

TEST(RandomStream, BrownianIncrementScales) {
  const RandomStream s(5, 5);
  Eigen::VectorXd z(3);
  s.normals(12, z);
  EXPECT_LT((s.brownian_increment(12, 3, 0.04) - 0.2 * z).norm(), 1e-15);
}

}  // namespace
}  // namespace neutral
