#include "bpf/spectral_metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bpf/rng.hpp"

namespace bpf {
namespace {

using Values = std::vector<std::complex<double>>;

SpectralTransform point_cloud(const FrequencyGrid& g, const std::vector<std::vector<double>>& coords,
                              const std::vector<double>& w) {
  return {g.fingerprint(), g.transform(coords, w)};
}

// Random Hermitian-consistent values: transform of a random signed point set.
SpectralTransform random_transform(const FrequencyGrid& g, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<std::vector<double>> c(g.dimension());
  std::vector<double> w;
  for (int i = 0; i < 5; ++i) {
    for (auto& axis : c) axis.push_back(4.0 * uniform01(rng) - 2.0);
    w.push_back(standard_normal(rng));
  }
  return point_cloud(g, c, w);
}

TEST(FrequencyGrid, ValidatesParameters) {
  EXPECT_THROW(FrequencyGrid(1, 10.0, 0.1, -0.5), ArgumentError);
  EXPECT_THROW(FrequencyGrid(2, 10.0, 0.1, -1.0), ArgumentError);
  EXPECT_THROW(FrequencyGrid(3, 10.0, 0.1, -5.0), ArgumentError);
  EXPECT_THROW(FrequencyGrid(1, 10.0, 0.0, -3.0), ArgumentError);
  EXPECT_THROW(FrequencyGrid(2, 1000.0, 0.01, -3.0), ArgumentError);
  const FrequencyGrid g(2, 5.0, 0.5, -3.0);
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto th = g.node(k);
    EXPECT_LE(std::hypot(th[0], th[1]), 5.0);
    EXPECT_GT(g.weights()[k], 0.0);
    const auto m = g.node(g.mirror(k));
    EXPECT_EQ(m[0], -th[0]);
    EXPECT_EQ(m[1], -th[1]);
  }
}

TEST(FrequencyGrid, DefaultsSatisfyHypothesis) {
  for (double alpha : {0.8, 1.5, 2.0}) {
    for (std::size_t d : {1u, 2u}) {
      const auto g = FrequencyGrid::defaults(d, alpha);
      EXPECT_LT(g.gamma(), -(0.5 * d + 2 * alpha));
    }
  }
  const auto g1 = FrequencyGrid::defaults(1, 2.0);
  EXPECT_EQ(g1.cutoff(), 40.0);
  EXPECT_EQ(g1.spacing(), 0.05);
  EXPECT_EQ(g1.size(), 1600u);
}

TEST(FrequencyGrid, TransformMatchesDirectSum) {
  for (std::size_t d : {1u, 2u}) {
    const FrequencyGrid g(d, 20.0, d == 1 ? 0.05 : 0.4, -4.0);
    CounterRng rng(7);
    std::vector<std::vector<double>> c(d);
    std::vector<double> w;
    for (int i = 0; i < 20; ++i) {
      for (auto& axis : c) axis.push_back(20.0 * standard_normal(rng));
      w.push_back(uniform01(rng));
    }
    const auto t = g.transform(c, w, 0.5);
    double err = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const auto th = g.node(k);
      std::complex<double> s{0, 0};
      for (std::size_t i = 0; i < w.size(); ++i) {
        double ph = 0.0;
        for (std::size_t a = 0; a < d; ++a) ph += th[a] * c[a][i];
        s += 0.5 * w[i] * std::polar(1.0, -ph);
      }
      err = std::max(err, std::abs(t[k] - s));
    }
    EXPECT_LT(err, 1e-10) << d;
  }
}

TEST(SobolevNorm, ZeroAndCancellation) {
  const FrequencyGrid g(1, 10.0, 0.1, -2.0);
  EXPECT_EQ(sobolev_norm_sq(Values(g.size(), 0.0), g), 0.0);
  const auto t = point_cloud(g, {{1.3, 1.3}}, {1.0, -1.0});
  EXPECT_EQ(sobolev_norm_sq(t, g), 0.0);
}

TEST(SobolevNorm, DiracWithGammaMinusOne) {
  const FrequencyGrid g(1, 200.0, 0.01, -1.0);
  const double v = sobolev_norm_sq(Values(g.size(), 1.0), g);
  EXPECT_NEAR(v, std::numbers::pi, 0.02);
  EXPECT_NEAR(g.tail_bound(), 2.0 / 200.0, 1e-15);
}

TEST(SobolevNorm, TailControlUnderDoubledCutoff) {
  for (std::size_t d : {1u, 2u}) {
    const double gamma = d == 1 ? -1.5 : -2.5;
    const FrequencyGrid a(d, 10.0, d == 1 ? 0.01 : 0.1, gamma), b(d, 20.0, d == 1 ? 0.01 : 0.1, gamma);
    const double na = sobolev_norm_sq(Values(a.size(), 1.0), a);
    const double nb = sobolev_norm_sq(Values(b.size(), 1.0), b);
    EXPECT_GT(nb, na);
    EXPECT_LT(nb - na, a.tail_bound()) << d;
  }
}

TEST(SobolevNorm, QuadraticAndMonotone) {
  const FrequencyGrid g(2, 8.0, 0.25, -3.0);
  const auto t = random_transform(g, 1);
  const double base = sobolev_norm_sq(t, g);
  auto scaled = t;
  for (auto& v : scaled.values) v *= -2.5;
  EXPECT_NEAR(sobolev_norm_sq(scaled, g), 6.25 * base, 1e-12 * base);
  auto shrunk = t;
  for (std::size_t k = 0; k < g.size(); ++k) shrunk.values[k] *= 0.5 + 0.4 * std::cos(g.node(k)[0]) * std::cos(g.node(k)[0]);
  EXPECT_LE(sobolev_norm_sq(shrunk, g), base);
}

TEST(SobolevNorm, RejectsNonHermitianAndWrongGrid) {
  const FrequencyGrid g(1, 5.0, 0.5, -2.0), h(1, 5.0, 0.25, -2.0);
  Values v(g.size(), 1.0);
  v[0] = {1.0, 0.3};
  EXPECT_THROW(sobolev_norm_sq(v, g), ArgumentError);
  EXPECT_THROW(sobolev_norm_sq(Values(3, 1.0), g), ArgumentError);
  EXPECT_THROW(sobolev_norm_sq(random_transform(h, 2), g), ArgumentError);
}

TEST(FilterError, WorkedValues) {
  const FrequencyGrid g(2, 6.0, 0.3, -2.5);
  const auto a = random_transform(g, 3);
  EXPECT_EQ(filter_error(a, a, g), 0.0);
  auto shifted = a;
  for (auto& v : shifted.values) v += 0.7;
  EXPECT_NEAR(filter_error(shifted, a, g), 0.7 * std::sqrt(g.measure_mass()), 1e-12);
  const FrequencyGrid other(2, 6.0, 0.2, -2.5);
  EXPECT_THROW(filter_error(a, random_transform(other, 3), g), ArgumentError);
}

TEST(FilterError, SymmetricTriangleAndConjugation) {
  const FrequencyGrid g(1, 10.0, 0.05, -2.0);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto a = random_transform(g, 10 + s), b = random_transform(g, 100 + s), c = random_transform(g, 1000 + s);
    EXPECT_NEAR(filter_error(a, b, g), filter_error(b, a, g), 1e-14);
    EXPECT_LE(filter_error(a, c, g), filter_error(a, b, g) + filter_error(b, c, g) + 1e-14);
    auto ca = a, cb = b;
    for (std::size_t k = 0; k < g.size(); ++k) {
      ca.values[k] = a.values[g.mirror(k)];
      cb.values[k] = b.values[g.mirror(k)];
    }
    EXPECT_NEAR(filter_error(ca, cb, g), filter_error(a, b, g), 1e-12);
  }
}

TEST(RateFit, ExactAndSynthetic) {
  std::vector<std::pair<double, double>> exact, flat, jitter;
  CounterRng rng(9);
  for (double n : {100.0, 400.0, 1600.0, 6400.0}) {
    exact.emplace_back(n, 1.0 / std::sqrt(n));
    flat.emplace_back(n, 0.3);
    jitter.emplace_back(n, 3.0 / std::sqrt(n) * (1.0 + 0.01 * (uniform01(rng) - 0.5)));
  }
  const auto e = rate_fit(exact);
  EXPECT_NEAR(e.slope, -0.5, 1e-12);
  EXPECT_NEAR(e.intercept, 0.0, 1e-12);
  EXPECT_NEAR(e.residual, 0.0, 1e-12);
  EXPECT_NEAR(rate_fit(flat).slope, 0.0, 1e-15);
  const auto j = rate_fit(jitter);
  EXPECT_GE(j.slope, -0.55);
  EXPECT_LE(j.slope, -0.45);
  EXPECT_LE(j.ci_low, j.slope);
  EXPECT_GE(j.ci_high, j.slope);
}

TEST(RateFit, Preconditions) {
  EXPECT_THROW(rate_fit({{1.0, 1.0}, {2.0, 1.0}}), ArgumentError);
  EXPECT_THROW(rate_fit({{1.0, 1.0}, {2.0, 0.0}, {3.0, 1.0}}), ArgumentError);
  EXPECT_THROW(rate_fit({{1.0, 1.0}, {-2.0, 1.0}, {3.0, 1.0}}), ArgumentError);
  EXPECT_THROW(rate_fit({{2.0, 1.0}, {2.0, 0.5}, {2.0, 0.7}}), ArgumentError);
}

TEST(Normalized, DividesByMass) {
  const FrequencyGrid g(1, 5.0, 0.5, -2.0);
  auto t = random_transform(g, 4);
  const auto n = normalized(t, 2.0);
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_EQ(n.values[k], t.values[k] / 2.0);
  EXPECT_THROW(normalized(t, 0.0), ArgumentError);
}

}  // namespace
}  // namespace bpf
