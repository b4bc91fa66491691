#include "bpf/reference_filter.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bpf/spectral_metrics.hpp"

namespace bpf {
namespace {

SignalModel signal_1d(double alpha, double weight, InitialLaw init) {
  return SignalModel(alpha, SpectralMeasure::unit_atom(weight), std::move(init));
}

InitialLaw std_gaussian() { return InitialLaw(ProductGaussian{{0.0}, {1.0}}); }

GridParams params(std::size_t points = 512, double halfwidth = 10.0) {
  GridParams p;
  p.points_per_axis = points;
  p.halfwidth = halfwidth;
  return p;
}

double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TEST(BuildGrid, PointMassOccupiesOneCell) {
  const auto g = build_grid(signal_1d(2.0, 0.5, InitialLaw(PointMass{{0.0}})), 0.1, params());
  std::size_t nonzero = 0, where = 0;
  for (std::size_t f = 0; f < g.size(); ++f)
    if (g.density()[f] != 0.0) ++nonzero, where = f;
  EXPECT_EQ(nonzero, 1u);
  EXPECT_EQ(g.node(where)[0], 0.0);
  EXPECT_NEAR(g.total_mass(), 1.0, 1e-15);
}

TEST(BuildGrid, GaussianNormalizedAndMultiplierAtZero) {
  const auto g = build_grid(signal_1d(1.5, 0.5, std_gaussian()), 0.1, params());
  EXPECT_NEAR(g.total_mass(), 1.0, 1e-9);
  EXPECT_EQ(g.multiplier()[0], Complex(1.0, 0.0));
  EXPECT_EQ(g.frequency(0)[0], 0.0);
}

TEST(BuildGrid, RejectsSmallDomainAndBadShapes) {
  EXPECT_THROW(build_grid(signal_1d(2.0, 0.5, std_gaussian()), 0.1, params(512, 3.0)), GridError);
  EXPECT_THROW(build_grid(signal_1d(2.0, 0.5, std_gaussian()), 0.1, params(500)), ArgumentError);
  EXPECT_THROW(build_grid(signal_1d(2.0, 0.5, std_gaussian()), 0.1, params(32)), ArgumentError);
}

TEST(Predict, ConservesMass) {
  for (double alpha : {1.5, 2.0}) {
    auto g = build_grid(signal_1d(alpha, 0.5, std_gaussian()), 0.1, params());
    for (int k = 0; k < 10; ++k) {
      g.predict();
      EXPECT_LT(g.diagnostics().mass_drift_last, 1e-9);
    }
  }
}

TEST(Predict, GaussianKernelFromPointMass) {
  const double eps = 0.5, w = 0.5;
  auto g = build_grid(signal_1d(2.0, w, InitialLaw(PointMass{{0.0}})), eps, params());
  g.predict();
  const double var = 2.0 * eps * w;
  double peak = 0.0, err = 0.0;
  for (std::size_t f = 0; f < g.size(); ++f) {
    const double x = g.node(f)[0];
    const double want = std::exp(-x * x / (2 * var)) / std::sqrt(2 * std::numbers::pi * var);
    peak = std::max(peak, want);
    err = std::max(err, std::abs(g.density()[f] - want));
  }
  EXPECT_LT(err / peak, 1e-3);
}

TEST(Predict, SemigroupIdentity) {
  const auto s = signal_1d(2.0, 0.5, std_gaussian());
  auto two = build_grid(s, 0.1, params());
  two.predict();
  two.predict();
  auto one = build_grid(s, 0.2, params());
  one.predict();
  EXPECT_LT(sup_diff(two.density(), one.density()), 1e-10);
}

TEST(Predict, TinyEpsilonIsIdentity) {
  auto g = build_grid(signal_1d(1.5, 0.5, std_gaussian()), 1e-300, params());
  const auto before = g.density();
  g.predict();
  EXPECT_LT(sup_diff(before, g.density()), 1e-14);
}

TEST(Update, ZeroSensorIsIdentity) {
  auto g = build_grid(signal_1d(2.0, 0.5, std_gaussian()), 0.1, params());
  const auto before = g.density();
  const double dy[] = {0.7};
  g.update(dy, ObservationModel(ZeroSensor{}, 1, 1, 0.1));
  EXPECT_EQ(before, g.density());
}

TEST(Update, ConstantLikelihoodScalesUniformly) {
  auto g = build_grid(signal_1d(2.0, 0.5, InitialLaw(ProductUniform{{-2.0}, {2.0}})), 0.1, params());
  const auto mean_before = g.normalized_mean();
  const auto before = g.density();
  const ObservationModel obs(ClippedLinear{{{0.0}}, {0.8}, 5.0}, 1, 1, 0.1);
  const double dy[] = {0.3};
  const double factor = std::exp(0.3 * 0.8 - 0.05 * 0.64);
  g.update(dy, obs);
  for (std::size_t f = 0; f < g.size(); ++f) EXPECT_NEAR(g.density()[f], factor * before[f], 1e-14 * (1 + before[f]));
  EXPECT_NEAR(g.normalized_mean()[0], mean_before[0], 1e-14);
}

TEST(Update, SingleCellMassMultiplied) {
  auto g = build_grid(signal_1d(2.0, 0.5, InitialLaw(PointMass{{0.0}})), 0.1, params());
  const ObservationModel obs(GaussianBump{{0.5}, {{0.0}}, {1.0}}, 1, 1, 0.1);
  const double dy[] = {0.2};
  g.update(dy, obs);
  EXPECT_NEAR(g.total_mass(), 1.0914422644429517, 1e-14);
}

TEST(Update, LinearInDensity) {
  const ObservationModel obs(GaussianBump{{1.0}, {{0.5}}, {0.7}}, 1, 1, 0.1);
  const double dy[] = {0.4};
  auto a = build_grid(signal_1d(2.0, 0.5, std_gaussian()), 0.1, params());
  auto b = a;
  for (auto& v : b.density()) v *= 3.0;
  a.update(dy, obs);
  b.update(dy, obs);
  for (std::size_t f = 0; f < a.size(); ++f) EXPECT_DOUBLE_EQ(b.density()[f], 3.0 * a.density()[f]);
}

// DFT(p (1 + rho)) = DFT(p) + (1/N) DFT(rho) (*) DFT(p), with circular convolution.
TEST(Update, ConvolutionIdentityInFrequency) {
  const auto s = signal_1d(2.0, 0.5, std_gaussian());
  for (std::size_t dim : {1u, 2u}) {
    std::vector<GridAxis> axes(dim, GridAxis{0.0, 4.0, 64});
    const SignalModel sig = dim == 1 ? s
                                     : SignalModel(2.0, SpectralMeasure(2, {{{1.0, 0.0}, 0.5}}),
                                                   InitialLaw(ProductGaussian{{0.0, 0.0}, {1.0, 1.0}}));
    GridFilter g(sig, 0.1, axes, GridParams{});
    CounterRng rng(3);
    for (auto& v : g.density()) v = uniform01(rng);
    const auto pre = g.density();
    const ObservationModel obs =
        dim == 1 ? ObservationModel(GaussianBump{{1.0}, {{0.3}}, {0.8}}, 1, 1, 0.1)
                 : ObservationModel(GaussianBump{{1.0}, {{0.3, -0.2}}, {0.8}}, 2, 1, 0.1);
    const double dy[] = {0.5};
    std::vector<double> rho(g.size());
    for (std::size_t f = 0; f < g.size(); ++f) rho[f] = weight(g.node(f), dy, obs);
    g.update(dy, obs);

    const auto lhs = g.dft(g.density());
    const auto P = g.dft(pre);
    const auto R = g.dft(rho);
    const std::size_t n = 64, total = g.size();
    double scale = 0.0, err = 0.0;
    for (std::size_t k = 0; k < total; ++k) {
      Complex conv{0.0, 0.0};
      for (std::size_t m = 0; m < total; ++m) {
        std::size_t idx;
        if (dim == 1) {
          idx = (k + n - m) % n;
        } else {
          const std::size_t k0 = k / n, k1 = k % n, m0 = m / n, m1 = m % n;
          idx = ((k0 + n - m0) % n) * n + (k1 + n - m1) % n;
        }
        conv += R[m] * P[idx];
      }
      const Complex rhs = P[k] + conv / static_cast<double>(total);
      scale = std::max(scale, std::abs(lhs[k]));
      err = std::max(err, std::abs(lhs[k] - rhs));
    }
    EXPECT_LT(err / scale, 1e-8) << "dim " << dim;
  }
}

TEST(RunReference, NoSensorEvolvesTransformInClosedForm) {
  const double eps = 0.1;
  const ObservationModel zero(ZeroSensor{}, 1, 1, eps);
  ObservationRecord rec;
  rec.epsilon = eps;
  rec.increments.assign(10, Vector{0.0});
  {
    const auto s = signal_1d(2.0, 0.5, std_gaussian());
    const auto g0 = build_grid(s, eps, params());
    GridFilter g = g0;
    for (int k = 0; k < 10; ++k) g.predict();
    for (double th : {0.25, 0.5, 1.0, 2.0, 3.0}) {
      const double t[] = {th};
      const Complex want = g0.transform_at(t) * std::exp(10 * eps * transform_exponent(t, s));
      EXPECT_LT(std::abs(g.transform_at(t) - want), 1e-6) << th;
    }
    const auto run = run_reference(s, zero, rec, params());
    ASSERT_EQ(run.summaries.size(), 11u);
    for (const auto& sm : run.summaries) EXPECT_NEAR(sm.total_mass, 1.0, 1e-9);
  }
  {
    // On dual-grid frequencies the identity is exact even with heavy tails.
    const auto s = signal_1d(1.5, 0.5, std_gaussian());
    const auto g0 = build_grid(s, eps, params());
    GridFilter g = g0;
    for (int k = 0; k < 10; ++k) g.predict();
    for (std::size_t f : {1u, 3u, 10u, 40u}) {
      const auto t = g.frequency(f);
      const Complex want = g0.transform_at(t) * std::exp(10 * eps * transform_exponent(t, s));
      EXPECT_LT(std::abs(g.transform_at(t) - want), 1e-6) << t[0];
    }
  }
}

TEST(RunReference, EmptyRecordGivesInitialSummary) {
  const auto s = signal_1d(2.0, 0.5, std_gaussian());
  ObservationRecord rec;
  const FrequencyGrid fg(1, 5.0, 0.5, -3.0);
  const auto run = run_reference(s, ObservationModel(ZeroSensor{}, 1, 1, 0.1), rec, params(), &fg);
  ASSERT_EQ(run.summaries.size(), 1u);
  ASSERT_EQ(run.transforms.size(), 1u);
  EXPECT_NEAR(run.summaries[0].mean[0], 0.0, 1e-12);
  check_hermitian(run.transforms[0].values, fg);
}

TEST(RunReference, StrictModeEscalatesClamping) {
  auto p = params(64, 10.0);
  p.strict = true;
  p.clamp_warn_fraction = 1e-300;
  // A point mass on a coarse grid under a Cauchy-like kernel rings.
  auto g = build_grid(signal_1d(1.2, 1.0, InitialLaw(PointMass{{0.0}})), 0.01, p);
  EXPECT_THROW(g.predict(), GridError);
}

TEST(Kalman, HandComputedGain) {
  ObservationRecord rec;
  rec.epsilon = 1.0;
  rec.increments = {{2.0}};
  Eigen::MatrixXd h(1, 1), p0(1, 1), q(1, 1);
  h << 1.0;
  p0 << 1.0;
  q << 0.0;
  Eigen::VectorXd m0(1), b = Eigen::VectorXd::Zero(1);
  m0 << 0.0;
  const auto post = kalman_reference(rec, h, b, m0, p0, q);
  ASSERT_EQ(post.size(), 2u);
  EXPECT_NEAR(post[1].covariance(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(post[1].mean(0), 1.0, 1e-15);  // gain 1/2 times innovation 2
}

TEST(Kalman, NoChannelGrowsLinearly) {
  ObservationRecord rec;
  rec.epsilon = 0.1;
  rec.increments.assign(7, Vector{0.3});
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(1, 1), p0(1, 1), q(1, 1);
  p0 << 0.4;
  q << 1.5;
  Eigen::VectorXd m0(1), b = Eigen::VectorXd::Zero(1);
  m0 << 0.2;
  const auto post = kalman_reference(rec, h, b, m0, p0, q);
  for (std::size_t k = 0; k < post.size(); ++k) {
    EXPECT_NEAR(post[k].covariance(0, 0), 0.4 + k * 0.1 * 1.5, 1e-13);
    EXPECT_EQ(post[k].mean(0), 0.2);
  }
}

TEST(Kalman, CovarianceRateAndPreconditions) {
  const SignalModel s(2.0, SpectralMeasure(2, {{{1.0, 0.0}, 0.5}, {{0.6, 0.8}, 0.25}}),
                      InitialLaw(PointMass{{0.0, 0.0}}));
  const auto q = gaussian_covariance_rate(s);
  EXPECT_NEAR(q(0, 0), 1.0 + 0.5 * 0.36, 1e-15);
  EXPECT_NEAR(q(0, 1), 0.5 * 0.48, 1e-15);
  EXPECT_NEAR(q(1, 1), 0.5 * 0.64, 1e-15);
  EXPECT_THROW(gaussian_covariance_rate(signal_1d(1.5, 1.0, std_gaussian())), ParameterError);

  const auto s1 = signal_1d(2.0, 0.5, std_gaussian());
  const ObservationModel clip(ClippedLinear{{{1.0}}, {}, 0.1}, 1, 1, 0.1);
  const auto sc = simulate_scenario(s1, clip, 2.0, StreamFactory(1));
  EXPECT_THROW(kalman_reference(s1, clip, sc.record), DomainError);
  EXPECT_THROW(kalman_reference(s1, ObservationModel(GaussianBump{{1.0}, {{0.0}}, {1.0}}, 1, 1, 0.1), sc.record),
               ArgumentError);
}

// Grid and Kalman oracles on the same linear-Gaussian record.
TEST(Kalman, AgreesWithGridFilter) {
  for (const InitialLaw& init : {InitialLaw(PointMass{{0.0}}), std_gaussian()}) {
    const auto s = signal_1d(2.0, 0.5, init);
    const ObservationModel obs(ClippedLinear{{{1.0}}, {}, 1e6}, 1, 1, 0.1);
    const auto sc = simulate_scenario(s, obs, 2.0, StreamFactory(11));
    const auto kal = kalman_reference(s, obs, sc.record);
    const auto coarse = run_reference(s, obs, sc.record, params(512));
    const auto fine = run_reference(s, obs, sc.record, params(1024));
    for (std::size_t k = 1; k < kal.size(); ++k) {
      const double grid_err = std::max(std::abs(coarse.summaries[k].mean[0] - fine.summaries[k].mean[0]), 1e-10);
      EXPECT_LE(std::abs(coarse.summaries[k].mean[0] - kal[k].mean(0)), 3 * grid_err) << "epoch " << k;
    }
  }
}

}  // namespace
}  // namespace bpf
