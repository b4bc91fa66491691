#pragma once

// Sobolev distances ||lambda||_gamma^2 = int |hat lambda(theta)|^2 (1 + |theta|^2)^gamma d theta,
// evaluated by midpoint quadrature on a truncated FrequencyGrid, and
// log-log rate fitting.

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <complex>
#include <cstddef>
#include <utility>
#include <vector>

#include "bpf/errors.hpp"
#include "bpf/frequency_grid.hpp"

namespace bpf {

inline void check_hermitian(const std::vector<std::complex<double>>& values, const FrequencyGrid& grid,
                            double tolerance = 1e-8) {
  double scale = 0.0;
  for (const auto& v : values) scale = std::max(scale, std::abs(v));
  for (std::size_t k = 0; k < values.size(); ++k) {
    const auto diff = std::abs(values[grid.mirror(k)] - std::conj(values[k]));
    if (diff > tolerance * std::max(1.0, scale))
      throw ArgumentError("sobolev_norm_sq: transform values are not Hermitian-consistent");
  }
}

inline double sobolev_norm_sq(const std::vector<std::complex<double>>& values, const FrequencyGrid& grid) {
  if (values.size() != grid.size()) throw ArgumentError("sobolev_norm_sq: value count differs from grid size");
  check_hermitian(values, grid);
  const auto w = grid.weights();
  double s = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) s += w[k] * std::norm(values[k]);
  return s;
}

inline double sobolev_norm_sq(const SpectralTransform& t, const FrequencyGrid& grid) {
  if (t.grid_fingerprint != grid.fingerprint()) throw ArgumentError("sobolev_norm_sq: transform from another grid");
  return sobolev_norm_sq(t.values, grid);
}

// ||mu^n - mu||_gamma.
inline double filter_error(const SpectralTransform& particle, const SpectralTransform& oracle,
                           const FrequencyGrid& grid) {
  if (particle.grid_fingerprint != oracle.grid_fingerprint || particle.grid_fingerprint != grid.fingerprint() ||
      particle.values.size() != oracle.values.size())
    throw ArgumentError("filter_error: transforms evaluated on different grids");
  std::vector<std::complex<double>> diff(particle.values.size());
  for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = particle.values[k] - oracle.values[k];
  return std::sqrt(sobolev_norm_sq(diff, grid));
}

// Transform of lambda / <lambda, 1>. Midpoint grids have no node at 0, so
// the total mass is passed in.
inline SpectralTransform normalized(SpectralTransform t, double mass) {
  if (!(mass > 0.0)) throw ArgumentError("normalized: mass must be positive");
  for (auto& v : t.values) v /= mass;
  return t;
}

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;  // root-mean-square residual in log space
  double slope_se = 0.0;
  double ci_low = 0.0;    // 95% t-interval
  double ci_high = 0.0;
};

// Ordinary least squares of log(error) on log(n).
inline RateFit rate_fit(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.size() < 3) throw ArgumentError("rate_fit: need at least 3 pairs");
  const double m = static_cast<double>(pairs.size());
  double sx = 0, sy = 0;
  for (const auto& [n, e] : pairs) {
    if (!(n > 0.0) || !(e > 0.0)) throw ArgumentError("rate_fit: values must be positive");
    sx += std::log(n);
    sy += std::log(e);
  }
  const double mx = sx / m, my = sy / m;
  double sxx = 0, sxy = 0;
  for (const auto& [n, e] : pairs) {
    const double dx = std::log(n) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(e) - my);
  }
  if (!(sxx > 0.0)) throw ArgumentError("rate_fit: need at least two distinct n");
  RateFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0;
  for (const auto& [n, e] : pairs) {
    const double r = std::log(e) - (f.intercept + f.slope * std::log(n));
    rss += r * r;
  }
  f.residual = std::sqrt(rss / m);
  f.slope_se = std::sqrt(rss / (m - 2.0) / sxx);
  const boost::math::students_t dist(m - 2.0);
  const double tq = boost::math::quantile(boost::math::complement(dist, 0.025));
  f.ci_low = f.slope - tq * f.slope_se;
  f.ci_high = f.slope + tq * f.slope_se;
  return f;
}

}  // namespace bpf
