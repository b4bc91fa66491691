#pragma once

// Truncated tensor-product midpoint grid in frequency space, weighted by
// (1 + |theta|^2)^gamma, together with a fast evaluator for Fourier
// transforms of weighted point sets.

#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "bpf/errors.hpp"
#include "bpf/rng.hpp"

namespace bpf {

class FrequencyGrid {
 public:
  FrequencyGrid(std::size_t dimension, double cutoff, double spacing, double gamma)
      : dim_(dimension), cutoff_(cutoff), spacing_(spacing), gamma_(gamma) {
    if (dim_ < 1 || dim_ > 2) throw ArgumentError("frequency grid: only dimensions 1 and 2 are supported");
    if (!(gamma_ < -0.5 * static_cast<double>(dim_)))
      throw ArgumentError("frequency grid: gamma must be < -d/2");
    if (!(cutoff_ > 0.0) || !(spacing_ > 0.0) || spacing_ > cutoff_)
      throw ArgumentError("frequency grid: need 0 < spacing <= cutoff");
    per_axis_ = static_cast<std::size_t>(std::llround(2.0 * cutoff_ / spacing_));
    if (per_axis_ < 2) per_axis_ = 2;
    if (per_axis_ % 2 == 1) ++per_axis_;
    const double half = 0.5 * static_cast<double>(per_axis_) * spacing_;
    axis_.resize(per_axis_);
    for (std::size_t m = 0; m < per_axis_; ++m)
      axis_[m] = -half + (static_cast<double>(m) + 0.5) * spacing_;
    const double cell = std::pow(spacing_, static_cast<double>(dim_));
    const std::size_t total = dim_ == 1 ? per_axis_ : per_axis_ * per_axis_;
    if (total > (std::size_t{1} << 22)) throw ArgumentError("frequency grid: too many nodes, use a coarser spacing");
    for (std::size_t flat = 0; flat < total; ++flat) {
      const double r2 = radius_sq(flat);
      if (r2 > cutoff_ * cutoff_) continue;
      flat_.push_back(flat);
      weights_.push_back(cell * std::pow(1.0 + r2, gamma_));
    }
    std::vector<std::size_t> pos(total, SIZE_MAX);
    for (std::size_t k = 0; k < flat_.size(); ++k) pos[flat_[k]] = k;
    mirror_.resize(flat_.size());
    for (std::size_t k = 0; k < flat_.size(); ++k) mirror_[k] = pos[mirror_flat(flat_[k])];
    fingerprint_ = hash_key(0x5AFEULL, {dim_, std::bit_cast<std::uint64_t>(cutoff_),
                                        std::bit_cast<std::uint64_t>(spacing_), std::bit_cast<std::uint64_t>(gamma_)});
  }

  // Default metric grid: gamma = -(d/2 + 2 alpha) - 0.5 with cutoff 40 and
  // spacing 0.05 in one dimension; cutoff 20 and spacing 0.25 in two.
  static FrequencyGrid defaults(std::size_t dimension, double alpha) {
    const double gamma = -(0.5 * static_cast<double>(dimension) + 2.0 * alpha) - 0.5;
    if (dimension == 1) return FrequencyGrid(1, 40.0, 0.05, gamma);
    return FrequencyGrid(dimension, 20.0, 0.25, gamma);
  }

  std::size_t dimension() const noexcept { return dim_; }
  double cutoff() const noexcept { return cutoff_; }
  double spacing() const noexcept { return spacing_; }
  double gamma() const noexcept { return gamma_; }
  std::size_t size() const noexcept { return flat_.size(); }
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }
  std::span<const double> weights() const noexcept { return weights_; }
  std::span<const double> axis_nodes() const noexcept { return axis_; }

  // Index of the node at -theta_k.
  std::size_t mirror(std::size_t k) const noexcept { return mirror_[k]; }

  std::vector<double> node(std::size_t k) const {
    const std::size_t f = flat_[k];
    if (dim_ == 1) return {axis_[f]};
    return {axis_[f / per_axis_], axis_[f % per_axis_]};
  }

  // Total quadrature mass of (1 + |theta|^2)^gamma d theta over the grid.
  double measure_mass() const noexcept {
    double s = 0.0;
    for (double w : weights_) s += w;
    return s;
  }

  // Upper bound on the neglected mass outside radius R:
  // |S^{d-1}| R^{d + 2 gamma} / (-(d + 2 gamma)).
  double tail_bound() const noexcept {
    const double d = static_cast<double>(dim_);
    const double sphere = dim_ == 1 ? 2.0 : 2.0 * std::numbers::pi;
    return sphere * std::pow(cutoff_, d + 2.0 * gamma_) / (-(d + 2.0 * gamma_));
  }

  // sum_i w_i exp(-i theta_k' x_i) for every node k. Point coordinates are
  // given structure-of-arrays (coords[axis][i]). Per-axis phases are advanced
  // by complex rotation along each axis.
  std::vector<std::complex<double>> transform(const std::vector<std::vector<double>>& coords,
                                              std::span<const double> point_weights,
                                              double common_weight = 1.0) const {
    if (coords.size() != dim_) throw ArgumentError("frequency grid: point dimension mismatch");
    const std::size_t count = coords.empty() ? 0 : coords[0].size();
    std::vector<double> re(total_nodes(), 0.0), im(total_nodes(), 0.0);
    std::vector<std::complex<double>> phase0(per_axis_), phase1(per_axis_);
    for (std::size_t i = 0; i < count; ++i) {
      const double w = common_weight * (point_weights.empty() ? 1.0 : point_weights[i]);
      if (w == 0.0) continue;
      fill_axis_phases(coords[0][i], phase0);
      if (dim_ == 1) {
        for (std::size_t m = 0; m < per_axis_; ++m) {
          re[m] += w * phase0[m].real();
          im[m] += w * phase0[m].imag();
        }
      } else {
        fill_axis_phases(coords[1][i], phase1);
        for (std::size_t a = 0; a < per_axis_; ++a) {
          const std::complex<double> pa = w * phase0[a];
          double* rrow = &re[a * per_axis_];
          double* irow = &im[a * per_axis_];
          for (std::size_t b = 0; b < per_axis_; ++b) {
            const std::complex<double> p = pa * phase1[b];
            rrow[b] += p.real();
            irow[b] += p.imag();
          }
        }
      }
    }
    std::vector<std::complex<double>> out(flat_.size());
    for (std::size_t k = 0; k < flat_.size(); ++k) out[k] = {re[flat_[k]], im[flat_[k]]};
    return out;
  }

 private:
  std::size_t total_nodes() const noexcept { return dim_ == 1 ? per_axis_ : per_axis_ * per_axis_; }

  double radius_sq(std::size_t flat) const noexcept {
    if (dim_ == 1) return axis_[flat] * axis_[flat];
    const double a = axis_[flat / per_axis_], b = axis_[flat % per_axis_];
    return a * a + b * b;
  }

  std::size_t mirror_flat(std::size_t flat) const noexcept {
    if (dim_ == 1) return per_axis_ - 1 - flat;
    return (per_axis_ - 1 - flat / per_axis_) * per_axis_ + (per_axis_ - 1 - flat % per_axis_);
  }

  // exp(-i theta_m x) for all axis nodes; exact sincos every 64 steps.
  void fill_axis_phases(double x, std::vector<std::complex<double>>& out) const {
    const std::complex<double> step = std::polar(1.0, -spacing_ * x);
    for (std::size_t m = 0; m < per_axis_; ++m) {
      if (m % 64 == 0) out[m] = std::polar(1.0, -axis_[m] * x);
      else out[m] = out[m - 1] * step;
    }
  }

  std::size_t dim_;
  double cutoff_;
  double spacing_;
  double gamma_;
  std::size_t per_axis_ = 0;
  std::vector<double> axis_;
  std::vector<std::size_t> flat_;
  std::vector<double> weights_;
  std::vector<std::size_t> mirror_;
  std::uint64_t fingerprint_ = 0;
};

// Transform values tagged with the grid they were evaluated on.
struct SpectralTransform {
  std::uint64_t grid_fingerprint = 0;
  std::vector<std::complex<double>> values;
};

}  // namespace bpf
