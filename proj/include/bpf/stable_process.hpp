#pragma once

// Multivariate Levy-stable processes with a finite atomic spectral measure.
//
// Sign convention: characteristic_exponent(theta) is l(theta) with
//   E exp(i theta'(X_t - X_s)) = exp((t - s) l(theta)),
// and for alpha != 1
//   l(theta) = -sum_j w_j |theta'z_j|^alpha (1 - i sign(theta'z_j) tan(alpha pi / 2)).
// Fourier transforms of measures elsewhere in the library use the kernel
// e^{-i theta'x}; the matching exponent is transform_exponent(theta) = l(-theta).

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bpf/errors.hpp"
#include "bpf/rng.hpp"

namespace bpf {

using Vector = std::vector<double>;
using Complex = std::complex<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

struct SpectralAtom {
  Vector direction;
  double weight = 0.0;
};

// Finite atomic measure on the unit sphere of R^d.
class SpectralMeasure {
 public:
  SpectralMeasure() = default;

  SpectralMeasure(std::size_t dimension, std::vector<SpectralAtom> atoms)
      : dimension_(dimension), atoms_(std::move(atoms)) {
    if (dimension_ == 0) throw ParameterError("spectral measure: dimension must be >= 1");
    if (atoms_.empty()) throw ParameterError("spectral measure: at least one atom required");
    for (const auto& a : atoms_) {
      if (a.direction.size() != dimension_)
        throw ParameterError("spectral measure: atom direction has wrong dimension");
      const double norm = std::sqrt(dot(a.direction, a.direction));
      if (!(std::abs(norm - 1.0) <= 1e-12))
        throw ParameterError("spectral measure: atom direction is not a unit vector");
      if (!(a.weight > 0.0) || !std::isfinite(a.weight))
        throw ParameterError("spectral measure: atom weight must be positive and finite");
    }
  }

  // Single atom at +e_1 in one dimension.
  static SpectralMeasure unit_atom(double weight = 1.0) {
    return SpectralMeasure(1, {{{1.0}, weight}});
  }

  std::size_t dimension() const noexcept { return dimension_; }
  const std::vector<SpectralAtom>& atoms() const noexcept { return atoms_; }

  double total_mass() const noexcept {
    double s = 0.0;
    for (const auto& a : atoms_) s += a.weight;
    return s;
  }

  // Integral of |theta'z|^p against the measure.
  double abs_moment(std::span<const double> theta, double p) const {
    double s = 0.0;
    for (const auto& a : atoms_) {
      const double u = std::abs(dot(theta, a.direction));
      if (u > 0.0) s += a.weight * std::pow(u, p);
    }
    return s;
  }

 private:
  std::size_t dimension_ = 0;
  std::vector<SpectralAtom> atoms_;
};

struct PointMass {
  Vector location;
};

struct ProductGaussian {
  Vector mean;
  Vector stddev;
};

struct ProductUniform {
  Vector lower;
  Vector upper;
};

// Law of X_0.
class InitialLaw {
 public:
  using Variant = std::variant<PointMass, ProductGaussian, ProductUniform>;

  InitialLaw() : law_(PointMass{{0.0}}) {}
  InitialLaw(Variant law) : law_(std::move(law)) { validate(); }  // NOLINT

  const Variant& variant() const noexcept { return law_; }

  std::size_t dimension() const {
    return std::visit(
        [](const auto& l) -> std::size_t {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, PointMass>) return l.location.size();
          else if constexpr (std::is_same_v<T, ProductGaussian>) return l.mean.size();
          else return l.lower.size();
        },
        law_);
  }

  std::string kind() const {
    switch (law_.index()) {
      case 0: return "point";
      case 1: return "gaussian";
      default: return "uniform";
    }
  }

  Vector mean() const {
    return std::visit(
        [](const auto& l) -> Vector {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, PointMass>) return l.location;
          else if constexpr (std::is_same_v<T, ProductGaussian>) return l.mean;
          else {
            Vector m(l.lower.size());
            for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (l.lower[i] + l.upper[i]);
            return m;
          }
        },
        law_);
  }

  template <class Rng>
  void sample(Rng& rng, std::span<double> out) const {
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          for (std::size_t i = 0; i < out.size(); ++i) {
            if constexpr (std::is_same_v<T, PointMass>) out[i] = l.location[i];
            else if constexpr (std::is_same_v<T, ProductGaussian>)
              out[i] = l.mean[i] + l.stddev[i] * standard_normal(rng);
            else out[i] = l.lower[i] + (l.upper[i] - l.lower[i]) * uniform01(rng);
          }
        },
        law_);
  }

  // Probability of the box prod_i [lo_i, hi_i).
  double box_probability(std::span<const double> lo, std::span<const double> hi) const {
    return std::visit(
        [&](const auto& l) -> double {
          using T = std::decay_t<decltype(l)>;
          double p = 1.0;
          for (std::size_t i = 0; i < lo.size(); ++i) {
            if constexpr (std::is_same_v<T, PointMass>) {
              p *= (l.location[i] >= lo[i] && l.location[i] < hi[i]) ? 1.0 : 0.0;
            } else if constexpr (std::is_same_v<T, ProductGaussian>) {
              const double s = l.stddev[i] * std::numbers::sqrt2;
              p *= 0.5 * (std::erfc(-(hi[i] - l.mean[i]) / s) - std::erfc(-(lo[i] - l.mean[i]) / s));
            } else {
              const double a = std::max(lo[i], l.lower[i]);
              const double b = std::min(hi[i], l.upper[i]);
              p *= b > a ? (b - a) / (l.upper[i] - l.lower[i]) : 0.0;
            }
          }
          return p;
        },
        law_);
  }

  // Lebesgue density at x (not defined for point masses; returns 0).
  double density(std::span<const double> x) const {
    return std::visit(
        [&](const auto& l) -> double {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, PointMass>) {
            return 0.0;
          } else if constexpr (std::is_same_v<T, ProductGaussian>) {
            double d = 1.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
              const double z = (x[i] - l.mean[i]) / l.stddev[i];
              d *= std::exp(-0.5 * z * z) / (l.stddev[i] * std::sqrt(2.0 * std::numbers::pi));
            }
            return d;
          } else {
            double d = 1.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
              if (x[i] < l.lower[i] || x[i] >= l.upper[i]) return 0.0;
              d /= (l.upper[i] - l.lower[i]);
            }
            return d;
          }
        },
        law_);
  }

 private:
  void validate() const {
    std::visit(
        [](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, PointMass>) {
            if (l.location.empty()) throw ParameterError("initial law: empty location");
          } else if constexpr (std::is_same_v<T, ProductGaussian>) {
            if (l.mean.empty() || l.mean.size() != l.stddev.size())
              throw ParameterError("initial law: gaussian mean/stddev size mismatch");
            for (double s : l.stddev)
              if (!(s > 0.0)) throw ParameterError("initial law: gaussian stddev must be positive");
          } else {
            if (l.lower.empty() || l.lower.size() != l.upper.size())
              throw ParameterError("initial law: uniform bounds size mismatch");
            for (std::size_t i = 0; i < l.lower.size(); ++i)
              if (!(l.upper[i] > l.lower[i]))
                throw ParameterError("initial law: uniform upper must exceed lower");
          }
        },
        law_);
  }

  Variant law_;
};

class SignalModel {
 public:
  SignalModel() = default;

  SignalModel(double alpha, SpectralMeasure gamma, InitialLaw initial)
      : alpha_(alpha), gamma_(std::move(gamma)), initial_(std::move(initial)) {
    if (!(alpha_ > 0.0 && alpha_ <= 2.0)) throw ParameterError("signal: alpha must lie in (0, 2]");
    if (initial_.dimension() != gamma_.dimension())
      throw ParameterError("signal: initial law dimension differs from spectral measure dimension");
  }

  double alpha() const noexcept { return alpha_; }
  const SpectralMeasure& spectral_measure() const noexcept { return gamma_; }
  const InitialLaw& initial_law() const noexcept { return initial_; }
  std::size_t dimension() const noexcept { return gamma_.dimension(); }

 private:
  double alpha_ = 2.0;
  SpectralMeasure gamma_;
  InitialLaw initial_;
};

inline bool is_cauchy_index(double alpha) { return alpha == 1.0; }

inline Complex characteristic_exponent(std::span<const double> theta, const SignalModel& model) {
  const double alpha = model.alpha();
  Complex sum{0.0, 0.0};
  if (is_cauchy_index(alpha)) {
    for (const auto& a : model.spectral_measure().atoms()) {
      const double u = dot(theta, a.direction);
      const double au = std::abs(u);
      if (au == 0.0) continue;
      sum -= a.weight * au * Complex(1.0, 2.0 / std::numbers::pi * sign(u) * std::log(au));
    }
    return sum;
  }
  // tan(pi) evaluates to ~1e-16; alpha = 2 is the Gaussian case with no skew.
  const double skew = alpha == 2.0 ? 0.0 : std::tan(alpha * std::numbers::pi / 2.0);
  for (const auto& a : model.spectral_measure().atoms()) {
    const double u = dot(theta, a.direction);
    const double au = std::abs(u);
    if (au == 0.0) continue;
    sum -= a.weight * std::pow(au, alpha) * Complex(1.0, -sign(u) * skew);
  }
  return sum;
}

// Exponent of E e^{-i theta'(X_t - X_s)} per unit time; the eigenvalue of the
// generator on e_{-theta}.
inline Complex transform_exponent(std::span<const double> theta, const SignalModel& model) {
  return std::conj(characteristic_exponent(theta, model));
}

// Totally skewed (beta = 1) unit-scale stable variate, Chambers-Mallows-Stuck.
// CF exp(-|u|^a (1 - i sign(u) tan(a pi/2))) for a != 1 and
// exp(-|u| (1 + (2i/pi) sign(u) ln|u|)) for a = 1; a = 2 gives N(0, 2).
template <class Rng>
double sample_standard_stable_1d(double alpha, Rng& rng) {
  if (!(alpha > 0.0 && alpha <= 2.0))
    throw ParameterError("sample_standard_stable_1d: alpha must lie in (0, 2]");
  constexpr double half_pi = std::numbers::pi / 2.0;
  const double v = std::numbers::pi * (uniform_open01(rng) - 0.5);
  const double w = standard_exponential(rng);
  if (alpha == 2.0) return 2.0 * std::sin(v) * std::sqrt(w);
  if (is_cauchy_index(alpha)) {
    const double a = half_pi + v;
    return (a * std::tan(v) - std::log(half_pi * w * std::cos(v) / a)) / half_pi;
  }
  const double t = std::tan(alpha * half_pi);
  const double b = std::atan(t) / alpha;
  const double s = std::pow(1.0 + t * t, 1.0 / (2.0 * alpha));
  const double av = alpha * (v + b);
  const double c = std::max(std::cos(v - av), 0.0);
  return s * std::sin(av) / std::pow(std::cos(v), 1.0 / alpha) * std::pow(c / w, (1.0 - alpha) / alpha);
}

// Exact increment over a fixed duration: X_{s+dt} - X_s = sum_j (c_j W_j + d_j) z_j
// with c_j = (dt w_j)^{1/alpha} and d_j = (2/pi) c_j ln c_j when alpha = 1.
class IncrementSampler {
 public:
  IncrementSampler(const SignalModel& model, double dt) : alpha_(model.alpha()), dim_(model.dimension()) {
    if (!(dt > 0.0)) throw ArgumentError("increment sampler: dt must be positive");
    for (const auto& a : model.spectral_measure().atoms()) {
      const double c = std::pow(dt * a.weight, 1.0 / alpha_);
      const double drift = is_cauchy_index(alpha_) ? 2.0 / std::numbers::pi * c * std::log(c) : 0.0;
      scales_.push_back(c);
      drifts_.push_back(drift);
      directions_.push_back(a.direction);
    }
  }

  std::size_t dimension() const noexcept { return dim_; }

  template <class Rng>
  void draw(Rng& rng, std::span<double> out) const {
    for (auto& o : out) o = 0.0;
    for (std::size_t j = 0; j < scales_.size(); ++j) {
      const double mag = scales_[j] * sample_standard_stable_1d(alpha_, rng) + drifts_[j];
      for (std::size_t i = 0; i < dim_; ++i) out[i] += mag * directions_[j][i];
    }
  }

 private:
  double alpha_;
  std::size_t dim_;
  std::vector<double> scales_;
  std::vector<double> drifts_;
  std::vector<Vector> directions_;
};

template <class Rng>
Vector sample_increment(const SignalModel& model, double dt, Rng& rng) {
  Vector out(model.dimension());
  IncrementSampler(model, dt).draw(rng, out);
  return out;
}

// (1/N) sum_j exp(-i theta'x_j).
inline Complex empirical_cf(const std::vector<Vector>& samples, std::span<const double> theta) {
  if (samples.empty()) throw ArgumentError("empirical_cf: empty sample list");
  double re = 0.0, im = 0.0;
  for (const auto& x : samples) {
    const double phase = dot(theta, x);
    re += std::cos(phase);
    im -= std::sin(phase);
  }
  const double n = static_cast<double>(samples.size());
  return {re / n, im / n};
}

inline Complex empirical_cf(std::span<const double> samples, double theta) {
  if (samples.empty()) throw ArgumentError("empirical_cf: empty sample list");
  double re = 0.0, im = 0.0;
  for (double x : samples) {
    re += std::cos(theta * x);
    im -= std::sin(theta * x);
  }
  const double n = static_cast<double>(samples.size());
  return {re / n, im / n};
}

struct QuadraticVariationEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::vector<double> per_path;
};

// Averages sum_j |e_{-theta}(Z_{tau_j}) - e_{-theta}(Z_{tau_{j-1}})|^2 over
// independent paths on a uniform partition of [0, t]; the limit is
// 2 t int |theta'z|^alpha Gamma(dz).
inline QuadraticVariationEstimate quadratic_variation_estimate(const SignalModel& model,
                                                              std::span<const double> theta, double t,
                                                              std::size_t partition_count,
                                                              std::size_t replication_count,
                                                              const StreamFactory& streams) {
  if (!(t > 0.0)) throw ArgumentError("quadratic_variation_estimate: t must be positive");
  if (partition_count < 100) throw ArgumentError("quadratic_variation_estimate: partition_count must be >= 100");
  if (replication_count < 1) throw ArgumentError("quadratic_variation_estimate: replication_count must be >= 1");
  const double dt = t / static_cast<double>(partition_count);
  const IncrementSampler sampler(model, dt);
  QuadraticVariationEstimate est;
  est.per_path.resize(replication_count);
  Vector dz(model.dimension());
  for (std::size_t r = 0; r < replication_count; ++r) {
    auto rng = streams.stream(StreamDomain::signal_path, r);
    double qv = 0.0;
    for (std::size_t j = 0; j < partition_count; ++j) {
      sampler.draw(rng, dz);
      const double s = std::sin(0.5 * dot(theta, dz));
      qv += 4.0 * s * s;
    }
    est.per_path[r] = qv;
  }
  double sum = 0.0;
  for (double v : est.per_path) sum += v;
  est.mean = sum / static_cast<double>(replication_count);
  if (replication_count > 1) {
    double ss = 0.0;
    for (double v : est.per_path) ss += (v - est.mean) * (v - est.mean);
    est.standard_error = std::sqrt(ss / static_cast<double>(replication_count - 1) /
                                   static_cast<double>(replication_count));
  }
  return est;
}

}  // namespace bpf
