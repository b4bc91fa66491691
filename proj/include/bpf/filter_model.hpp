#pragma once

// Observation channel dY_k = h(X_{t_k}) eps + (V_{t_k} - V_{t_{k-1}}), the
// likelihood weights it induces, and synthetic scenario generation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "bpf/errors.hpp"
#include "bpf/rng.hpp"
#include "bpf/stable_process.hpp"

namespace bpf {

// h_i(x) = a_i exp(-|x - c_i|^2 / (2 s_i^2)).
struct GaussianBump {
  Vector amplitude;
  std::vector<Vector> centers;
  Vector widths;
};

// h(x) = clamp(B x + b, -M, M), componentwise.
struct ClippedLinear {
  std::vector<Vector> matrix;  // d2 rows of length d1
  Vector offset;
  double bound = 1.0;
};

struct ZeroSensor {};

class SensorFunction {
 public:
  using Variant = std::variant<GaussianBump, ClippedLinear, ZeroSensor>;

  SensorFunction() : h_(ZeroSensor{}) {}
  SensorFunction(Variant h) : h_(std::move(h)) {}  // NOLINT
  template <class H>
    requires std::is_constructible_v<Variant, H>
  SensorFunction(H h) : h_(std::move(h)) {}  // NOLINT

  const Variant& variant() const noexcept { return h_; }

  std::string kind() const {
    switch (h_.index()) {
      case 0: return "gaussian_bump";
      case 1: return "clipped_linear";
      default: return "zero";
    }
  }

  bool is_zero() const noexcept { return std::holds_alternative<ZeroSensor>(h_); }

  void evaluate(std::span<const double> x, std::span<double> out) const {
    std::visit(
        [&](const auto& h) {
          using T = std::decay_t<decltype(h)>;
          if constexpr (std::is_same_v<T, GaussianBump>) {
            for (std::size_t i = 0; i < out.size(); ++i) {
              double r2 = 0.0;
              for (std::size_t j = 0; j < x.size(); ++j) {
                const double d = x[j] - h.centers[i][j];
                r2 += d * d;
              }
              out[i] = h.amplitude[i] * std::exp(-r2 / (2.0 * h.widths[i] * h.widths[i]));
            }
          } else if constexpr (std::is_same_v<T, ClippedLinear>) {
            for (std::size_t i = 0; i < out.size(); ++i) {
              const double v = dot(h.matrix[i], x) + (h.offset.empty() ? 0.0 : h.offset[i]);
              out[i] = std::clamp(v, -h.bound, h.bound);
            }
          } else {
            for (auto& o : out) o = 0.0;
          }
        },
        h_);
  }

  // Unclipped value of the linear channel exceeds the bound somewhere in the
  // i-th component.
  bool clipped_at(std::span<const double> x) const {
    if (const auto* h = std::get_if<ClippedLinear>(&h_)) {
      for (std::size_t i = 0; i < h->matrix.size(); ++i) {
        const double v = dot(h->matrix[i], x) + (h->offset.empty() ? 0.0 : h->offset[i]);
        if (std::abs(v) > h->bound) return true;
      }
    }
    return false;
  }

  // sup_x (h'h)(x).
  double sup_norm_hh() const {
    return std::visit(
        [](const auto& h) -> double {
          using T = std::decay_t<decltype(h)>;
          if constexpr (std::is_same_v<T, GaussianBump>) {
            double s = 0.0;
            for (double a : h.amplitude) s += a * a;
            return s;
          } else if constexpr (std::is_same_v<T, ClippedLinear>) {
            return static_cast<double>(h.matrix.size()) * h.bound * h.bound;
          } else {
            return 0.0;
          }
        },
        h_);
  }

 private:
  Variant h_;
};

class ObservationModel {
 public:
  ObservationModel() = default;

  ObservationModel(SensorFunction sensor, std::size_t signal_dim, std::size_t obs_dim, double epsilon)
      : sensor_(std::move(sensor)), d1_(signal_dim), d2_(obs_dim), epsilon_(epsilon) {
    if (!(epsilon_ > 0.0 && epsilon_ <= 1.0)) throw ParameterError("observation: epsilon must lie in (0, 1]");
    if (d2_ < 1) throw ParameterError("observation: dimension must be >= 1");
    std::visit(
        [&](const auto& h) {
          using T = std::decay_t<decltype(h)>;
          if constexpr (std::is_same_v<T, GaussianBump>) {
            if (h.amplitude.size() != d2_ || h.centers.size() != d2_ || h.widths.size() != d2_)
              throw ParameterError("observation: gaussian_bump needs one amplitude/center/width per component");
            for (const auto& c : h.centers)
              if (c.size() != d1_) throw ParameterError("observation: bump center has wrong dimension");
            for (double s : h.widths)
              if (!(s > 0.0)) throw ParameterError("observation: bump width must be positive");
          } else if constexpr (std::is_same_v<T, ClippedLinear>) {
            if (h.matrix.size() != d2_) throw ParameterError("observation: linear channel needs d2 rows");
            for (const auto& r : h.matrix)
              if (r.size() != d1_) throw ParameterError("observation: linear channel row has wrong length");
            if (!h.offset.empty() && h.offset.size() != d2_)
              throw ParameterError("observation: linear channel offset has wrong length");
            if (!(h.bound > 0.0) || !std::isfinite(h.bound))
              throw ParameterError("observation: clip bound must be positive and finite");
          }
        },
        sensor_.variant());
  }

  const SensorFunction& sensor() const noexcept { return sensor_; }
  std::size_t signal_dimension() const noexcept { return d1_; }
  std::size_t dimension() const noexcept { return d2_; }
  double epsilon() const noexcept { return epsilon_; }

  ObservationModel with_epsilon(double eps) const { return ObservationModel(sensor_, d1_, d2_, eps); }

 private:
  SensorFunction sensor_;
  std::size_t d1_ = 1;
  std::size_t d2_ = 1;
  double epsilon_ = 0.1;
};

struct ObservationRecord {
  double epsilon = 0.1;
  std::vector<Vector> increments;          // dY_k, k = 1..K
  std::optional<std::vector<Vector>> truth;  // X_{t_k}, k = 1..K

  std::size_t size() const noexcept { return increments.size(); }
};

struct Scenario {
  Vector initial_state;
  ObservationRecord record;
};

// floor(T / eps) with a relative guard so that T = K eps in decimal input
// yields K.
inline std::size_t observation_count(double horizon, double epsilon) {
  return static_cast<std::size_t>(std::floor(horizon / epsilon * (1.0 + 1e-12)));
}

inline Scenario simulate_scenario(const SignalModel& signal, const ObservationModel& obs, double horizon,
                                  const StreamFactory& streams) {
  if (!(horizon >= obs.epsilon() * (1.0 - 1e-12)))
    throw ArgumentError("simulate_scenario: horizon must be >= epsilon");
  if (obs.signal_dimension() != signal.dimension())
    throw ArgumentError("simulate_scenario: observation model and signal dimensions differ");
  const std::size_t k_max = observation_count(horizon, obs.epsilon());
  const double eps = obs.epsilon();
  const double sqrt_eps = std::sqrt(eps);
  const IncrementSampler sampler(signal, eps);

  Scenario sc;
  sc.initial_state.resize(signal.dimension());
  auto init_rng = streams.stream(StreamDomain::signal_path, 0);
  signal.initial_law().sample(init_rng, sc.initial_state);

  sc.record.epsilon = eps;
  sc.record.truth.emplace();
  Vector x = sc.initial_state, dx(signal.dimension()), hx(obs.dimension());
  for (std::size_t k = 1; k <= k_max; ++k) {
    auto path_rng = streams.stream(StreamDomain::signal_path, k);
    sampler.draw(path_rng, dx);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += dx[i];
    obs.sensor().evaluate(x, hx);
    auto noise_rng = streams.stream(StreamDomain::observation_noise, k);
    Vector dy(obs.dimension());
    for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = hx[i] * eps + sqrt_eps * standard_normal(noise_rng);
    sc.record.increments.push_back(std::move(dy));
    sc.record.truth->push_back(x);
  }
  return sc;
}

// rho_k(x) = exp(dY'h(x) - eps (h'h)(x) / 2) - 1.
inline double weight(std::span<const double> x, std::span<const double> dy, const ObservationModel& obs) {
  if (obs.sensor().is_zero()) return 0.0;
  double hx_buf[8];
  std::vector<double> hx_heap;
  std::span<double> hx;
  if (obs.dimension() <= 8) {
    hx = std::span<double>(hx_buf, obs.dimension());
  } else {
    hx_heap.resize(obs.dimension());
    hx = hx_heap;
  }
  obs.sensor().evaluate(x, hx);
  double e = 0.0;
  for (std::size_t i = 0; i < hx.size(); ++i) e += dy[i] * hx[i] - 0.5 * obs.epsilon() * hx[i] * hx[i];
  // expm1 rounds to -1 once e < -37.4; keep rho in the open domain.
  return std::max(std::expm1(e), std::nextafter(-1.0, 0.0));
}

struct OffspringParameters {
  std::size_t base_count = 1;
  double extra_prob = 0.0;
  double kill_prob = 0.0;

  double expected_offspring() const noexcept {
    return static_cast<double>(base_count) + extra_prob - kill_prob * static_cast<double>(base_count);
  }
};

inline OffspringParameters offspring_parameters(double rho) {
  if (!(rho > -1.0) || !std::isfinite(rho))
    throw DomainError("offspring_parameters: rho must be finite and > -1");
  if (rho >= 0.0) {
    const double fl = std::floor(rho);
    return {static_cast<std::size_t>(fl) + 1, rho - fl, 0.0};
  }
  return {1, 0.0, -rho};
}

// Offspring count for one particle given its uniform draw; events fire iff u < threshold.
inline std::size_t offspring_count(const OffspringParameters& p, double u) noexcept {
  if (p.kill_prob > 0.0) return u < p.kill_prob ? 0 : 1;
  return p.base_count + (u < p.extra_prob ? 1 : 0);
}

// xi = rho if rho < 0, else rho - floor(rho).
inline double residual(double rho) noexcept { return rho < 0.0 ? rho : rho - std::floor(rho); }

// CSV rows: k, t_k, dy components, then truth components when present.
inline void write_record_csv(std::ostream& os, const ObservationRecord& rec) {
  const std::size_t d2 = rec.increments.empty() ? 0 : rec.increments[0].size();
  const std::size_t d1 = rec.truth && !rec.truth->empty() ? (*rec.truth)[0].size() : 0;
  os << "k,t";
  for (std::size_t i = 0; i < d2; ++i) os << ",dy" << i;
  for (std::size_t i = 0; i < d1; ++i) os << ",x" << i;
  os << '\n';
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << ',' << buf;
  };
  for (std::size_t k = 0; k < rec.size(); ++k) {
    os << (k + 1);
    put(static_cast<double>(k + 1) * rec.epsilon);
    for (double v : rec.increments[k]) put(v);
    if (d1 > 0)
      for (double v : (*rec.truth)[k]) put(v);
    os << '\n';
  }
}

inline std::string record_to_csv(const ObservationRecord& rec) {
  std::ostringstream os;
  write_record_csv(os, rec);
  return os.str();
}

inline ObservationRecord read_record_csv(std::istream& is, double epsilon) {
  ObservationRecord rec;
  rec.epsilon = epsilon;
  std::string line;
  if (!std::getline(is, line)) throw IoError("observation csv: missing header");
  std::size_t d2 = 0, d1 = 0;
  {
    std::stringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ',')) {
      if (col.rfind("dy", 0) == 0) ++d2;
      else if (col.size() > 1 && col[0] == 'x') ++d1;
    }
  }
  if (d1 > 0) rec.truth.emplace();
  std::size_t expected_k = 1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ls, cell, ',')) vals.push_back(std::strtod(cell.c_str(), nullptr));
    if (vals.size() != 2 + d2 + d1) throw IoError("observation csv: wrong column count at k=" + std::to_string(expected_k));
    if (static_cast<std::size_t>(vals[0]) != expected_k) throw IoError("observation csv: rows out of order");
    rec.increments.emplace_back(vals.begin() + 2, vals.begin() + 2 + static_cast<std::ptrdiff_t>(d2));
    if (d1 > 0) rec.truth->emplace_back(vals.begin() + 2 + static_cast<std::ptrdiff_t>(d2), vals.end());
    ++expected_k;
  }
  return rec;
}

}  // namespace bpf
