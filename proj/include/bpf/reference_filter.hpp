#pragma once

// Particle-free oracles for the unnormalized filter.
//
// GridFilter holds the filter density on a periodic rectangular grid. The
// prediction multiplies the discrete transform by exp(eps * l(-theta)), which
// is exact for the stable semigroup on the grid; the update multiplies the
// density pointwise by 1 + rho.
//
// kalman_reference is the exact recursion for alpha = 2 with an unclipped
// linear channel.

#include <fftw3.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstddef>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "bpf/errors.hpp"
#include "bpf/filter_model.hpp"
#include "bpf/frequency_grid.hpp"
#include "bpf/stable_process.hpp"

namespace bpf {

namespace detail {

// The FFTW planner is not thread-safe; execution with the new-array API is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class FftPlan {
 public:
  FftPlan() = default;
  FftPlan(const std::vector<int>& shape, int sign) {
    std::size_t total = 1;
    for (int s : shape) total *= static_cast<std::size_t>(s);
    buffer_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * total));
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft(static_cast<int>(shape.size()), shape.data(), buffer_, buffer_, sign, FFTW_ESTIMATE);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
  FftPlan(FftPlan&& o) noexcept : plan_(o.plan_), buffer_(o.buffer_) {
    o.plan_ = nullptr;
    o.buffer_ = nullptr;
  }
  FftPlan& operator=(FftPlan&& o) noexcept {
    if (this != &o) {
      release();
      plan_ = o.plan_;
      buffer_ = o.buffer_;
      o.plan_ = nullptr;
      o.buffer_ = nullptr;
    }
    return *this;
  }
  ~FftPlan() { release(); }

  // Unnormalized transform of `data`, staged through the planned buffer.
  void execute(std::vector<std::complex<double>>& data) const {
    auto* b = reinterpret_cast<std::complex<double>*>(buffer_);
    std::copy(data.begin(), data.end(), b);
    fftw_execute(plan_);
    std::copy(b, b + data.size(), data.begin());
  }

 private:
  void release() {
    if (plan_) {
      std::lock_guard<std::mutex> lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    if (buffer_) fftw_free(buffer_);
    plan_ = nullptr;
    buffer_ = nullptr;
  }

  fftw_plan plan_ = nullptr;
  fftw_complex* buffer_ = nullptr;
};

inline bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace detail

struct GridAxis {
  double center = 0.0;
  double halfwidth = 10.0;
  std::size_t points = 512;

  double spacing() const noexcept { return 2.0 * halfwidth / static_cast<double>(points); }
  // Nodes x_j = center - halfwidth + j dx; node points/2 is the center.
  double node(std::size_t j) const noexcept { return center - halfwidth + static_cast<double>(j) * spacing(); }
};

struct GridParams {
  double halfwidth = 10.0;
  std::size_t points_per_axis = 512;
  bool strict = false;
  double clamp_warn_fraction = 1e-3;
  double boundary_warn_fraction = 1e-4;
  double outside_mass_tolerance = 1e-6;
};

struct GridDiagnostics {
  double clamped_mass_last = 0.0;
  double clamped_mass_total = 0.0;
  double mass_drift_last = 0.0;  // relative change of the raw inverse transform mass
  std::vector<std::string> warnings;
};

class GridFilter {
 public:
  GridFilter(const SignalModel& signal, double epsilon, std::vector<GridAxis> axes, GridParams params)
      : axes_(std::move(axes)), params_(params), epsilon_(epsilon), alpha_(signal.alpha()) {
    if (axes_.size() != signal.dimension()) throw ArgumentError("grid: axis count differs from signal dimension");
    if (axes_.empty() || axes_.size() > 3) throw ArgumentError("grid: only dimensions 1 to 3 are supported");
    total_ = 1;
    for (const auto& a : axes_) {
      if (!detail::is_power_of_two(a.points) || a.points < 64)
        throw ArgumentError("grid: points per axis must be a power of two >= 64");
      if (!(a.halfwidth > 0.0)) throw ArgumentError("grid: halfwidth must be positive");
      total_ *= a.points;
      shape_.push_back(static_cast<int>(a.points));
    }
    cell_volume_ = 1.0;
    for (const auto& a : axes_) cell_volume_ *= a.spacing();
    density_.assign(total_, 0.0);
    build_multiplier(signal);
    make_plans();
  }

  GridFilter(const GridFilter& o)
      : axes_(o.axes_), params_(o.params_), epsilon_(o.epsilon_), alpha_(o.alpha_), total_(o.total_),
        shape_(o.shape_), cell_volume_(o.cell_volume_), density_(o.density_), multiplier_(o.multiplier_),
        diagnostics_(o.diagnostics_) {
    make_plans();
  }
  GridFilter& operator=(const GridFilter& o) {
    if (this != &o) {
      GridFilter tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  GridFilter(GridFilter&&) noexcept = default;
  GridFilter& operator=(GridFilter&&) noexcept = default;

  std::size_t dimension() const noexcept { return axes_.size(); }
  const std::vector<GridAxis>& axes() const noexcept { return axes_; }
  std::size_t size() const noexcept { return total_; }
  double cell_volume() const noexcept { return cell_volume_; }
  double epsilon() const noexcept { return epsilon_; }
  const std::vector<double>& density() const noexcept { return density_; }
  std::vector<double>& density() noexcept { return density_; }
  const std::vector<std::complex<double>>& multiplier() const noexcept { return multiplier_; }
  const GridDiagnostics& diagnostics() const noexcept { return diagnostics_; }

  // Spatial node of flat index (row-major, axis 0 slowest).
  Vector node(std::size_t flat) const {
    Vector x(axes_.size());
    for (std::size_t a = axes_.size(); a-- > 0;) {
      const std::size_t j = flat % axes_[a].points;
      flat /= axes_[a].points;
      x[a] = axes_[a].node(j);
    }
    return x;
  }

  double total_mass() const noexcept {
    double s = 0.0;
    for (double d : density_) s += d;
    return s * cell_volume_;
  }

  Vector normalized_mean() const {
    Vector m(axes_.size(), 0.0);
    double mass = 0.0;
    for (std::size_t f = 0; f < total_; ++f) {
      if (density_[f] == 0.0) continue;
      const auto x = node(f);
      for (std::size_t a = 0; a < m.size(); ++a) m[a] += density_[f] * x[a];
      mass += density_[f];
    }
    for (auto& v : m) v /= mass;
    return m;
  }

  // Per-axis variance of the normalized density.
  Vector normalized_variance() const {
    const Vector m = normalized_mean();
    Vector v(axes_.size(), 0.0);
    double mass = 0.0;
    for (std::size_t f = 0; f < total_; ++f) {
      if (density_[f] == 0.0) continue;
      const auto x = node(f);
      for (std::size_t a = 0; a < v.size(); ++a) v[a] += density_[f] * (x[a] - m[a]) * (x[a] - m[a]);
      mass += density_[f];
    }
    for (auto& c : v) c /= mass;
    return v;
  }

  // Mass held by cells on the outer layer of the grid.
  double boundary_mass() const {
    double s = 0.0;
    for (std::size_t f = 0; f < total_; ++f) {
      std::size_t rem = f;
      bool edge = false;
      for (std::size_t a = axes_.size(); a-- > 0;) {
        const std::size_t j = rem % axes_[a].points;
        rem /= axes_[a].points;
        if (j == 0 || j + 1 == axes_[a].points) edge = true;
      }
      if (edge) s += density_[f];
    }
    return s * cell_volume_;
  }

  void predict() {
    std::vector<std::complex<double>> work(density_.begin(), density_.end());
    const double mass_before = total_mass();
    forward_.execute(work);
    for (std::size_t f = 0; f < total_; ++f) work[f] *= multiplier_[f];
    backward_.execute(work);
    const double scale = 1.0 / static_cast<double>(total_);
    double raw_mass = 0.0, clamped = 0.0;
    for (std::size_t f = 0; f < total_; ++f) {
      const double v = work[f].real() * scale;
      raw_mass += v;
      if (v < 0.0) {
        clamped -= v;
        density_[f] = 0.0;
      } else {
        density_[f] = v;
      }
    }
    raw_mass *= cell_volume_;
    clamped *= cell_volume_;
    diagnostics_.mass_drift_last = mass_before > 0.0 ? std::abs(raw_mass - mass_before) / mass_before : 0.0;
    diagnostics_.clamped_mass_last = clamped;
    diagnostics_.clamped_mass_total += clamped;
    const double mass = total_mass();
    if (mass > 0.0 && clamped > params_.clamp_warn_fraction * mass) {
      const std::string msg = "grid: clamped negative mass " + std::to_string(clamped) + " exceeds tolerance";
      if (params_.strict) throw GridError(msg);
      diagnostics_.warnings.push_back(msg);
    }
    check_boundary();
  }

  void update(std::span<const double> dy, const ObservationModel& obs) {
    if (obs.sensor().is_zero()) return;
    for (std::size_t f = 0; f < total_; ++f) {
      if (density_[f] == 0.0) continue;
      const auto x = node(f);
      density_[f] *= 1.0 + weight(x, dy, obs);
    }
  }

  // hat mu(theta_k) = sum_j density_j vol exp(-i theta_k'x_j) on a frequency grid.
  SpectralTransform transform(const FrequencyGrid& grid) const {
    if (grid.dimension() != axes_.size()) throw ArgumentError("grid transform: dimension mismatch");
    std::vector<std::vector<double>> coords(axes_.size());
    std::vector<double> w;
    for (std::size_t f = 0; f < total_; ++f) {
      if (density_[f] == 0.0) continue;
      const auto x = node(f);
      for (std::size_t a = 0; a < x.size(); ++a) coords[a].push_back(x[a]);
      w.push_back(density_[f]);
    }
    return {grid.fingerprint(), grid.transform(coords, w, cell_volume_)};
  }

  Complex transform_at(std::span<const double> theta) const {
    Complex s{0.0, 0.0};
    for (std::size_t f = 0; f < total_; ++f) {
      if (density_[f] == 0.0) continue;
      const auto x = node(f);
      s += density_[f] * std::polar(1.0, -dot(theta, x));
    }
    return s * cell_volume_;
  }

  // Signed discrete frequency of flat index f along each axis.
  Vector frequency(std::size_t f) const {
    Vector th(axes_.size());
    for (std::size_t a = axes_.size(); a-- > 0;) {
      const std::size_t n = axes_[a].points;
      const std::size_t j = f % n;
      f /= n;
      const double k = j < n / 2 ? static_cast<double>(j) : static_cast<double>(j) - static_cast<double>(n);
      th[a] = 2.0 * std::numbers::pi * k / (static_cast<double>(n) * axes_[a].spacing());
    }
    return th;
  }

  // Forward DFT of a grid-sized array (exposed for operator identities).
  std::vector<std::complex<double>> dft(const std::vector<double>& values) const {
    std::vector<std::complex<double>> w(values.begin(), values.end());
    forward_.execute(w);
    return w;
  }

 private:
  void build_multiplier(const SignalModel& signal) {
    multiplier_.resize(total_);
    std::vector<std::complex<double>> raw(total_);
    for (std::size_t f = 0; f < total_; ++f) raw[f] = std::exp(epsilon_ * transform_exponent(frequency(f), signal));
    // Symmetrize so the inverse transform of a real array stays real; only
    // Nyquist indices are affected.
    for (std::size_t f = 0; f < total_; ++f) multiplier_[f] = 0.5 * (raw[f] + std::conj(raw[mirror_index(f)]));
    multiplier_[0] = 1.0;
  }

  std::size_t mirror_index(std::size_t f) const {
    std::size_t out = 0, rem = f, stride = 1;
    for (std::size_t a = axes_.size(); a-- > 0;) {
      const std::size_t n = axes_[a].points;
      const std::size_t j = rem % n;
      rem /= n;
      out += ((n - j) % n) * stride;
      stride *= n;
    }
    return out;
  }

  void make_plans() {
    forward_ = detail::FftPlan(shape_, FFTW_FORWARD);
    backward_ = detail::FftPlan(shape_, FFTW_BACKWARD);
  }

  void check_boundary() {
    const double mass = total_mass();
    const double b = boundary_mass();
    if (mass > 0.0 && b > params_.boundary_warn_fraction * mass)
      diagnostics_.warnings.push_back("grid: boundary mass " + std::to_string(b) + " indicates wrap-around");
  }

  std::vector<GridAxis> axes_;
  GridParams params_;
  double epsilon_;
  double alpha_;
  std::size_t total_ = 0;
  std::vector<int> shape_;
  double cell_volume_ = 1.0;
  std::vector<double> density_;
  std::vector<std::complex<double>> multiplier_;
  GridDiagnostics diagnostics_;
  detail::FftPlan forward_;
  detail::FftPlan backward_;
};

// Grid centred on the initial law's mean; mu_0 discretized by cell-centre
// evaluation (point masses go to the cell containing them) and renormalized.
inline GridFilter build_grid(const SignalModel& signal, double epsilon, const GridParams& params) {
  const std::size_t d = signal.dimension();
  const auto& law = signal.initial_law();
  const Vector center = law.mean();
  std::vector<GridAxis> axes(d);
  for (std::size_t a = 0; a < d; ++a) axes[a] = {center[a], params.halfwidth, params.points_per_axis};
  GridFilter g(signal, epsilon, axes, params);

  Vector lo(d), hi(d);
  for (std::size_t a = 0; a < d; ++a) {
    lo[a] = axes[a].node(0) - 0.5 * axes[a].spacing();
    hi[a] = axes[a].node(axes[a].points - 1) + 0.5 * axes[a].spacing();
  }
  const double inside = law.box_probability(lo, hi);
  if (1.0 - inside > params.outside_mass_tolerance)
    throw GridError("grid: initial law mass outside the domain is " + std::to_string(1.0 - inside) +
                    "; domain too small");

  auto& dens = g.density();
  if (const auto* pm = std::get_if<PointMass>(&law.variant())) {
    std::size_t flat = 0;
    for (std::size_t a = 0; a < d; ++a) {
      const double j = std::floor((pm->location[a] - lo[a]) / axes[a].spacing());
      flat = flat * axes[a].points + static_cast<std::size_t>(j);
    }
    dens[flat] = 1.0 / g.cell_volume();
  } else {
    for (std::size_t f = 0; f < g.size(); ++f) dens[f] = law.density(g.node(f));
    const double mass = g.total_mass();
    if (!(mass > 0.0)) throw GridError("grid: initial law has no mass on the grid nodes");
    for (auto& v : dens) v /= mass;
  }
  return g;
}

inline GridFilter predict_step(GridFilter g) {
  g.predict();
  return g;
}

inline GridFilter update_step(GridFilter g, std::span<const double> dy, const ObservationModel& obs) {
  g.update(dy, obs);
  return g;
}

struct GridSummary {
  std::size_t epoch = 0;
  double time = 0.0;
  double total_mass = 0.0;
  Vector mean;
  Vector variance;
  double boundary_mass = 0.0;
  double clamped_mass = 0.0;
};

struct ReferenceRun {
  std::vector<GridSummary> summaries;           // epoch 0..K
  std::vector<SpectralTransform> transforms;    // per epoch, when a frequency grid is given
  std::vector<std::string> warnings;
};

inline ReferenceRun run_reference(const SignalModel& signal, const ObservationModel& obs,
                                  const ObservationRecord& record, const GridParams& params,
                                  const FrequencyGrid* frequencies = nullptr) {
  GridFilter g = build_grid(signal, obs.epsilon(), params);
  ReferenceRun run;
  auto summarize = [&](std::size_t k) {
    run.summaries.push_back({k, static_cast<double>(k) * obs.epsilon(), g.total_mass(), g.normalized_mean(),
                             g.normalized_variance(), g.boundary_mass(), g.diagnostics().clamped_mass_total});
    if (frequencies) run.transforms.push_back(g.transform(*frequencies));
  };
  summarize(0);
  for (std::size_t k = 1; k <= record.size(); ++k) {
    g.predict();
    g.update(record.increments[k - 1], obs);
    summarize(k);
  }
  run.warnings = g.diagnostics().warnings;
  return run;
}

struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

// Q = 2 sum_j w_j z_j z_j' (covariance rate of the alpha = 2 signal).
inline Eigen::MatrixXd gaussian_covariance_rate(const SignalModel& signal) {
  if (signal.alpha() != 2.0) throw ParameterError("gaussian_covariance_rate: requires alpha = 2");
  const std::size_t d = signal.dimension();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (const auto& a : signal.spectral_measure().atoms()) {
    Eigen::Map<const Eigen::VectorXd> z(a.direction.data(), static_cast<Eigen::Index>(d));
    q += 2.0 * a.weight * z * z.transpose();
  }
  return q;
}

// Exact recursion for dY_k = (H x + b) eps + noise: predict P += eps Q, then
// condition on z_k = dY_k / eps with noise covariance I / eps. Entry 0 is the prior.
inline std::vector<GaussianPosterior> kalman_reference(const ObservationRecord& record, const Eigen::MatrixXd& h,
                                                       const Eigen::VectorXd& offset, const Eigen::VectorXd& m0,
                                                       const Eigen::MatrixXd& p0, const Eigen::MatrixXd& q) {
  const double eps = record.epsilon;
  const auto d2 = h.rows();
  std::vector<GaussianPosterior> out;
  out.push_back({m0, p0});
  Eigen::VectorXd m = m0;
  Eigen::MatrixXd p = p0;
  const Eigen::MatrixXd r = Eigen::MatrixXd::Identity(d2, d2) / eps;
  for (const auto& dy : record.increments) {
    p += eps * q;
    Eigen::Map<const Eigen::VectorXd> dyv(dy.data(), d2);
    const Eigen::VectorXd z = dyv / eps;
    const Eigen::MatrixXd s = h * p * h.transpose() + r;
    const Eigen::MatrixXd gain = p * h.transpose() * s.ldlt().solve(Eigen::MatrixXd::Identity(d2, d2));
    m += gain * (z - h * m - offset);
    const Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(p.rows(), p.cols()) - gain * h;
    p = ikh * p * ikh.transpose() + gain * r * gain.transpose();
    out.push_back({m, p});
  }
  return out;
}

// Kalman reference assembled from model objects; throws when the channel is
// not clipped_linear or alpha != 2, or when the recorded truth leaves the
// unclipped region.
inline std::vector<GaussianPosterior> kalman_reference(const SignalModel& signal, const ObservationModel& obs,
                                                       const ObservationRecord& record) {
  const auto* lin = std::get_if<ClippedLinear>(&obs.sensor().variant());
  if (!lin) throw ArgumentError("kalman_reference: requires a clipped_linear channel");
  const auto* g = std::get_if<ProductGaussian>(&signal.initial_law().variant());
  const auto* pm = std::get_if<PointMass>(&signal.initial_law().variant());
  if (!g && !pm) throw ArgumentError("kalman_reference: requires a gaussian or point-mass initial law");
  const auto d1 = static_cast<Eigen::Index>(signal.dimension());
  const auto d2 = static_cast<Eigen::Index>(obs.dimension());
  Eigen::MatrixXd h(d2, d1);
  for (Eigen::Index i = 0; i < d2; ++i)
    for (Eigen::Index j = 0; j < d1; ++j) h(i, j) = lin->matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d2);
  for (Eigen::Index i = 0; i < d2 && !lin->offset.empty(); ++i) b(i) = lin->offset[static_cast<std::size_t>(i)];
  Eigen::VectorXd m0(d1);
  Eigen::MatrixXd p0 = Eigen::MatrixXd::Zero(d1, d1);
  for (Eigen::Index j = 0; j < d1; ++j) {
    const auto sj = static_cast<std::size_t>(j);
    m0(j) = g ? g->mean[sj] : pm->location[sj];
    if (g) p0(j, j) = g->stddev[sj] * g->stddev[sj];
  }
  if (record.truth)
    for (const auto& x : *record.truth)
      if (obs.sensor().clipped_at(x)) throw DomainError("kalman_reference: truth leaves the unclipped region");
  return kalman_reference(record, h, b, m0, p0, gaussian_covariance_rate(signal));
}

}  // namespace bpf
