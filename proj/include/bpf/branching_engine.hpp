#pragma once

// Branching particle approximation of the unnormalized filter. Particles
// move as independent copies of the signal between observation epochs and,
// at each epoch, are replaced by a random number of copies with mean 1 + rho.
//
// Randomness: particle-epoch (id, k) owns the counter stream keyed by
// (particle_epoch, id, k). Draw 1 of that stream is the branching uniform at
// t_k; the evolution over (t_{k-1}, t_k] uses counters from 2^40 upward.

#include <algorithm>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include "bpf/errors.hpp"
#include "bpf/filter_model.hpp"
#include "bpf/frequency_grid.hpp"
#include "bpf/parallel.hpp"
#include "bpf/rng.hpp"
#include "bpf/stable_process.hpp"

namespace bpf {

struct ParticleEnsemble {
  std::size_t dimension = 1;
  std::vector<std::vector<double>> coords;  // coords[axis][particle]
  std::vector<std::uint64_t> lineage_ids;
  std::size_t initial_count = 1;
  double mass_factor = 1.0;
  double time = 0.0;
  std::size_t epoch = 0;    // observation epochs already applied
  std::size_t substep = 0;  // evolve calls since the last epoch

  std::size_t size() const noexcept { return lineage_ids.size(); }
  bool empty() const noexcept { return lineage_ids.empty(); }

  Vector position(std::size_t i) const {
    Vector x(dimension);
    for (std::size_t a = 0; a < dimension; ++a) x[a] = coords[a][i];
    return x;
  }

  // <mu^n, 1> = mass_factor * count / n.
  double total_mass() const noexcept {
    return mass_factor * static_cast<double>(size()) / static_cast<double>(initial_count);
  }

  void reserve(std::size_t n) {
    for (auto& c : coords) c.reserve(n);
    lineage_ids.reserve(n);
  }

  void push_back(const ParticleEnsemble& from, std::size_t i, std::uint64_t id) {
    for (std::size_t a = 0; a < dimension; ++a) coords[a].push_back(from.coords[a][i]);
    lineage_ids.push_back(id);
  }

  ParticleEnsemble empty_like() const {
    ParticleEnsemble e;
    e.dimension = dimension;
    e.coords.assign(dimension, {});
    e.initial_count = initial_count;
    e.mass_factor = mass_factor;
    e.time = time;
    e.epoch = epoch;
    e.substep = substep;
    return e;
  }
};

namespace detail {

// Rehash colliding ids until unique; processes ids in order so the result is
// a deterministic function of the input sequence.
inline void make_ids_unique(std::vector<std::uint64_t>& ids) {
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(ids.size() * 2);
  for (auto& id : ids) {
    while (!seen.insert(id).second) id = mix64(id ^ 0xD6E8FEB86659FD93ULL);
  }
}

inline CounterRng particle_stream(const StreamFactory& streams, std::uint64_t id, std::size_t epoch) {
  return streams.stream(StreamDomain::particle_epoch, id, epoch);
}

}  // namespace detail

inline ParticleEnsemble init_ensemble(std::size_t n, const SignalModel& signal, const StreamFactory& streams) {
  if (n < 1) throw ArgumentError("init_ensemble: n must be >= 1");
  ParticleEnsemble e;
  e.dimension = signal.dimension();
  e.coords.assign(e.dimension, std::vector<double>(n));
  e.lineage_ids.resize(n);
  e.initial_count = n;
  Vector x(e.dimension);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = streams.stream(StreamDomain::initial_positions, i);
    signal.initial_law().sample(rng, x);
    for (std::size_t a = 0; a < e.dimension; ++a) e.coords[a][i] = x[a];
    e.lineage_ids[i] = hash_key(streams.seed(), {0x1D5ULL, i});
  }
  detail::make_ids_unique(e.lineage_ids);
  return e;
}

inline void evolve_in_place(ParticleEnsemble& e, const SignalModel& signal, double dt, const StreamFactory& streams) {
  if (!(dt > 0.0)) throw ArgumentError("evolve_segment: dt must be positive");
  const IncrementSampler sampler(signal, dt);
  const std::uint64_t counter0 = static_cast<std::uint64_t>(e.substep + 1) << 40;
  parallel_for(e.size(), [&](std::size_t i) {
    CounterRng rng(detail::particle_stream(streams, e.lineage_ids[i], e.epoch + 1).key(), counter0);
    double dx[8];
    std::vector<double> heap;
    std::span<double> out;
    if (e.dimension <= 8) {
      out = std::span<double>(dx, e.dimension);
    } else {
      heap.resize(e.dimension);
      out = heap;
    }
    sampler.draw(rng, out);
    for (std::size_t a = 0; a < e.dimension; ++a) e.coords[a][i] += out[a];
  });
  e.time += dt;
  ++e.substep;
}

inline ParticleEnsemble evolve_segment(ParticleEnsemble e, const SignalModel& signal, double dt,
                                       const StreamFactory& streams) {
  evolve_in_place(e, signal, dt, streams);
  return e;
}

// Uniform U^{i,k} of particle `id` at epoch k.
inline double branching_uniform(const StreamFactory& streams, std::uint64_t id, std::size_t epoch) {
  auto rng = detail::particle_stream(streams, id, epoch);
  return uniform01(rng);
}

// Upper bound on the ensemble size after one branching step.
inline constexpr std::size_t max_population = std::size_t{1} << 27;

struct BranchOutcome {
  ParticleEnsemble ensemble;
  std::size_t affected = 0;  // parents whose offspring count differs from 1
  std::size_t births = 0;
  std::size_t deaths = 0;
};

inline std::vector<double> particle_weights(const ParticleEnsemble& e, std::span<const double> dy,
                                            const ObservationModel& obs) {
  std::vector<double> rho(e.size());
  parallel_for(e.size(), [&](std::size_t i) {
    double x[8];
    std::vector<double> heap;
    std::span<double> xs;
    if (e.dimension <= 8) {
      xs = std::span<double>(x, e.dimension);
    } else {
      heap.resize(e.dimension);
      xs = heap;
    }
    for (std::size_t a = 0; a < e.dimension; ++a) xs[a] = e.coords[a][i];
    rho[i] = weight(xs, dy, obs);
  });
  return rho;
}

inline BranchOutcome branch_step(const ParticleEnsemble& e, std::span<const double> dy, const ObservationModel& obs,
                                 const StreamFactory& streams) {
  const std::size_t k = e.epoch + 1;
  const auto rho = particle_weights(e, dy, obs);
  double expected = 0.0;
  for (double r : rho) expected += 1.0 + r;
  if (!(expected <= static_cast<double>(max_population)))
    throw PopulationError("branch_step: epoch " + std::to_string(k) + " would create about " + std::to_string(expected) +
                          " particles (limit " + std::to_string(max_population) + ")");
  std::vector<std::size_t> counts(e.size());
  parallel_for(e.size(), [&](std::size_t i) {
    counts[i] = offspring_count(offspring_parameters(rho[i]), branching_uniform(streams, e.lineage_ids[i], k));
  });

  BranchOutcome out;
  out.ensemble = e.empty_like();
  std::size_t total = 0;
  for (auto c : counts) total += c;
  out.ensemble.reserve(total);
  for (std::size_t i = 0; i < e.size(); ++i) {
    const std::size_t c = counts[i];
    if (c != 1) ++out.affected;
    if (c == 0) ++out.deaths;
    else out.births += c - 1;
    for (std::size_t j = 0; j < c; ++j) out.ensemble.push_back(e, i, hash_key(e.lineage_ids[i], {j, k}));
  }
  detail::make_ids_unique(out.ensemble.lineage_ids);
  out.ensemble.epoch = k;
  out.ensemble.substep = 0;
  return out;
}

struct ResampleOutcome {
  ParticleEnsemble ensemble;
  std::size_t relocations = 0;  // new particles whose parent slot differs from their own
};

// Constant-population multinomial resampling with weights proportional to 1 + rho.
inline ResampleOutcome multinomial_baseline_step(const ParticleEnsemble& e, std::span<const double> dy,
                                                 const ObservationModel& obs, const StreamFactory& streams) {
  if (e.empty()) throw ArgumentError("multinomial_baseline_step: empty ensemble");
  const std::size_t k = e.epoch + 1;
  const auto rho = particle_weights(e, dy, obs);
  std::vector<double> cumulative(e.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    acc += 1.0 + rho[i];
    cumulative[i] = acc;
  }
  std::vector<std::size_t> parent(e.size());
  parallel_for(e.size(), [&](std::size_t i) {
    const double u = branching_uniform(streams, e.lineage_ids[i], k) * acc;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    parent[i] = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), e.size() - 1);
  });
  ResampleOutcome out;
  out.ensemble = e.empty_like();
  out.ensemble.reserve(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (parent[i] != i) ++out.relocations;
    out.ensemble.push_back(e, parent[i], hash_key(e.lineage_ids[parent[i]], {i, k, 0x3B1ULL}));
  }
  detail::make_ids_unique(out.ensemble.lineage_ids);
  out.ensemble.epoch = k;
  out.ensemble.substep = 0;
  return out;
}

struct PopulationControl {
  std::size_t target = 1000;
  double lo_ratio = 0.5;
  double hi_ratio = 2.0;
};

// Unbiased population control: halve by independent coin flips (doubling the
// mass factor) above hi_ratio * target; duplicate everything (halving the mass
// factor) below lo_ratio * target.
inline ParticleEnsemble population_control(const ParticleEnsemble& e, const PopulationControl& pc,
                                           const StreamFactory& streams) {
  if (!(pc.lo_ratio > 0.0 && pc.lo_ratio < 1.0 && pc.hi_ratio > 1.0))
    throw ArgumentError("population_control: need 0 < lo_ratio < 1 < hi_ratio");
  const double count = static_cast<double>(e.size());
  const double target = static_cast<double>(pc.target);
  if (count > pc.hi_ratio * target) {
    ParticleEnsemble out = e.empty_like();
    out.reserve(e.size() / 2 + 1);
    for (std::size_t i = 0; i < e.size(); ++i) {
      auto rng = streams.stream(StreamDomain::population_control, e.lineage_ids[i], e.epoch);
      if (uniform01(rng) < 0.5) out.push_back(e, i, e.lineage_ids[i]);
    }
    out.mass_factor = 2.0 * e.mass_factor;
    return out;
  }
  if (count < pc.lo_ratio * target) {
    ParticleEnsemble out = e.empty_like();
    out.reserve(2 * e.size());
    for (std::size_t i = 0; i < e.size(); ++i)
      for (std::uint64_t j = 0; j < 2; ++j) out.push_back(e, i, hash_key(e.lineage_ids[i], {j, e.epoch, 0xC0ULL}));
    detail::make_ids_unique(out.lineage_ids);
    out.mass_factor = 0.5 * e.mass_factor;
    return out;
  }
  return e;
}

// Test functions for estimate().
struct ConstantOne {};
struct Coordinate {
  std::size_t axis = 0;
};
struct FourierMode {
  Vector theta;  // phi(x) = exp(-i theta'x)
};
using TestFunction = std::variant<ConstantOne, Coordinate, FourierMode>;

inline std::string describe(const TestFunction& phi) {
  return std::visit(
      [](const auto& f) -> std::string {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ConstantOne>) return "one";
        else if constexpr (std::is_same_v<T, Coordinate>) return "x" + std::to_string(f.axis);
        else {
          std::string s = "fourier";
          char buf[32];
          for (double t : f.theta) {
            std::snprintf(buf, sizeof buf, "_%g", t);
            s += buf;
          }
          return s;
        }
      },
      phi);
}

inline Complex evaluate(const TestFunction& phi, const ParticleEnsemble& e, std::size_t i) {
  return std::visit(
      [&](const auto& f) -> Complex {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ConstantOne>) return {1.0, 0.0};
        else if constexpr (std::is_same_v<T, Coordinate>) return {e.coords[f.axis][i], 0.0};
        else {
          double phase = 0.0;
          for (std::size_t a = 0; a < e.dimension; ++a) phase += f.theta[a] * e.coords[a][i];
          return std::polar(1.0, -phase);
        }
      },
      phi);
}

struct Estimate {
  Complex unnormalized;  // <mu^n, phi> = mass_factor (1/n) sum phi(X^i)
  Complex normalized;    // sum phi(X^i) / count
};

inline Complex unnormalized_estimate(const ParticleEnsemble& e, const TestFunction& phi) {
  Complex s{0.0, 0.0};
  for (std::size_t i = 0; i < e.size(); ++i) s += evaluate(phi, e, i);
  return s * (e.mass_factor / static_cast<double>(e.initial_count));
}

inline Estimate estimate(const ParticleEnsemble& e, const TestFunction& phi) {
  if (e.empty()) throw ExtinctionError("estimate: normalized estimate of an empty ensemble", e.epoch);
  Complex s{0.0, 0.0};
  for (std::size_t i = 0; i < e.size(); ++i) s += evaluate(phi, e, i);
  return {s * (e.mass_factor / static_cast<double>(e.initial_count)), s / static_cast<double>(e.size())};
}

// hat mu^n(theta) = mass_factor (1/n) sum_i exp(-i theta'X^i) on every grid node.
inline SpectralTransform empirical_fourier(const ParticleEnsemble& e, const FrequencyGrid& grid) {
  if (grid.dimension() != e.dimension) throw ArgumentError("empirical_fourier: grid dimension mismatch");
  return {grid.fingerprint(), grid.transform(e.coords, {}, e.mass_factor / static_cast<double>(e.initial_count))};
}

inline std::vector<Complex> empirical_fourier(const ParticleEnsemble& e, const std::vector<Vector>& thetas) {
  std::vector<Complex> out;
  out.reserve(thetas.size());
  for (const auto& th : thetas) out.push_back(unnormalized_estimate(e, FourierMode{th}));
  return out;
}

enum class ResamplingMethod { branching, multinomial };

struct FilterOptions {
  ResamplingMethod method = ResamplingMethod::branching;
  std::optional<PopulationControl> population_control;
  std::size_t substeps = 1;  // evolve calls per inter-observation segment
  bool keep_snapshots = false;
};

struct EpochSummary {
  std::size_t epoch = 0;
  double time = 0.0;
  std::size_t count_before = 0;  // alive at t_k-
  std::size_t count = 0;         // alive at t_k
  double mass = 0.0;             // <mu^n_{t_k}, 1>
  std::size_t affected = 0;      // branched or killed (branching), relocated (multinomial)
  std::size_t births = 0;
  std::size_t deaths = 0;
};

struct Extinction {
  std::size_t epoch = 0;
};

struct FilterRun {
  ParticleEnsemble final_ensemble;
  std::vector<EpochSummary> epochs;  // index 0 is the initial ensemble
  std::optional<Extinction> extinction;
  std::vector<ParticleEnsemble> snapshots_before;  // t_k-, when requested
  std::vector<ParticleEnsemble> snapshots_after;   // t_0 and t_k, when requested
};

struct NullObserver {
  void on_initial(const ParticleEnsemble&) {}
  void on_pre_branch(std::size_t, const ParticleEnsemble&, std::span<const double>) {}
  void on_post_branch(std::size_t, const ParticleEnsemble&, const EpochSummary&) {}
};

template <class Observer = NullObserver>
FilterRun run_filter(const SignalModel& signal, const ObservationModel& obs, const ObservationRecord& record,
                     std::size_t n, const FilterOptions& options, const StreamFactory& streams,
                     Observer&& observer = Observer{}) {
  if (options.substeps < 1) throw ArgumentError("run_filter: substeps must be >= 1");
  FilterRun run;
  ParticleEnsemble e = init_ensemble(n, signal, streams);
  run.epochs.push_back({0, 0.0, n, n, e.total_mass(), 0, 0, 0});
  if (options.keep_snapshots) run.snapshots_after.push_back(e);
  observer.on_initial(e);
  const double eps = obs.epsilon();
  const double sub_dt = eps / static_cast<double>(options.substeps);
  for (std::size_t k = 1; k <= record.size(); ++k) {
    for (std::size_t s = 0; s < options.substeps; ++s) evolve_in_place(e, signal, sub_dt, streams);
    e.time = static_cast<double>(k) * eps;
    const auto& dy = record.increments[k - 1];
    if (options.keep_snapshots) run.snapshots_before.push_back(e);
    observer.on_pre_branch(k, e, dy);
    EpochSummary summary;
    summary.epoch = k;
    summary.time = e.time;
    summary.count_before = e.size();
    if (options.method == ResamplingMethod::branching) {
      auto b = branch_step(e, dy, obs, streams);
      e = std::move(b.ensemble);
      summary.affected = b.affected;
      summary.births = b.births;
      summary.deaths = b.deaths;
    } else {
      auto m = multinomial_baseline_step(e, dy, obs, streams);
      e = std::move(m.ensemble);
      summary.affected = m.relocations;
    }
    if (options.population_control && !e.empty()) e = population_control(e, *options.population_control, streams);
    summary.count = e.size();
    summary.mass = e.total_mass();
    run.epochs.push_back(summary);
    if (options.keep_snapshots) run.snapshots_after.push_back(e);
    observer.on_post_branch(k, e, summary);
    if (e.empty()) {
      run.extinction = Extinction{k};
      break;
    }
  }
  run.final_ensemble = std::move(e);
  return run;
}

// Residual of the martingale decomposition of <mu^n, e_{-theta}> along one run:
//   Q = <mu_T, e> - <mu_0, e> - sum_k <mu_{t_{k-1}}, e> (exp(eps l(-theta)) - 1)
//       - sum_k <mu_{t_k-}, rho_k e>.
// The drift integral is replaced by its conditional expectation given the
// ensemble at t_{k-1}, which keeps E Q = 0.
class CompensatorObserver {
 public:
  CompensatorObserver(Vector theta, Complex segment_factor, const ObservationModel& obs)
      : theta_(std::move(theta)), factor_(segment_factor), obs_(&obs) {}

  void on_initial(const ParticleEnsemble& e) {
    initial_ = last_ = unnormalized_estimate(e, FourierMode{theta_});
  }
  void on_pre_branch(std::size_t, const ParticleEnsemble& e, std::span<const double> dy) {
    drift_ += last_ * (factor_ - 1.0);
    const auto rho = particle_weights(e, dy, *obs_);
    Complex s{0.0, 0.0};
    for (std::size_t i = 0; i < e.size(); ++i) s += rho[i] * evaluate(FourierMode{theta_}, e, i);
    jumps_ += s * (e.mass_factor / static_cast<double>(e.initial_count));
  }
  void on_post_branch(std::size_t, const ParticleEnsemble& e, const EpochSummary&) {
    last_ = unnormalized_estimate(e, FourierMode{theta_});
  }

  Complex residual() const { return last_ - initial_ - drift_ - jumps_; }

 private:
  Vector theta_;
  Complex factor_;
  const ObservationModel* obs_;
  Complex initial_{}, last_{}, drift_{}, jumps_{};
};

inline Complex compensator_residual(const SignalModel& signal, const ObservationModel& obs,
                                    const ObservationRecord& record, std::size_t n, const Vector& theta,
                                    const StreamFactory& streams) {
  CompensatorObserver q(theta, std::exp(obs.epsilon() * transform_exponent(theta, signal)), obs);
  run_filter(signal, obs, record, n, FilterOptions{}, streams, q);
  return q.residual();
}

// CSV rows: epoch, lineage_id, position components.
inline void write_ensemble_csv(std::ostream& os, const ParticleEnsemble& e, bool header = true) {
  if (header) {
    os << "epoch,lineage_id";
    for (std::size_t a = 0; a < e.dimension; ++a) os << ",x" << a;
    os << '\n';
  }
  char buf[32];
  for (std::size_t i = 0; i < e.size(); ++i) {
    os << e.epoch << ',' << e.lineage_ids[i];
    for (std::size_t a = 0; a < e.dimension; ++a) {
      std::snprintf(buf, sizeof buf, "%.17g", e.coords[a][i]);
      os << ',' << buf;
    }
    os << '\n';
  }
}

}  // namespace bpf
