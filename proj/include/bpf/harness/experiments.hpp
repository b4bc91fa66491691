#pragma once

// Multi-run experiments shared by the CLI commands and the acceptance
// binary. Seeds: master -> replication r -> (scenario | particles for n).

#include <bit>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "bpf/branching_engine.hpp"
#include "bpf/filter_model.hpp"
#include "bpf/frequency_grid.hpp"
#include "bpf/harness/config.hpp"
#include "bpf/harness/results.hpp"
#include "bpf/reference_filter.hpp"
#include "bpf/rng.hpp"
#include "bpf/spectral_metrics.hpp"
#include "bpf/stable_process.hpp"

namespace bpf::harness {

// Too many extinct replications to trust the averages.
class SweepAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline StreamFactory scenario_streams(const StreamFactory& master, std::size_t r) {
  return master.child(hash_key(r, {0x5CE7A410ULL}));
}

inline StreamFactory particle_streams(const StreamFactory& master, std::size_t r, std::size_t n) {
  return master.child(hash_key(r, {0x9A271C1EULL, n}));
}

// exp(-i theta'm - theta'P theta / 2) on every grid node.
inline SpectralTransform gaussian_transform(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                            const FrequencyGrid& grid) {
  SpectralTransform t{grid.fingerprint(), std::vector<Complex>(grid.size())};
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto th = grid.node(k);
    Eigen::Map<const Eigen::VectorXd> v(th.data(), static_cast<Eigen::Index>(th.size()));
    t.values[k] = std::exp(Complex(-0.5 * v.dot(cov * v), -v.dot(mean)));
  }
  return t;
}

// Exact filter along one record. Grid transforms are unnormalized; Kalman
// transforms are of the normalized posterior.
struct OracleTrack {
  bool normalized = false;
  std::vector<Vector> mean;      // epoch 0..K
  std::vector<Vector> variance;  // per-axis
  std::vector<SpectralTransform> transforms;
  std::vector<std::string> warnings;
  std::vector<GridSummary> grid_summaries;
};

inline OracleTrack compute_oracle(const ExperimentConfig& cfg, const SignalModel& signal, const ObservationModel& obs,
                                  const ObservationRecord& record, const FrequencyGrid* grid,
                                  const std::set<std::size_t>* transform_epochs = nullptr) {
  OracleTrack o;
  if (cfg.oracle.kind == "grid") {
    GridFilter g = build_grid(signal, obs.epsilon(), cfg.grid_params());
    auto keep = [&](std::size_t k) {
      o.grid_summaries.push_back({k, static_cast<double>(k) * obs.epsilon(), g.total_mass(), g.normalized_mean(),
                                  g.normalized_variance(), g.boundary_mass(), g.diagnostics().clamped_mass_total});
      o.mean.push_back(o.grid_summaries.back().mean);
      o.variance.push_back(o.grid_summaries.back().variance);
      if (grid && (!transform_epochs || transform_epochs->count(k))) o.transforms.push_back(g.transform(*grid));
      else o.transforms.emplace_back();
    };
    keep(0);
    for (std::size_t k = 1; k <= record.size(); ++k) {
      g.predict();
      g.update(record.increments[k - 1], obs);
      keep(k);
    }
    o.warnings = g.diagnostics().warnings;
  } else if (cfg.oracle.kind == "kalman") {
    o.normalized = true;
    const auto post = kalman_reference(signal, obs, record);
    for (std::size_t k = 0; k < post.size(); ++k) {
      const auto& p = post[k];
      o.mean.emplace_back(p.mean.data(), p.mean.data() + p.mean.size());
      Vector v(static_cast<std::size_t>(p.mean.size()));
      for (std::size_t a = 0; a < v.size(); ++a) v[a] = p.covariance(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a));
      o.variance.push_back(std::move(v));
      if (grid && (!transform_epochs || transform_epochs->count(k)))
        o.transforms.push_back(gaussian_transform(p.mean, p.covariance, *grid));
      else
        o.transforms.emplace_back();
    }
  } else {
    throw ArgumentError("compute_oracle: no oracle configured");
  }
  return o;
}

// Records per-epoch normalized means and, at selected epochs, transforms.
class TrackingObserver {
 public:
  TrackingObserver(const FrequencyGrid* grid, std::set<std::size_t> epochs) : grid_(grid), epochs_(std::move(epochs)) {}

  void on_initial(const ParticleEnsemble& e) { record(0, e); }
  void on_pre_branch(std::size_t, const ParticleEnsemble&, std::span<const double>) {}
  void on_post_branch(std::size_t k, const ParticleEnsemble& e, const EpochSummary&) { record(k, e); }

  std::vector<Vector> means;
  std::vector<double> masses;
  std::map<std::size_t, SpectralTransform> transforms;

 private:
  void record(std::size_t k, const ParticleEnsemble& e) {
    Vector m(e.dimension, std::numeric_limits<double>::quiet_NaN());
    if (!e.empty())
      for (std::size_t a = 0; a < e.dimension; ++a) m[a] = estimate(e, Coordinate{a}).normalized.real();
    means.push_back(std::move(m));
    masses.push_back(e.total_mass());
    if (grid_ && epochs_.count(k)) transforms[k] = empirical_fourier(e, *grid_);
  }

  const FrequencyGrid* grid_;
  std::set<std::size_t> epochs_;
};

// Sobolev distance between particle and oracle measures at one epoch,
// normalizing the particle side when the oracle is normalized.
inline double sobolev_error(const SpectralTransform& particle, double particle_mass, const SpectralTransform& oracle,
                            bool oracle_normalized, const FrequencyGrid& grid) {
  if (oracle_normalized) return filter_error(normalized(particle, particle_mass), oracle, grid);
  return filter_error(particle, oracle, grid);
}

inline std::set<std::size_t> error_epochs(std::size_t k_max, std::size_t stride) {
  std::set<std::size_t> s;
  if (stride > 0)
    for (std::size_t k = stride; k <= k_max; k += stride) s.insert(k);
  s.insert(k_max);
  return s;
}

inline void check_extinctions(std::size_t extinct, std::size_t total, double threshold, const std::string& what) {
  if (total > 0 && static_cast<double>(extinct) > threshold * static_cast<double>(total))
    throw SweepAborted(what + ": " + std::to_string(extinct) + " of " + std::to_string(total) +
                       " replications went extinct (threshold " + format_double(threshold) + ")");
}

// ---------------------------------------------------------------------------
// Rate sweep: error against the oracle for every n and replication.

struct RateRow {
  std::size_t n, replication, epoch;
  double error;
};

struct RateSweepResult {
  std::vector<RateRow> rows;
  std::vector<std::pair<double, double>> rms_final;  // (n, RMS error at t_K over surviving replications)
  std::map<std::size_t, std::size_t> extinctions;
  RateFit fit;
  std::vector<std::string> warnings;
};

inline RateSweepResult rate_sweep(const ExperimentConfig& cfg, std::size_t epoch_stride = 0,
                                  ResamplingMethod method = ResamplingMethod::branching) {
  if (cfg.oracle.kind == "none") throw ConfigError({"oracle.kind: rate-sweep needs an oracle (grid or kalman)"});
  const auto signal = cfg.signal_model();
  const auto obs = cfg.observation_model();
  const auto grid = cfg.frequency_grid();
  const StreamFactory master(cfg.seed);
  const std::size_t reps = cfg.particles.replications;
  const std::size_t k_max = observation_count(cfg.horizon, obs.epsilon());
  const auto epochs = error_epochs(k_max, epoch_stride);

  RateSweepResult out;
  std::map<std::size_t, std::vector<double>> final_sq;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto sc = simulate_scenario(signal, obs, cfg.horizon, scenario_streams(master, r));
    const auto oracle = compute_oracle(cfg, signal, obs, sc.record, &grid, &epochs);
    for (const auto& w : oracle.warnings) out.warnings.push_back("replication " + std::to_string(r) + ": " + w);
    for (std::size_t n : cfg.particles.counts) {
      TrackingObserver track(&grid, epochs);
      FilterOptions opt;
      opt.method = method;
      opt.population_control = cfg.population_control();
      const auto run = run_filter(signal, obs, sc.record, n, opt, particle_streams(master, r, n), track);
      if (run.extinction) {
        ++out.extinctions[n];
        continue;
      }
      for (std::size_t k : epochs) {
        const double err =
            sobolev_error(track.transforms.at(k), track.masses[k], oracle.transforms[k], oracle.normalized, grid);
        out.rows.push_back({n, r, k, err});
        if (k == k_max) final_sq[n].push_back(err * err);
      }
    }
  }
  std::size_t extinct = 0;
  for (const auto& [n, c] : out.extinctions) extinct += c;
  check_extinctions(extinct, reps * cfg.particles.counts.size(), cfg.particles.extinction_threshold, "rate-sweep");
  for (std::size_t n : cfg.particles.counts) {
    const auto& v = final_sq[n];
    if (v.empty()) continue;
    double s = 0.0;
    for (double x : v) s += x;
    out.rms_final.emplace_back(static_cast<double>(n), std::sqrt(s / static_cast<double>(v.size())));
  }
  if (out.rms_final.size() >= 3) out.fit = rate_fit(out.rms_final);
  return out;
}

// ---------------------------------------------------------------------------
// Branching vs multinomial on identical records.

struct BaselineRow {
  double epsilon;
  std::string method;
  std::size_t replication;
  double relocation_fraction;  // mean over epochs of affected / count before the step
  double error;                // normalized Sobolev error at t_K, NaN without oracle
};

struct BaselineSummary {
  double epsilon;
  double branching_fraction;
  double multinomial_fraction;
  double branching_error;
  double multinomial_error;
};

struct BaselineResult {
  std::vector<BaselineRow> rows;
  std::vector<BaselineSummary> summary;
  std::size_t extinctions = 0;
};

inline BaselineResult compare_baseline(const ExperimentConfig& cfg) {
  const auto signal = cfg.signal_model();
  const bool with_oracle = cfg.oracle.kind != "none";
  const auto grid = cfg.frequency_grid();
  const StreamFactory master(cfg.seed);
  const std::size_t n = cfg.compare.particles;
  BaselineResult out;
  std::size_t total = 0;
  for (double eps : cfg.compare.epsilons) {
    const auto obs = cfg.observation_model(eps);
    const std::size_t k_max = observation_count(cfg.horizon, eps);
    if (k_max == 0) continue;
    const StreamFactory eps_master = master.child(hash_key(0xE95ULL, {std::bit_cast<std::uint64_t>(eps)}));
    double sum_frac[2] = {0, 0}, sum_err_sq[2] = {0, 0};
    std::size_t cnt[2] = {0, 0};
    for (std::size_t r = 0; r < cfg.compare.replications; ++r) {
      const auto sc = simulate_scenario(signal, obs, cfg.horizon, scenario_streams(eps_master, r));
      std::optional<OracleTrack> oracle;
      const std::set<std::size_t> last = {k_max};
      if (with_oracle) oracle = compute_oracle(cfg, signal, obs, sc.record, &grid, &last);
      for (int m = 0; m < 2; ++m) {
        ++total;
        FilterOptions opt;
        opt.method = m == 0 ? ResamplingMethod::branching : ResamplingMethod::multinomial;
        TrackingObserver track(with_oracle ? &grid : nullptr, last);
        const auto run = run_filter(signal, obs, sc.record, n, opt, particle_streams(eps_master, r, n), track);
        if (run.extinction) {
          ++out.extinctions;
          continue;
        }
        double frac = 0.0;
        for (std::size_t k = 1; k < run.epochs.size(); ++k)
          frac += static_cast<double>(run.epochs[k].affected) / static_cast<double>(run.epochs[k].count_before);
        frac /= static_cast<double>(run.epochs.size() - 1);
        double err = std::numeric_limits<double>::quiet_NaN();
        if (oracle) {
          const auto& ot = oracle->transforms[k_max];
          const double omass = oracle->normalized ? 1.0 : oracle->grid_summaries[k_max].total_mass;
          err = filter_error(normalized(track.transforms.at(k_max), track.masses[k_max]), normalized(ot, omass), grid);
          sum_err_sq[m] += err * err;
        }
        sum_frac[m] += frac;
        ++cnt[m];
        out.rows.push_back({eps, m == 0 ? "branching" : "multinomial", r, frac, err});
      }
    }
    auto avg = [](double s, std::size_t c) { return c ? s / static_cast<double>(c) : std::numeric_limits<double>::quiet_NaN(); };
    const double nan = std::numeric_limits<double>::quiet_NaN();
    out.summary.push_back({eps, avg(sum_frac[0], cnt[0]), avg(sum_frac[1], cnt[1]),
                           with_oracle ? std::sqrt(avg(sum_err_sq[0], cnt[0])) : nan,
                           with_oracle ? std::sqrt(avg(sum_err_sq[1], cnt[1])) : nan});
  }
  check_extinctions(out.extinctions, total, cfg.particles.extinction_threshold, "compare-baseline");
  return out;
}

// ---------------------------------------------------------------------------
// Normalized mean against the oracle, in units of the posterior spread.

struct OracleAgreement {
  std::vector<std::pair<double, double>> rms;  // (n, sqrt(mean (err / sd)^2) over replications, epochs, axes)
  std::size_t extinctions = 0;
};

inline OracleAgreement oracle_agreement(const ExperimentConfig& cfg, const std::vector<std::size_t>& counts,
                                        std::size_t reps) {
  const auto signal = cfg.signal_model();
  const auto obs = cfg.observation_model();
  const StreamFactory master(cfg.seed);
  OracleAgreement out;
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto sc = simulate_scenario(signal, obs, cfg.horizon, scenario_streams(master, r));
    const auto oracle = compute_oracle(cfg, signal, obs, sc.record, nullptr);
    for (std::size_t n : counts) {
      TrackingObserver track(nullptr, {});
      const auto run = run_filter(signal, obs, sc.record, n, FilterOptions{}, particle_streams(master, r, n), track);
      if (run.extinction) {
        ++out.extinctions;
        continue;
      }
      auto& [s, c] = acc[n];
      for (std::size_t k = 1; k < track.means.size(); ++k)
        for (std::size_t a = 0; a < signal.dimension(); ++a) {
          const double z = (track.means[k][a] - oracle.mean[k][a]) / std::sqrt(oracle.variance[k][a]);
          s += z * z;
          ++c;
        }
    }
  }
  for (std::size_t n : counts) {
    const auto& [s, c] = acc[n];
    if (c) out.rms.emplace_back(static_cast<double>(n), std::sqrt(s / static_cast<double>(c)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Moments of sup_k <mu_{t_k}^n, 1> across runs.

struct MassMoments {
  double n = 0;
  double m2 = 0, m2_se = 0;
  double m4 = 0, m4_se = 0;
};

struct MassStability {
  std::vector<MassMoments> moments;
  std::size_t extinctions = 0;
};

inline MassStability mass_stability(const ExperimentConfig& cfg, const std::vector<std::size_t>& counts,
                                    std::size_t runs) {
  const auto signal = cfg.signal_model();
  const auto obs = cfg.observation_model();
  const StreamFactory master(cfg.seed);
  MassStability out;
  std::map<std::size_t, std::vector<double>> sup;
  for (std::size_t r = 0; r < runs; ++r) {
    const auto sc = simulate_scenario(signal, obs, cfg.horizon, scenario_streams(master, r));
    for (std::size_t n : counts) {
      const auto run = run_filter(signal, obs, sc.record, n, FilterOptions{}, particle_streams(master, r, n));
      if (run.extinction) ++out.extinctions;
      double m = 0.0;
      for (const auto& e : run.epochs) m = std::max(m, e.mass);
      sup[n].push_back(m);
    }
  }
  for (std::size_t n : counts) {
    const auto& v = sup[n];
    const double c = static_cast<double>(v.size());
    auto moment = [&](int p, double& mean, double& se) {
      double s = 0, s2 = 0;
      for (double x : v) {
        const double y = std::pow(x, p);
        s += y;
        s2 += y * y;
      }
      mean = s / c;
      se = std::sqrt(std::max(0.0, s2 / c - mean * mean) / (c - 1.0));
    };
    MassMoments mm;
    mm.n = static_cast<double>(n);
    moment(2, mm.m2, mm.m2_se);
    moment(4, mm.m4, mm.m4_se);
    out.moments.push_back(mm);
  }
  return out;
}

// Weighted least-squares slope of y on log n with known standard errors and
// its normal 95% interval.
struct TrendFit {
  double slope = 0, se = 0, ci_low = 0, ci_high = 0;
};

inline TrendFit trend_fit(const std::vector<double>& n, const std::vector<double>& y, const std::vector<double>& se) {
  double sw = 0, swx = 0, swy = 0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double w = 1.0 / std::max(se[i] * se[i], 1e-300);
    sw += w;
    swx += w * std::log(n[i]);
    swy += w * y[i];
  }
  const double mx = swx / sw, my = swy / sw;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double w = 1.0 / std::max(se[i] * se[i], 1e-300);
    const double dx = std::log(n[i]) - mx;
    sxx += w * dx * dx;
    sxy += w * dx * (y[i] - my);
  }
  TrendFit f;
  f.slope = sxy / sxx;
  f.se = std::sqrt(1.0 / sxx);
  f.ci_low = f.slope - 1.959963984540054 * f.se;
  f.ci_high = f.slope + 1.959963984540054 * f.se;
  return f;
}

}  // namespace bpf::harness
