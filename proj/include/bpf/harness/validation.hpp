#pragma once

// Invariant checks run by `validate` and by the acceptance binary. Each
// returns a CheckResult and, when given a table, the per-case numbers.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "bpf/branching_engine.hpp"
#include "bpf/filter_model.hpp"
#include "bpf/harness/config.hpp"
#include "bpf/harness/experiments.hpp"
#include "bpf/harness/results.hpp"
#include "bpf/rng.hpp"
#include "bpf/spectral_metrics.hpp"
#include "bpf/stable_process.hpp"

namespace bpf::harness {

// d1 = 2, atoms at (1, 0) and (0.6, 0.8), weight 1/2 each.
inline SignalModel cf_test_model(double alpha) {
  return SignalModel(alpha, SpectralMeasure(2, {{{1.0, 0.0}, 0.5}, {{0.6, 0.8}, 0.5}}), InitialLaw(PointMass{{0.0, 0.0}}));
}

// 4 radii x 5 angles.
inline std::vector<Vector> cf_test_frequencies() {
  std::vector<Vector> out;
  for (double r : {0.3, 0.8, 1.5, 2.5})
    for (int j = 0; j < 5; ++j) {
      const double a = 2.0 * std::numbers::pi * j / 5.0 + 0.1;
      out.push_back({r * std::cos(a), r * std::sin(a)});
    }
  return out;
}

inline CheckResult check_cf_fidelity(double alpha, std::size_t samples, const StreamFactory& streams,
                                     CsvTable* table = nullptr) {
  const auto model = cf_test_model(alpha);
  const double dt = 1.0;
  const IncrementSampler sampler(model, dt);
  std::vector<Vector> xs(samples, Vector(2));
  auto rng = streams.stream(StreamDomain::test, 0xCF, std::bit_cast<std::uint64_t>(alpha));
  for (auto& x : xs) sampler.draw(rng, x);
  const double limit = 5.0 * std::pow(10.0, -2.5) * 2.0;
  double worst = 0.0;
  for (const auto& th : cf_test_frequencies()) {
    const Vector neg = {-th[0], -th[1]};
    const Complex target = std::exp(dt * characteristic_exponent(th, model));
    const double err = std::abs(empirical_cf(xs, neg) - target);
    worst = std::max(worst, err);
    if (table) table->add({alpha, th[0], th[1], err});
  }
  return make_check("cf_fidelity_alpha_" + format_short(alpha), worst < limit, worst,
                    "max |empirical CF - exp(dt l(theta))| < " + format_short(limit),
                    std::to_string(samples) + " increments, 20 frequencies");
}

inline CheckResult check_offspring_unbiased(std::size_t uniforms, const StreamFactory& streams,
                                            CsvTable* table = nullptr) {
  double worst_exact = 0.0, worst_z = 0.0;
  bool ok = true;
  for (int j = 0; j < 50; ++j) {
    const double rho = -0.99 + 5.99 * (j + 1) / 50.0;
    const auto p = offspring_parameters(rho);
    const double exact_err = std::abs(p.expected_offspring() - (1.0 + rho));
    auto rng = streams.stream(StreamDomain::test, 0x0FF, static_cast<std::uint64_t>(j));
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < uniforms; ++i) {
      const double c = static_cast<double>(offspring_count(p, uniform01(rng)));
      s += c;
      s2 += c * c;
    }
    const double u = static_cast<double>(uniforms);
    const double mean = s / u;
    const double se = std::sqrt(std::max(0.0, s2 / u - mean * mean) / (u - 1.0));
    const double dev = std::abs(mean - (1.0 + rho));
    const bool mc_ok = dev <= 5.0 * se + 1e-12;
    if (se > 0) worst_z = std::max(worst_z, dev / se);
    worst_exact = std::max(worst_exact, exact_err);
    ok = ok && exact_err <= 1e-14 && mc_ok;
    if (table) table->add({rho, p.expected_offspring(), exact_err, mean, se});
  }
  return make_check("offspring_unbiasedness", ok, worst_exact,
                    "|E offspring - (1 + rho)| <= 1e-14 and Monte Carlo within 5 SE on 50 rho values",
                    "largest Monte Carlo deviation " + format_short(worst_z) + " SE");
}

// log E|rho|^r against log eps with dY ~ N(0, eps I) and x from the initial law.
inline std::vector<CheckResult> check_weight_moments(const ExperimentConfig& cfg, std::size_t samples,
                                                     const StreamFactory& streams, CsvTable* table = nullptr) {
  const auto signal = cfg.signal_model();
  const std::vector<double> eps_list = {0.2, 0.1, 0.05, 0.025, 0.0125};
  std::vector<std::pair<double, double>> m1, m2;
  for (std::size_t e = 0; e < eps_list.size(); ++e) {
    const double eps = eps_list[e];
    const auto obs = cfg.observation_model(eps);
    auto rng = streams.stream(StreamDomain::test, 0x1E3, e);
    Vector x(signal.dimension()), dy(obs.dimension());
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
      signal.initial_law().sample(rng, x);
      for (auto& v : dy) v = std::sqrt(eps) * standard_normal(rng);
      const double r = std::abs(weight(x, dy, obs));
      s1 += r;
      s2 += r * r;
    }
    const double n = static_cast<double>(samples);
    m1.emplace_back(eps, s1 / n);
    m2.emplace_back(eps, s2 / n);
    if (table) table->add({eps, s1 / n, s2 / n});
  }
  const auto f1 = rate_fit(m1), f2 = rate_fit(m2);
  return {make_check("weight_first_moment_slope", f1.slope >= 0.35 && f1.slope <= 0.65, f1.slope,
                     "slope of log E|rho| vs log eps in [0.35, 0.65]"),
          make_check("weight_second_moment_slope", f2.slope >= 0.85 && f2.slope <= 1.15, f2.slope,
                     "slope of log E|rho|^2 vs log eps in [0.85, 1.15]")};
}

// Mean of the compensated e_{-theta} quantity over independent particle
// systems on one fixed record, real and imaginary parts separately.
inline std::vector<CheckResult> check_compensator(const ExperimentConfig& cfg, std::size_t n, std::size_t reps,
                                                  const StreamFactory& master, CsvTable* table = nullptr) {
  const auto signal = cfg.signal_model();
  const auto obs = cfg.observation_model();
  const auto sc = simulate_scenario(signal, obs, cfg.horizon, scenario_streams(master, 0));
  std::vector<CheckResult> out;
  for (double t : {0.5, 1.0}) {
    Vector theta(signal.dimension(), 0.0);
    theta[0] = t;
    double sr = 0, sr2 = 0, si = 0, si2 = 0;
    for (std::size_t r = 0; r < reps; ++r) {
      const Complex q = compensator_residual(signal, obs, sc.record, n, theta, particle_streams(master, r + 1, n));
      sr += q.real();
      sr2 += q.real() * q.real();
      si += q.imag();
      si2 += q.imag() * q.imag();
    }
    const double c = static_cast<double>(reps);
    auto z = [&](double s, double s2) {
      const double mean = s / c;
      const double se = std::sqrt(std::max(0.0, s2 / c - mean * mean) / (c - 1.0));
      return std::pair{mean, se};
    };
    const auto [mr, ser] = z(sr, sr2);
    const auto [mi, sei] = z(si, si2);
    const double zr = ser > 0 ? std::abs(mr) / ser : 0.0, zi = sei > 0 ? std::abs(mi) / sei : 0.0;
    if (table) table->add({t, mr, ser, mi, sei});
    out.push_back(make_check("compensator_theta_" + format_short(t), zr <= 5.0 && zi <= 5.0, std::max(zr, zi),
                             "|mean| <= 5 SE for real and imaginary parts",
                             "real " + format_short(mr) + " +- " + format_short(ser) + ", imag " + format_short(mi) +
                                 " +- " + format_short(sei)));
  }
  return out;
}

inline std::vector<CheckResult> check_quadratic_variation(std::size_t cells, std::size_t paths,
                                                          const StreamFactory& streams, CsvTable* table = nullptr) {
  std::vector<CheckResult> out;
  {
    const SignalModel m(2.0, SpectralMeasure(1, {{{1.0}, 1.0}}), InitialLaw(PointMass{{0.0}}));
    const double th[] = {1.0};
    const auto q = quadratic_variation_estimate(m, th, 1.0, cells, 1, streams.child(2));
    const double rel = std::abs(q.mean - 2.0) / 2.0;
    if (table) table->add({2.0, 1.0, 1.0, q.mean, 0.0, 2.0});
    out.push_back(make_check("quadratic_variation_alpha_2", rel < 0.02, q.mean, "single path within 2% of 2.0",
                             std::to_string(cells) + " cells"));
  }
  {
    const SignalModel m(1.5, SpectralMeasure(1, {{{1.0}, 1.0}}), InitialLaw(PointMass{{0.0}}));
    const double th[] = {2.0}, t = 0.5;
    const double target = 2.0 * t * std::pow(2.0, 1.5);
    const auto q = quadratic_variation_estimate(m, th, t, cells, paths, streams.child(15));
    const double z = std::abs(q.mean - target) / q.standard_error;
    if (table) table->add({1.5, th[0], t, q.mean, q.standard_error, target});
    out.push_back(make_check("quadratic_variation_alpha_1.5", z <= 5.0, q.mean,
                             "within 5 SE of " + format_short(target),
                             std::to_string(paths) + " paths, deviation " + format_short(z) + " SE"));
  }
  return out;
}

inline std::vector<CheckResult> check_mass_stability(const ExperimentConfig& cfg, const std::vector<std::size_t>& counts,
                                                     std::size_t runs, CsvTable* table = nullptr) {
  const double eps = cfg.observation.epsilon;
  for (std::size_t n : counts)
    if (std::sqrt(eps) * static_cast<double>(n) < cfg.particles.xi)
      return {{"mass_second_moment_trend", CheckStatus::skipped, 0.0, "sqrt(eps) n >= xi for every n",
               "n = " + std::to_string(n) + " below the regime"}};
  const auto ms = mass_stability(cfg, counts, runs);
  std::vector<double> n, m2, s2, m4, s4;
  for (const auto& m : ms.moments) {
    n.push_back(m.n);
    m2.push_back(m.m2);
    s2.push_back(m.m2_se);
    m4.push_back(m.m4);
    s4.push_back(m.m4_se);
    if (table) table->add({m.n, m.m2, m.m2_se, m.m4, m.m4_se});
  }
  const auto f2 = trend_fit(n, m2, s2), f4 = trend_fit(n, m4, s4);
  auto detail = [&](const TrendFit& f) {
    return "slope per log n " + format_short(f.slope) + ", 95% CI [" + format_short(f.ci_low) + ", " +
           format_short(f.ci_high) + "], " + std::to_string(ms.extinctions) + " extinctions";
  };
  return {make_check("mass_second_moment_trend", f2.ci_low <= 0.0, f2.ci_low,
                     "lower 95% bound of the trend in log n <= 0", detail(f2)),
          make_check("mass_fourth_moment_trend", f4.ci_low <= 0.0, f4.ci_low,
                     "lower 95% bound of the trend in log n <= 0", detail(f4))};
}

inline CheckResult check_oracle_agreement(const ExperimentConfig& cfg, std::size_t n, std::size_t reps,
                                          CsvTable* table = nullptr) {
  if (cfg.oracle.kind == "none")
    return {"oracle_agreement", CheckStatus::skipped, 0.0, "oracle configured", "oracle.kind = none"};
  const auto a = oracle_agreement(cfg, {n}, reps);
  if (a.rms.empty())
    return make_check("oracle_agreement", false, 0.0, "at least one surviving replication", "all runs extinct");
  const double v = a.rms.front().second, limit = 5.0 / std::sqrt(static_cast<double>(n));
  if (table) table->add({static_cast<double>(n), v, limit});
  return make_check("oracle_agreement", v < limit, v, "RMS (particle mean - oracle mean) / sd < " + format_short(limit),
                    std::to_string(reps) + " replications, " + std::to_string(a.extinctions) + " extinctions");
}

}  // namespace bpf::harness
