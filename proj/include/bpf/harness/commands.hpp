#pragma once

// The four experiment commands. Each builds a ResultSet, writes it under the
// output directory and returns the process exit code (0 pass, 1 check
// failure). Config problems throw ConfigError; runtime failures, including
// extinction-threshold breaches, throw SweepAborted or a library error.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bpf/branching_engine.hpp"
#include "bpf/filter_model.hpp"
#include "bpf/harness/config.hpp"
#include "bpf/harness/experiments.hpp"
#include "bpf/harness/results.hpp"
#include "bpf/harness/validation.hpp"

namespace bpf::harness {

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"simulate", "validate", "rate-sweep", "compare-baseline"};
  return names;
}

namespace detail {

inline std::vector<ResamplingMethod> methods(const ExperimentConfig& cfg) {
  if (cfg.particles.baseline == "multinomial") return {ResamplingMethod::multinomial};
  if (cfg.particles.baseline == "both") return {ResamplingMethod::branching, ResamplingMethod::multinomial};
  return {ResamplingMethod::branching};
}

inline const char* method_name(ResamplingMethod m) {
  return m == ResamplingMethod::branching ? "branching" : "multinomial";
}

inline std::vector<std::string> axis_columns(const std::string& prefix, std::size_t d) {
  std::vector<std::string> c;
  for (std::size_t a = 0; a < d; ++a) c.push_back(prefix + std::to_string(a));
  return c;
}

template <class... V>
std::vector<std::string> concat(std::vector<std::string> a, const V&... rest) {
  (a.insert(a.end(), rest.begin(), rest.end()), ...);
  return a;
}

inline void log_checks(const ResultSet& rs, std::ostream& log) {
  for (const auto& c : rs.checks())
    log << to_string(c.status) << "  " << c.name << "  value=" << format_short(c.value) << "  (" << c.criterion << ")"
        << (c.detail.empty() ? "" : "  " + c.detail) << "\n";
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace detail

// One record, one particle run per configured method, the oracle when set.
inline ResultSet simulate_command(const ExperimentConfig& cfg) {
  using namespace detail;
  ResultSet rs(cfg.name, "simulate", cfg.seed, serialize_config(cfg));
  const auto signal = cfg.signal_model();
  const auto obs = cfg.observation_model();
  const std::size_t d = signal.dimension();
  const StreamFactory master(cfg.seed);
  const auto sc = simulate_scenario(signal, obs, cfg.horizon, scenario_streams(master, 0));
  rs.add_table("record", [&] {
    CsvTable t(concat({"epoch", "time"}, axis_columns("dy", obs.dimension()), axis_columns("x", d)));
    for (std::size_t k = 0; k < sc.record.size(); ++k) {
      std::vector<Cell> row = {k + 1, static_cast<double>(k + 1) * obs.epsilon()};
      for (double v : sc.record.increments[k]) row.emplace_back(v);
      for (std::size_t a = 0; a < d; ++a) row.emplace_back((*sc.record.truth)[k][a]);
      t.add(row);
    }
    return t;
  }());

  const std::size_t k_max = sc.record.size();
  const auto grid = cfg.frequency_grid();
  std::optional<OracleTrack> oracle;
  std::set<std::size_t> all;
  for (std::size_t k = 0; k <= k_max; ++k) all.insert(k);
  if (cfg.oracle.kind != "none") {
    oracle = compute_oracle(cfg, signal, obs, sc.record, &grid, &all);
    CsvTable t(concat({"epoch", "time", "mass"}, axis_columns("mean", d), axis_columns("var", d)));
    for (std::size_t k = 0; k <= k_max; ++k) {
      std::vector<Cell> row = {k, static_cast<double>(k) * obs.epsilon(),
                               oracle->normalized ? 1.0 : oracle->grid_summaries[k].total_mass};
      for (double v : oracle->mean[k]) row.emplace_back(v);
      for (double v : oracle->variance[k]) row.emplace_back(v);
      t.add(row);
    }
    rs.add_table("oracle", t);
  }

  CsvTable est(concat({"method", "epoch", "time", "count_before", "count", "mass", "affected", "births", "deaths"},
                      axis_columns("mean", d), std::vector<std::string>{"error"}));
  CsvTable ens({"method", "lineage_id", "position"});
  const std::size_t n = cfg.particles.counts.front();
  bool extinct = false;
  for (auto m : methods(cfg)) {
    TrackingObserver track(oracle ? &grid : nullptr, oracle ? all : std::set<std::size_t>{});
    FilterOptions opt;
    opt.method = m;
    opt.population_control = cfg.population_control();
    const auto run = run_filter(signal, obs, sc.record, n, opt, particle_streams(master, 0, n), track);
    extinct = extinct || run.extinction.has_value();
    for (const auto& e : run.epochs) {
      std::vector<Cell> row = {method_name(m), e.epoch, e.time, e.count_before, e.count, e.mass, e.affected, e.births, e.deaths};
      for (double v : track.means[e.epoch]) row.emplace_back(v);
      double err = std::numeric_limits<double>::quiet_NaN();
      if (oracle && e.count > 0)
        err = sobolev_error(track.transforms.at(e.epoch), track.masses[e.epoch], oracle->transforms[e.epoch],
                            oracle->normalized, grid);
      row.emplace_back(err);
      est.add(row);
    }
    for (std::size_t i = 0; i < run.final_ensemble.size(); ++i) {
      std::string pos;
      for (std::size_t a = 0; a < d; ++a) pos += (a ? " " : "") + format_double(run.final_ensemble.position(i)[a]);
      ens.add({method_name(m), run.final_ensemble.lineage_ids[i], pos});
    }
  }
  rs.add_table("estimates", est);
  rs.add_table("final_ensemble", ens);
  if (oracle) {
    CsvTable t(concat(axis_columns("theta", d), std::vector<std::string>{"oracle_re", "oracle_im"}));
    const auto& tr = oracle->transforms[k_max];
    for (std::size_t k = 0; k < grid.size(); ++k) {
      std::vector<Cell> row;
      for (double v : grid.node(k)) row.emplace_back(v);
      row.emplace_back(tr.values[k].real());
      row.emplace_back(tr.values[k].imag());
      t.add(row);
    }
    rs.add_table("oracle_transform", t);
  }
  rs.add_check({"survival", extinct ? CheckStatus::fail : CheckStatus::pass, extinct ? 1.0 : 0.0,
                "no particle run goes extinct", ""});
  return rs;
}

inline ResultSet validate_command(const ExperimentConfig& cfg, std::ostream& log) {
  using namespace detail;
  ResultSet rs(cfg.name, "validate", cfg.seed, serialize_config(cfg));
  const StreamFactory master(cfg.seed);
  const auto& v = cfg.validate;
  auto timed = [&](const std::string& what, auto&& f) {
    Stopwatch sw;
    f();
    log << "  [" << what << " " << format_short(sw.seconds()) << " s]\n";
  };

  CsvTable cf({"alpha", "theta0", "theta1", "abs_error"});
  timed("characteristic function", [&] {
    for (double a : {0.8, 1.0, 1.5, 2.0}) rs.add_check(check_cf_fidelity(a, v.cf_samples, master.child(1), &cf));
  });
  rs.add_table("cf", cf);

  CsvTable off({"rho", "expected_offspring", "abs_error", "mc_mean", "mc_se"});
  timed("offspring", [&] { rs.add_check(check_offspring_unbiased(v.offspring_samples, master.child(2), &off)); });
  rs.add_table("offspring", off);

  CsvTable mom({"epsilon", "mean_abs_rho", "mean_rho_sq"});
  timed("weight moments", [&] {
    for (auto& c : check_weight_moments(cfg, v.moment_samples, master.child(3), &mom)) rs.add_check(c);
  });
  rs.add_table("weight_moments", mom);

  CsvTable comp({"theta", "mean_re", "se_re", "mean_im", "se_im"});
  timed("compensator", [&] {
    for (auto& c : check_compensator(cfg, v.compensator_particles, v.compensator_replications, master.child(4), &comp))
      rs.add_check(c);
  });
  rs.add_table("compensator", comp);

  CsvTable qv({"alpha", "theta", "t", "estimate", "se", "target"});
  timed("quadratic variation", [&] {
    for (auto& c : check_quadratic_variation(v.qv_cells, v.qv_paths, master.child(5), &qv)) rs.add_check(c);
  });
  rs.add_table("quadratic_variation", qv);

  CsvTable mass({"n", "m2", "m2_se", "m4", "m4_se"});
  timed("mass moments", [&] {
    auto sub = cfg;
    sub.seed = master.child(6).seed();
    for (auto& c : check_mass_stability(sub, v.mass_counts, v.mass_runs, &mass)) rs.add_check(c);
  });
  rs.add_table("mass_moments", mass);

  CsvTable orc({"n", "rms_standardized_error", "limit"});
  timed("oracle agreement", [&] {
    auto sub = cfg;
    sub.seed = master.child(7).seed();
    rs.add_check(check_oracle_agreement(sub, v.oracle_particles, v.oracle_replications, &orc));
  });
  rs.add_table("oracle_agreement", orc);

  CsvTable checks({"name", "status", "value", "criterion", "detail"});
  for (const auto& c : rs.checks()) checks.add({c.name, to_string(c.status), c.value, c.criterion, c.detail});
  rs.add_table("checks", checks);
  return rs;
}

inline ResultSet rate_sweep_command(const ExperimentConfig& cfg, std::ostream& log) {
  using namespace detail;
  if (cfg.oracle.kind == "none") throw ConfigError({"oracle.kind: rate-sweep needs an oracle (grid or kalman)"});
  ResultSet rs(cfg.name, "rate-sweep", cfg.seed, serialize_config(cfg));
  CsvTable errors({"method", "n", "replication", "epoch", "error"});
  CsvTable fit({"scenario", "method", "slope", "intercept", "ci_low", "ci_high", "residual"});
  CsvTable rms({"method", "n", "rms_error", "extinctions"});
  for (auto m : methods(cfg)) {
    Stopwatch sw;
    const auto r = rate_sweep(cfg, cfg.metric.epoch_stride, m);
    log << "  [" << method_name(m) << " sweep " << format_short(sw.seconds()) << " s]\n";
    for (const auto& w : r.warnings) log << "warning: " << w << "\n";
    for (const auto& row : r.rows) errors.add({method_name(m), row.n, row.replication, row.epoch, row.error});
    for (const auto& [n, e] : r.rms_final) {
      const auto it = r.extinctions.find(static_cast<std::size_t>(n));
      rms.add({method_name(m), static_cast<std::size_t>(n), e, it == r.extinctions.end() ? std::size_t{0} : it->second});
    }
    if (r.rms_final.size() < 3) {
      rs.add_check({"rate_slope_" + std::string(method_name(m)), CheckStatus::skipped, 0.0,
                    "slope in [-0.65, -0.35]", "fewer than three particle counts"});
      continue;
    }
    fit.add({cfg.name, method_name(m), r.fit.slope, r.fit.intercept, r.fit.ci_low, r.fit.ci_high, r.fit.residual});
    const bool ok = r.fit.slope >= -0.65 && r.fit.slope <= -0.35;
    if (cfg.particles.rate_assertions && m == ResamplingMethod::branching)
      rs.add_check(make_check("rate_slope_branching", ok, r.fit.slope, "slope of log RMS error vs log n in [-0.65, -0.35]"));
    else
      rs.add_check({"rate_slope_" + std::string(method_name(m)), CheckStatus::skipped, r.fit.slope,
                    "slope of log RMS error vs log n in [-0.65, -0.35]", "reported only"});
  }
  rs.add_table("errors", errors);
  rs.add_table("rms", rms);
  rs.add_table("fit", fit);
  return rs;
}

inline ResultSet compare_baseline_command(const ExperimentConfig& cfg) {
  ResultSet rs(cfg.name, "compare-baseline", cfg.seed, serialize_config(cfg));
  const auto r = compare_baseline(cfg);
  CsvTable rows({"epsilon", "method", "replication", "relocation_fraction", "error"});
  for (const auto& x : r.rows) rows.add({x.epsilon, x.method, x.replication, x.relocation_fraction, x.error});
  CsvTable sum({"epsilon", "branching_fraction", "multinomial_fraction", "branching_error", "multinomial_error"});
  for (const auto& s : r.summary) {
    if (std::isnan(s.branching_fraction)) continue;
    sum.add({s.epsilon, s.branching_fraction, s.multinomial_fraction, s.branching_error, s.multinomial_error});
    rs.add_check(make_check("sparser_than_baseline_eps_" + format_short(s.epsilon),
                            s.branching_fraction < s.multinomial_fraction, s.branching_fraction,
                            "branching relocation fraction < multinomial (" + format_short(s.multinomial_fraction) + ")"));
    if (s.epsilon <= 0.01)
      rs.add_check(make_check("sparse_branching_eps_" + format_short(s.epsilon), s.branching_fraction < 0.2,
                              s.branching_fraction, "branching relocation fraction < 0.2"));
  }
  rs.add_table("runs", rows);
  rs.add_table("summary", sum);
  return rs;
}

inline ResultSet build_results(const std::string& command, const ExperimentConfig& cfg, std::ostream& log) {
  const auto& names = command_names();
  if (std::find(names.begin(), names.end(), command) == names.end())
    throw ConfigError({"command: unknown command '" + command + "'"});
  // No observation epochs: nothing to run, the manifest records the config.
  if (observation_count(cfg.horizon, cfg.observation.epsilon) == 0) {
    if (command == "rate-sweep" && cfg.oracle.kind == "none")
      throw ConfigError({"oracle.kind: rate-sweep needs an oracle (grid or kalman)"});
    log << "horizon shorter than one observation interval; no epochs to run\n";
    return ResultSet(cfg.name, command, cfg.seed, serialize_config(cfg));
  }
  if (command == "simulate") return simulate_command(cfg);
  if (command == "validate") return validate_command(cfg, log);
  if (command == "rate-sweep") return rate_sweep_command(cfg, log);
  if (command == "compare-baseline") return compare_baseline_command(cfg);
  throw ConfigError({"command: unknown command '" + command + "'"});
}

// Runs, writes, logs; returns 0 or 1.
inline int run_command(const std::string& command, const ExperimentConfig& cfg, std::ostream& log) {
  detail::Stopwatch sw;
  const auto rs = build_results(command, cfg, log);
  const auto path = rs.write(cfg.output_directory);
  detail::log_checks(rs, log);
  const bool failed = rs.any_failed();
  log << "manifest: " << path.string() << "\n"
      << command << " finished in " << format_short(sw.seconds()) << " s\n";
  return failed ? 1 : 0;
}

}  // namespace bpf::harness
