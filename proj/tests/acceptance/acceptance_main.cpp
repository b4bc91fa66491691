// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bpf/harness/commands.hpp"
#include "bpf/harness/config.hpp"
#include "bpf/harness/experiments.hpp"
#include "bpf/harness/results.hpp"
#include "bpf/harness/validation.hpp"

namespace {

using namespace bpf;
using namespace bpf::harness;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string summary;
};

std::string all_details(const std::vector<CheckResult>& cs) {
  std::string s;
  for (const auto& c : cs) s += (s.empty() ? "" : "; ") + c.name + "=" + format_short(c.value);
  return s;
}

bool all_pass(const std::vector<CheckResult>& cs) {
  return std::all_of(cs.begin(), cs.end(), [](const auto& c) { return c.status == CheckStatus::pass; });
}

ExperimentConfig default_scenario() { return parse_config(""); }

// alpha = 2, h(x) = x unclipped in practice, N(0, 1) start. T = 1 keeps the
// unnormalized mass, and with it the particle count, within memory.
ExperimentConfig kalman_scenario() {
  return parse_config(
      "[scenario]\nhorizon = 1.0\n[observation]\nsensor = clipped_linear\nmatrix = [[1.0]]\nbound = 1e6\n"
      "[oracle]\nkind = kalman\n");
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cf_fidelity(const StreamFactory& s) {
  std::vector<CheckResult> cs;
  for (double a : {0.8, 1.0, 1.5, 2.0}) cs.push_back(check_cf_fidelity(a, 100000, s));
  return {all_pass(cs), all_details(cs) + " (limit 0.0316)"};
}

Outcome offspring(const StreamFactory& s) {
  const auto c = check_offspring_unbiased(100000, s);
  return {c.status == CheckStatus::pass, "max analytic error " + format_short(c.value) + ", " + c.detail};
}

Outcome weight_moments(const StreamFactory& s) {
  const auto cs = check_weight_moments(default_scenario(), 100000, s);
  return {all_pass(cs), all_details(cs) + " (targets [0.35, 0.65] and [0.85, 1.15])"};
}

Outcome compensator(const StreamFactory& s) {
  const auto cs = check_compensator(default_scenario(), 1000, 200, s);
  return {all_pass(cs), all_details(cs) + " (largest |mean| / SE, limit 5)"};
}

Outcome quadratic_variation(const StreamFactory& s) {
  const auto cs = check_quadratic_variation(10000, 200, s);
  return {all_pass(cs), all_details(cs) + " (targets 2 within 2%, 2.828 within 5 SE)"};
}

Outcome rate(std::uint64_t seed) {
  auto cfg = default_scenario();
  cfg.seed = seed;
  cfg.particles.counts = {250, 500, 1000, 2000, 4000, 8000, 16000};
  cfg.particles.replications = 100;
  const auto r = rate_sweep(cfg);
  std::size_t extinct = 0;
  for (const auto& [n, c] : r.extinctions) extinct += c;
  const bool ok = r.rms_final.size() == 7 && r.fit.slope >= -0.65 && r.fit.slope <= -0.35;
  return {ok, "slope " + format_short(r.fit.slope) + " (CI " + format_short(r.fit.ci_low) + ", " +
                  format_short(r.fit.ci_high) + "), " + std::to_string(extinct) + " extinctions, target [-0.65, -0.35]"};
}

Outcome kalman(std::uint64_t seed) {
  auto cfg = kalman_scenario();
  cfg.seed = seed;
  const auto at = oracle_agreement(cfg, {10000}, 20);
  const double limit = 5.0 / std::sqrt(1e4);
  const bool level_ok = at.rms.size() == 1 && at.rms[0].second < limit;
  const auto sweep = oracle_agreement(cfg, {1000, 4000, 16000}, 50);
  bool slope_ok = false;
  double slope = NAN;
  if (sweep.rms.size() == 3) {
    slope = rate_fit(sweep.rms).slope;
    slope_ok = slope >= -0.65 && slope <= -0.35;
  }
  return {level_ok && slope_ok, "RMS standardized error at n = 1e4 " +
                                    format_short(at.rms.empty() ? NAN : at.rms[0].second) + " (limit " +
                                    format_short(limit) + "), slope " + format_short(slope) + " (target [-0.65, -0.35])"};
}

Outcome sparsity(std::uint64_t seed) {
  auto cfg = default_scenario();
  cfg.seed = seed;
  cfg.oracle.kind = "none";
  cfg.compare.epsilons = {0.1, 0.05, 0.025, 0.0125};
  cfg.compare.particles = 2000;
  cfg.compare.replications = 20;
  const auto r = compare_baseline(cfg);
  std::vector<std::pair<double, double>> pts;
  for (const auto& s : r.summary) pts.emplace_back(s.epsilon, s.branching_fraction);
  const double slope = rate_fit(pts).slope;
  const auto& last = r.summary.back();
  const bool ok = slope >= 0.35 && slope <= 0.65 && last.branching_fraction < 0.1 && last.multinomial_fraction > 0.9;
  return {ok, "slope " + format_short(slope) + " (target [0.35, 0.65]), at eps 0.0125 branching " +
                  format_short(last.branching_fraction) + " (< 0.1), multinomial " +
                  format_short(last.multinomial_fraction) + " (> 0.9)"};
}

Outcome mass(std::uint64_t seed) {
  auto cfg = default_scenario();
  cfg.seed = seed;
  const auto cs = check_mass_stability(cfg, {500, 2000, 8000}, 200);
  const auto& second = cs.front();
  return {second.status == CheckStatus::pass, second.detail + " (pass when the lower bound is <= 0)"};
}

Outcome determinism(const fs::path& out) {
  auto cfg = parse_config(R"(
[scenario]
name = determinism
[validate]
cf_samples = 5000
offspring_samples = 5000
moment_samples = 5000
compensator_particles = 100
compensator_replications = 20
qv_paths = 20
qv_cells = 1000
mass_counts = [100, 200]
mass_runs = 20
oracle_particles = 500
oracle_replications = 3
)");
  const fs::path dir = out / "determinism";
  fs::remove_all(dir);
  cfg.output_directory = dir.string();
  std::ostringstream log;
  run_command("validate", cfg, log);
  const auto manifest = dir / "determinism_validate_manifest.json";
  const auto first = read_file(manifest);
  run_command("validate", cfg, log);
  const auto second = read_file(manifest);
  const bool ok = !first.empty() && first == second;
  return {ok, std::to_string(first.size()) + "-byte manifest, sha256 " + sha256_hex(first).substr(0, 16) +
                  (ok ? " on both runs" : " vs " + sha256_hex(second).substr(0, 16))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::string out = "acceptance_out";
  std::vector<std::size_t> only;
  app.add_option("--out", out, "directory for acceptance artifacts");
  app.add_option("--only", only, "run only these criterion numbers")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::uint64_t seed = parse_config("").seed;
  const StreamFactory master(seed);
  struct Criterion {
    std::string name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"characteristic-function fidelity", [&] { return cf_fidelity(master.child(1)); }},
      {"offspring unbiasedness", [&] { return offspring(master.child(2)); }},
      {"weight moment scaling", [&] { return weight_moments(master.child(3)); }},
      {"compensated martingale mean", [&] { return compensator(master.child(4)); }},
      {"quadratic variation identities", [&] { return quadratic_variation(master.child(5)); }},
      {"empirical n-rate against the grid oracle", [&] { return rate(master.child(6).seed()); }},
      {"Kalman cross-check", [&] { return kalman(master.child(7).seed()); }},
      {"branch sparsity against multinomial resampling", [&] { return sparsity(master.child(8).seed()); }},
      {"mass moment stability", [&] { return mass(master.child(9).seed()); }},
      {"validate determinism", [&] { return determinism(out); }},
  };

  ResultSet rs("acceptance", "acceptance", seed, serialize_config(parse_config("")));
  CsvTable table({"criterion", "name", "status", "summary"});
  int failures = 0;
  std::size_t ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && std::find(only.begin(), only.end(), i + 1) == only.end()) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].name << ": " << o.summary
              << "  [" << format_short(secs) << " s]" << std::endl;
    table.add({i + 1, criteria[i].name, o.pass ? "PASS" : "FAIL", o.summary});
  }
  rs.add_table("criteria", table);
  rs.write(out);
  std::cout << (ran - failures) << "/" << ran << " criteria passed" << std::endl;
  return failures ? 1 : 0;
}
