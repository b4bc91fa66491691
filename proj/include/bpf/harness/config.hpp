#pragma once

// Experiment configuration: a sectioned key/value document.
//
//   [section]
//   key = value      # comment
//
// Values are JSON scalars or arrays (bare words are read as strings). The
// schema is documented in configs/default.ini.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bpf/branching_engine.hpp"
#include "bpf/errors.hpp"
#include "bpf/filter_model.hpp"
#include "bpf/frequency_grid.hpp"
#include "bpf/reference_filter.hpp"
#include "bpf/stable_process.hpp"

namespace bpf::harness {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> violations)
      : std::runtime_error(join(violations)), violations_(std::move(violations)) {}
  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s = "invalid configuration:";
    for (const auto& x : v) s += "\n  " + x;
    return s;
  }
  std::vector<std::string> violations_;
};

struct SignalConfig {
  std::size_t dimension = 1;
  double alpha = 2.0;
  std::vector<SpectralAtom> atoms = {{{1.0}, 0.5}};
  std::string initial = "gaussian";  // point | gaussian | uniform
  Vector initial_mean = {0.0};
  Vector initial_std = {1.0};
  Vector initial_lo = {-1.0};
  Vector initial_hi = {1.0};
  Vector initial_location = {0.0};
};

struct ObservationConfig {
  std::size_t dimension = 1;
  double epsilon = 0.1;
  std::string sensor = "gaussian_bump";  // gaussian_bump | clipped_linear | zero
  Vector amplitude = {1.0};
  std::vector<Vector> centers = {{0.0}};
  Vector widths = {1.0};
  std::vector<Vector> matrix = {{1.0}};
  Vector offset = {};
  double bound = 1e6;
};

struct ParticleConfig {
  std::vector<std::size_t> counts = {1000};
  std::size_t replications = 20;
  std::string baseline = "branching";  // branching | multinomial | both
  bool population_control = false;
  std::size_t pc_target = 0;  // 0: first entry of counts
  double pc_lo = 0.5;
  double pc_hi = 2.0;
  double xi = 1.0;
  bool rate_assertions = true;
  double extinction_threshold = 0.2;
};

struct MetricConfig {
  std::optional<double> gamma;
  std::optional<double> cutoff;
  std::optional<double> spacing;
  std::size_t epoch_stride = 0;  // rate-sweep errors every k-th epoch; 0: final epoch only
};

struct OracleConfig {
  std::string kind = "grid";  // grid | kalman | none
  std::size_t grid_points = 512;
  double grid_halfwidth = 10.0;
  bool strict = false;
};

struct CompareConfig {
  std::vector<double> epsilons = {0.1, 0.05, 0.025, 0.0125};
  std::size_t particles = 2000;
  std::size_t replications = 5;
};

// Sample sizes used by the validate command.
struct ValidateConfig {
  std::size_t cf_samples = 100000;
  std::size_t offspring_samples = 100000;
  std::size_t moment_samples = 100000;
  std::size_t compensator_particles = 1000;
  std::size_t compensator_replications = 200;
  std::size_t qv_paths = 200;
  std::size_t qv_cells = 10000;
  std::vector<std::size_t> mass_counts = {500, 2000, 8000};
  std::size_t mass_runs = 200;
  std::size_t oracle_particles = 10000;
  std::size_t oracle_replications = 20;
};

struct ExperimentConfig {
  std::string name = "default";
  double horizon = 2.0;
  std::uint64_t seed = 20240601;
  SignalConfig signal;
  ObservationConfig observation;
  ParticleConfig particles;
  MetricConfig metric;
  OracleConfig oracle;
  CompareConfig compare;
  ValidateConfig validate;
  std::string output_directory = "results";

  InitialLaw initial_law() const {
    if (signal.initial == "point") return InitialLaw(PointMass{signal.initial_location});
    if (signal.initial == "uniform") return InitialLaw(ProductUniform{signal.initial_lo, signal.initial_hi});
    return InitialLaw(ProductGaussian{signal.initial_mean, signal.initial_std});
  }

  SignalModel signal_model() const {
    return SignalModel(signal.alpha, SpectralMeasure(signal.dimension, signal.atoms), initial_law());
  }

  SensorFunction sensor() const {
    if (observation.sensor == "gaussian_bump")
      return GaussianBump{observation.amplitude, observation.centers, observation.widths};
    if (observation.sensor == "clipped_linear")
      return ClippedLinear{observation.matrix, observation.offset, observation.bound};
    return ZeroSensor{};
  }

  ObservationModel observation_model(std::optional<double> epsilon = std::nullopt) const {
    return ObservationModel(sensor(), signal.dimension, observation.dimension, epsilon.value_or(observation.epsilon));
  }

  FrequencyGrid frequency_grid() const {
    const auto def = FrequencyGrid::defaults(signal.dimension, signal.alpha);
    return FrequencyGrid(signal.dimension, metric.cutoff.value_or(def.cutoff()), metric.spacing.value_or(def.spacing()),
                         metric.gamma.value_or(def.gamma()));
  }

  GridParams grid_params() const {
    GridParams p;
    p.points_per_axis = oracle.grid_points;
    p.halfwidth = oracle.grid_halfwidth;
    p.strict = oracle.strict;
    return p;
  }

  std::optional<PopulationControl> population_control() const {
    if (!particles.population_control) return std::nullopt;
    return PopulationControl{particles.pc_target ? particles.pc_target : particles.counts.front(), particles.pc_lo,
                             particles.pc_hi};
  }
};

namespace detail {

using nlohmann::json;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline json parse_value(const std::string& raw) {
  const json j = json::parse(raw, nullptr, false);
  if (!j.is_discarded()) return j;
  return raw;  // bare word
}

// Reads typed values and records violations instead of throwing.
class Reader {
 public:
  Reader(std::map<std::string, json> values, std::vector<std::string>& errors)
      : values_(std::move(values)), errors_(errors) {}

  template <class T>
  void get(const std::string& key, T& out) {
    const auto it = values_.find(key);
    if (it == values_.end()) return;
    used_.push_back(key);
    if (!integers_ok<T>(it->second)) {
      errors_.push_back(key + ": expected non-negative integers, got " + it->second.dump());
      return;
    }
    try {
      out = it->second.get<T>();
    } catch (const std::exception&) {
      errors_.push_back(key + ": expected " + type_name<T>() + ", got " + it->second.dump());
    }
  }

  template <class T>
  void get(const std::string& key, std::optional<T>& out) {
    T v{};
    const auto before = errors_.size();
    if (!values_.count(key)) return;
    get(key, v);
    if (errors_.size() == before) out = v;
  }

  void get_atoms(const std::string& key, std::vector<SpectralAtom>& out) {
    const auto it = values_.find(key);
    if (it == values_.end()) return;
    used_.push_back(key);
    std::vector<SpectralAtom> atoms;
    try {
      for (const auto& a : it->second) atoms.push_back({a.at("direction").get<Vector>(), a.at("weight").get<double>()});
      out = std::move(atoms);
    } catch (const std::exception&) {
      errors_.push_back(key + R"(: expected a list of {"direction": [...], "weight": w})");
    }
  }

  void report_unknown() {
    for (const auto& [k, v] : values_)
      if (std::find(used_.begin(), used_.end(), k) == used_.end()) errors_.push_back(k + ": unknown key");
  }

 private:
  template <class T>
  struct element {
    using type = T;
  };
  template <class T>
  struct element<std::vector<T>> {
    using type = typename element<T>::type;
  };

  // Unsigned targets accept only non-negative integer literals.
  template <class T>
  static bool integers_ok(const json& j) {
    using E = typename element<T>::type;
    if constexpr (std::is_integral_v<E> && std::is_unsigned_v<E> && !std::is_same_v<E, bool>) {
      if (j.is_array()) {
        for (const auto& x : j)
          if (!integers_ok<E>(x)) return false;
        return true;
      }
      return j.is_number_unsigned();
    } else {
      return true;
    }
  }

  template <class T>
  static std::string type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else if constexpr (std::is_arithmetic_v<T>) return "a number";
    else return "a list";
  }

  std::map<std::string, json> values_;
  std::vector<std::string>& errors_;
  std::vector<std::string> used_;
};

inline bool is_unit(const Vector& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::abs(std::sqrt(s) - 1.0) <= 1e-12;
}

inline void validate(const ExperimentConfig& c, std::vector<std::string>& e) {
  const auto& s = c.signal;
  const auto& o = c.observation;
  const auto& p = c.particles;
  if (c.name.empty() || c.name.find_first_of("/\\ ") != std::string::npos)
    e.push_back("scenario.name: must be a non-empty word without spaces or slashes");
  if (!(s.alpha > 0.0 && s.alpha <= 2.0)) e.push_back("signal.alpha: must lie in (0, 2], got " + std::to_string(s.alpha));
  if (s.dimension < 1) e.push_back("signal.dimension: must be >= 1");
  if (s.atoms.empty()) e.push_back("signal.atoms: at least one atom required");
  for (std::size_t i = 0; i < s.atoms.size(); ++i) {
    const auto& a = s.atoms[i];
    const std::string at = "signal.atoms[" + std::to_string(i) + "]";
    if (a.direction.size() != s.dimension) e.push_back(at + ": direction length differs from signal.dimension");
    else if (!is_unit(a.direction)) e.push_back(at + ": direction must have unit norm");
    if (!(a.weight > 0.0) || !std::isfinite(a.weight)) e.push_back(at + ": weight must be positive");
  }
  if (s.initial == "point") {
    if (s.initial_location.size() != s.dimension) e.push_back("signal.initial_location: length must equal signal.dimension");
  } else if (s.initial == "gaussian") {
    if (s.initial_mean.size() != s.dimension) e.push_back("signal.initial_mean: length must equal signal.dimension");
    if (s.initial_std.size() != s.dimension) e.push_back("signal.initial_std: length must equal signal.dimension");
    for (double v : s.initial_std)
      if (!(v > 0.0)) e.push_back("signal.initial_std: entries must be positive");
  } else if (s.initial == "uniform") {
    if (s.initial_lo.size() != s.dimension || s.initial_hi.size() != s.dimension)
      e.push_back("signal.initial_lo/initial_hi: lengths must equal signal.dimension");
    else
      for (std::size_t i = 0; i < s.dimension; ++i)
        if (!(s.initial_lo[i] < s.initial_hi[i])) e.push_back("signal.initial_lo: must be below signal.initial_hi");
  } else {
    e.push_back("signal.initial: must be point, gaussian or uniform, got " + s.initial);
  }

  if (!(o.epsilon > 0.0 && o.epsilon <= 1.0))
    e.push_back("observation.epsilon: must lie in (0, 1], got " + std::to_string(o.epsilon));
  if (o.dimension < 1) e.push_back("observation.dimension: must be >= 1");
  if (o.sensor != "gaussian_bump" && o.sensor != "clipped_linear" && o.sensor != "zero")
    e.push_back("observation.sensor: must be gaussian_bump, clipped_linear or zero, got " + o.sensor);
  if (!(c.horizon >= 0.0) || !std::isfinite(c.horizon)) e.push_back("scenario.horizon: must be finite and >= 0");

  if (p.counts.empty()) e.push_back("particles.counts: at least one particle count required");
  for (auto n : p.counts)
    if (n < 1) e.push_back("particles.counts: entries must be >= 1");
  if (p.replications < 1) e.push_back("particles.replications: must be >= 1");
  if (p.baseline != "branching" && p.baseline != "multinomial" && p.baseline != "both")
    e.push_back("particles.baseline: must be branching, multinomial or both, got " + p.baseline);
  if (!(p.pc_lo > 0.0 && p.pc_lo < 1.0 && p.pc_hi > 1.0))
    e.push_back("particles.pc_lo/pc_hi: need 0 < pc_lo < 1 < pc_hi");
  if (!(p.xi > 0.0)) e.push_back("particles.xi: must be positive");
  if (!(p.extinction_threshold >= 0.0 && p.extinction_threshold <= 1.0))
    e.push_back("particles.extinction_threshold: must lie in [0, 1]");
  if (p.rate_assertions && !p.counts.empty()) {
    const auto n_min = *std::min_element(p.counts.begin(), p.counts.end());
    if (std::sqrt(o.epsilon) * static_cast<double>(n_min) < p.xi)
      e.push_back("particles.counts: sqrt(epsilon) * min(counts) must be >= particles.xi when rate assertions are on");
  }

  if (c.metric.gamma && !(*c.metric.gamma < -0.5 * static_cast<double>(s.dimension)))
    e.push_back("metric.gamma: must be < -d/2");
  if (c.metric.cutoff && !(*c.metric.cutoff > 0.0)) e.push_back("metric.cutoff: must be positive");
  if (c.metric.spacing && !(*c.metric.spacing > 0.0)) e.push_back("metric.spacing: must be positive");
  if (s.dimension > 2) e.push_back("signal.dimension: the metric grid supports dimensions 1 and 2");

  if (c.oracle.kind != "grid" && c.oracle.kind != "kalman" && c.oracle.kind != "none")
    e.push_back("oracle.kind: must be grid, kalman or none, got " + c.oracle.kind);
  if (c.oracle.kind == "kalman") {
    if (s.alpha != 2.0) e.push_back("oracle.kind: kalman requires signal.alpha = 2");
    if (o.sensor != "clipped_linear") e.push_back("oracle.kind: kalman requires observation.sensor = clipped_linear");
    if (s.initial == "uniform") e.push_back("oracle.kind: kalman requires a point or gaussian initial law");
  }
  if (c.oracle.grid_points < 64 || (c.oracle.grid_points & (c.oracle.grid_points - 1)) != 0)
    e.push_back("oracle.grid_points: must be a power of two >= 64");
  if (!(c.oracle.grid_halfwidth > 0.0)) e.push_back("oracle.grid_halfwidth: must be positive");

  if (c.compare.epsilons.empty()) e.push_back("compare.epsilons: at least one value required");
  for (double eps : c.compare.epsilons)
    if (!(eps > 0.0 && eps <= 1.0)) e.push_back("compare.epsilons: entries must lie in (0, 1]");
  if (c.compare.particles < 1) e.push_back("compare.particles: must be >= 1");
  if (c.compare.replications < 1) e.push_back("compare.replications: must be >= 1");

  const auto& v = c.validate;
  if (v.cf_samples < 1 || v.offspring_samples < 1 || v.moment_samples < 1 || v.compensator_particles < 1 ||
      v.compensator_replications < 2 || v.qv_paths < 2 || v.mass_runs < 2 || v.oracle_particles < 1 ||
      v.oracle_replications < 1)
    e.push_back("validate: sample sizes must be >= 1 (replication counts >= 2)");
  if (v.qv_cells < 100) e.push_back("validate.qv_cells: must be >= 100");
  if (v.mass_counts.size() < 2) e.push_back("validate.mass_counts: at least two particle counts required");

  if (c.output_directory.empty()) e.push_back("output.directory: must not be empty");

  // Constructing the models catches anything the checks above missed, e.g.
  // sensor shape mismatches.
  if (e.empty()) {
    try {
      c.signal_model();
    } catch (const std::exception& x) {
      e.push_back(std::string("signal: ") + x.what());
    }
    try {
      c.observation_model();
    } catch (const std::exception& x) {
      e.push_back(std::string("observation: ") + x.what());
    }
  }
}

inline std::string fmt(const nlohmann::json& j) { return j.dump(); }

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  using detail::json;
  std::vector<std::string> errors;
  std::map<std::string, json> values;
  std::istringstream is(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        errors.push_back("line " + std::to_string(lineno) + ": malformed section header");
        continue;
      }
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    const std::string key = (section.empty() ? "" : section + ".") + detail::trim(line.substr(0, eq));
    if (values.count(key)) errors.push_back(key + ": duplicate key");
    values[key] = detail::parse_value(detail::trim(line.substr(eq + 1)));
  }

  ExperimentConfig c;
  detail::Reader r(std::move(values), errors);
  r.get("scenario.name", c.name);
  r.get("scenario.horizon", c.horizon);
  r.get("scenario.seed", c.seed);

  auto& s = c.signal;
  r.get("signal.dimension", s.dimension);
  r.get("signal.alpha", s.alpha);
  r.get_atoms("signal.atoms", s.atoms);
  r.get("signal.initial", s.initial);
  r.get("signal.initial_mean", s.initial_mean);
  r.get("signal.initial_std", s.initial_std);
  r.get("signal.initial_lo", s.initial_lo);
  r.get("signal.initial_hi", s.initial_hi);
  r.get("signal.initial_location", s.initial_location);

  auto& o = c.observation;
  r.get("observation.dimension", o.dimension);
  r.get("observation.epsilon", o.epsilon);
  r.get("observation.sensor", o.sensor);
  r.get("observation.amplitude", o.amplitude);
  r.get("observation.centers", o.centers);
  r.get("observation.widths", o.widths);
  r.get("observation.matrix", o.matrix);
  r.get("observation.offset", o.offset);
  r.get("observation.bound", o.bound);

  auto& p = c.particles;
  r.get("particles.counts", p.counts);
  r.get("particles.replications", p.replications);
  r.get("particles.baseline", p.baseline);
  r.get("particles.population_control", p.population_control);
  r.get("particles.pc_target", p.pc_target);
  r.get("particles.pc_lo", p.pc_lo);
  r.get("particles.pc_hi", p.pc_hi);
  r.get("particles.xi", p.xi);
  r.get("particles.rate_assertions", p.rate_assertions);
  r.get("particles.extinction_threshold", p.extinction_threshold);

  r.get("metric.gamma", c.metric.gamma);
  r.get("metric.cutoff", c.metric.cutoff);
  r.get("metric.spacing", c.metric.spacing);
  r.get("metric.epoch_stride", c.metric.epoch_stride);

  r.get("oracle.kind", c.oracle.kind);
  r.get("oracle.grid_points", c.oracle.grid_points);
  r.get("oracle.grid_halfwidth", c.oracle.grid_halfwidth);
  r.get("oracle.strict", c.oracle.strict);

  r.get("compare.epsilons", c.compare.epsilons);
  r.get("compare.particles", c.compare.particles);
  r.get("compare.replications", c.compare.replications);

  auto& v = c.validate;
  r.get("validate.cf_samples", v.cf_samples);
  r.get("validate.offspring_samples", v.offspring_samples);
  r.get("validate.moment_samples", v.moment_samples);
  r.get("validate.compensator_particles", v.compensator_particles);
  r.get("validate.compensator_replications", v.compensator_replications);
  r.get("validate.qv_paths", v.qv_paths);
  r.get("validate.qv_cells", v.qv_cells);
  r.get("validate.mass_counts", v.mass_counts);
  r.get("validate.mass_runs", v.mass_runs);
  r.get("validate.oracle_particles", v.oracle_particles);
  r.get("validate.oracle_replications", v.oracle_replications);

  r.get("output.directory", c.output_directory);
  r.report_unknown();

  if (errors.empty()) detail::validate(c, errors);
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return c;
}

// Canonical text form; parse_config(serialize_config(c)) reproduces c.
inline std::string serialize_config(const ExperimentConfig& c) {
  using detail::fmt;
  using detail::json;
  std::ostringstream os;
  auto kv = [&](const char* k, const json& v) { os << k << " = " << fmt(v) << '\n'; };
  os << "[scenario]\n";
  kv("name", c.name);
  kv("horizon", c.horizon);
  kv("seed", c.seed);
  os << "\n[signal]\n";
  kv("dimension", c.signal.dimension);
  kv("alpha", c.signal.alpha);
  json atoms = json::array();
  for (const auto& a : c.signal.atoms) atoms.push_back({{"direction", a.direction}, {"weight", a.weight}});
  kv("atoms", atoms);
  kv("initial", c.signal.initial);
  kv("initial_mean", c.signal.initial_mean);
  kv("initial_std", c.signal.initial_std);
  kv("initial_lo", c.signal.initial_lo);
  kv("initial_hi", c.signal.initial_hi);
  kv("initial_location", c.signal.initial_location);
  os << "\n[observation]\n";
  kv("dimension", c.observation.dimension);
  kv("epsilon", c.observation.epsilon);
  kv("sensor", c.observation.sensor);
  kv("amplitude", c.observation.amplitude);
  kv("centers", c.observation.centers);
  kv("widths", c.observation.widths);
  kv("matrix", c.observation.matrix);
  kv("offset", c.observation.offset);
  kv("bound", c.observation.bound);
  os << "\n[particles]\n";
  kv("counts", c.particles.counts);
  kv("replications", c.particles.replications);
  kv("baseline", c.particles.baseline);
  kv("population_control", c.particles.population_control);
  kv("pc_target", c.particles.pc_target);
  kv("pc_lo", c.particles.pc_lo);
  kv("pc_hi", c.particles.pc_hi);
  kv("xi", c.particles.xi);
  kv("rate_assertions", c.particles.rate_assertions);
  kv("extinction_threshold", c.particles.extinction_threshold);
  os << "\n[metric]\n";
  if (c.metric.gamma) kv("gamma", *c.metric.gamma);
  if (c.metric.cutoff) kv("cutoff", *c.metric.cutoff);
  if (c.metric.spacing) kv("spacing", *c.metric.spacing);
  kv("epoch_stride", c.metric.epoch_stride);
  os << "\n[oracle]\n";
  kv("kind", c.oracle.kind);
  kv("grid_points", c.oracle.grid_points);
  kv("grid_halfwidth", c.oracle.grid_halfwidth);
  kv("strict", c.oracle.strict);
  os << "\n[compare]\n";
  kv("epsilons", c.compare.epsilons);
  kv("particles", c.compare.particles);
  kv("replications", c.compare.replications);
  os << "\n[validate]\n";
  kv("cf_samples", c.validate.cf_samples);
  kv("offspring_samples", c.validate.offspring_samples);
  kv("moment_samples", c.validate.moment_samples);
  kv("compensator_particles", c.validate.compensator_particles);
  kv("compensator_replications", c.validate.compensator_replications);
  kv("qv_paths", c.validate.qv_paths);
  kv("qv_cells", c.validate.qv_cells);
  kv("mass_counts", c.validate.mass_counts);
  kv("mass_runs", c.validate.mass_runs);
  kv("oracle_particles", c.validate.oracle_particles);
  kv("oracle_replications", c.validate.oracle_replications);
  os << "\n[output]\n";
  kv("directory", c.output_directory);
  return os.str();
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot read config file " + path});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace bpf::harness
