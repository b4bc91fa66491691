// bpf: run simulate, validate, rate-sweep or compare-baseline on a config.
//
// Exit codes: 0 pass, 1 check failure, 2 config error, 3 runtime error.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bpf/errors.hpp"
#include "bpf/harness/commands.hpp"
#include "bpf/harness/config.hpp"

int main(int argc, char** argv) {
  using namespace bpf::harness;
  CLI::App app{"Branching particle filter for stable-signal filtering experiments"};
  std::string command, config_path, out_dir;
  std::optional<std::uint64_t> seed;
  bool strict = false;
  app.add_option("command", command, "simulate | validate | rate-sweep | compare-baseline")
      ->required()
      ->check(CLI::IsMember(command_names()));
  app.add_option("--config", config_path, "experiment config file")->required();
  app.add_option("--seed", seed, "master seed, overrides the config");
  app.add_option("--out", out_dir, "output directory, overrides the config");
  app.add_flag("--strict", strict, "turn grid-oracle accuracy warnings into errors");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    auto cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.output_directory = out_dir;
    if (strict) cfg.oracle.strict = true;
    return run_command(command, cfg, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const bpf::ParameterError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const SweepAborted& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  }
}
