#pragma once

// Command-line wiring: a JSON run configuration with per-field provenance
// (default / file / flag), strict unknown-key rejection, and the dispatcher
// that connects subcommands to the data, training, synthesis and experiment
// engines. Every command writes its outputs atomically and drops a run.json
// manifest (resolved config, provenance, seed, versions, wall time) next to
// them.

#include <nlohmann/json.hpp>

#include <map>
#include <string>
#include <vector>

namespace flowctl {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Fully resolved configuration; `values` follows the default schema exactly.
struct RunConfig {
  nlohmann::json values;
  std::map<std::string, std::string> provenance;  // dotted path -> default|file|flag
};

nlohmann::json default_config_json();

// Merges defaults <- file <- flag overrides. Unknown or type-mismatched keys
// raise ConfigError naming the dotted path; range constraints are checked
// after merging.
RunConfig parse_config(const std::string& file_path,
                       const std::map<std::string, nlohmann::json>& flag_overrides);

// Runs one subcommand. Returns 0 on success. Configuration errors raise
// ConfigError; runtime failures raise std::exception subclasses. The CLI
// wrapper maps these to exit codes 2 and 1.
int dispatch(const std::string& command, const RunConfig& cfg);

// Full CLI entry point (argument parsing, dispatch, error-to-exit-code
// mapping). Exposed as a library call so tests can drive the real pipeline.
int run_cli(const std::vector<std::string>& args);

const std::vector<std::string>& cli_commands();

}  // namespace flowctl
