#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mptlml/error.hpp"

namespace mptlml {

// Command-line overrides; they win over the same keys in the config file.
struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
};

struct RunOutcome {
  int exit_code = 0;  // 0 ok, 2 config, 3 I/O or malformed input, 4 numeric failure
  std::string message;
};

const std::vector<std::string>& experiment_commands();

// Runs one experiment command. `config_json` may be empty ("{}" is assumed).
// Every run writes resolved_config.json, summary.json and manifest.json into
// the output directory next to its CSV artifacts.
RunOutcome run_experiment(const std::string& command, const std::string& config_json,
                          const RunOverrides& overrides);

// 2 for configuration problems, 3 for I/O and malformed files, 4 for numeric
// failures.
int exit_code_for(ErrorCode code);

}  // namespace mptlml
