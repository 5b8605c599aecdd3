#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mmou/config.hpp"

namespace mmou {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitValidation = 2, kExitNumerical = 3 };

struct RunResult {
  std::vector<std::string> outputs;  ///< file names written under output_dir
  std::vector<std::string> warnings;
};

/// Executes cfg.command, writing CSV tables and manifest.json into
/// cfg.output_dir. Engine errors propagate as exceptions.
RunResult run(const RunConfig& cfg, int threads);

/// Formats a double with 17 significant digits ("nan", "inf", "-inf" for
/// non-finite values).
std::string format_double(double x);

struct Invocation {
  std::string command;  ///< a run command or "emit-config"
  std::filesystem::path config;
  ConfigOverrides overrides;
  int threads = 0;  ///< 0: all hardware threads
};

/// Parses, runs and maps failures to exit codes: 2 for validation errors,
/// 3 for numerical errors. Messages go to `err`; emit-config writes to `out`.
int execute(const Invocation& inv, std::ostream& out, std::ostream& err);

}  // namespace mmou
