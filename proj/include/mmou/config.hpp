#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmou/model.hpp"

namespace mmou {

inline const std::vector<std::string>& run_commands() {
  static const std::vector<std::string> names{"validate",   "simulate", "moments", "covariance",
                                              "transform", "scaling",  "multi"};
  return names;
}

struct SimulateOptions {
  std::string method = "exact";  ///< "exact" or "euler"
  double dt = 1e-3;
};

struct ScalingOptions {
  std::vector<double> n_values{16.0, 64.0, 256.0};
  std::vector<double> h_values{0.0, 0.5, 1.0, 1.5};
  double t_eval = 1.0;
  std::size_t n_paths = 10000;
};

/// A fully validated experiment description.
struct RunConfig {
  std::string command;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  std::optional<MmouSpec> model;
  std::optional<MultiOuSpec> multi_model;
  bool p0_stationary = true;  ///< p0 given as "stationary" rather than a vector

  std::vector<double> times{1.0};
  std::vector<double> lags{0.0};
  std::vector<double> theta_grid;  ///< default: 61 points on [-1, 2]
  std::size_t n_paths = 10000;
  int moment_order = 2;
  SimulateOptions simulate;
  ScalingOptions scaling;
};

struct ConfigOverrides {
  std::optional<std::string> command;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
};

/// Parses and validates JSON text; overrides replace the corresponding fields.
/// Syntax errors raise ParseError with line and column; invalid values raise ValidationError naming the field path.
RunConfig parse_config(std::string_view text, const ConfigOverrides& overrides = {});
RunConfig load_config(const std::filesystem::path& file, const ConfigOverrides& overrides = {});

/// Canonical JSON text: fixed key order, defaults filled, two-space indent and
/// a trailing newline. parse_config(emit_config(c)) emits identically.
std::string emit_config(const RunConfig& cfg);

}  // namespace mmou
