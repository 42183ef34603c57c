#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vaegan/data.hpp"
#include "vaegan/models.hpp"
#include "vaegan/training.hpp"

namespace vaegan {

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_data = 2, exit_numerical = 3 };

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Resolved key=value settings of one command: defaults, then a preset, then
/// a config file, then command-line flags.
struct RunConfig {
  std::string command;
  std::map<std::string, std::string> values;
  /// Keys set by a config file or a flag rather than by a default or preset.
  std::vector<std::string> explicit_keys;

  bool has(const std::string& key) const;
  bool is_explicit(const std::string& key) const;
  const std::string& str(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  /// Comma-separated list; empty entries are dropped.
  std::vector<std::string> list(const std::string& key) const;

  /// "# vaegan <command>" followed by sorted key=value lines; a valid config file.
  std::string echo() const;
};

struct Preset {
  std::size_t resolution;
  double scale;
  std::uint64_t steps;
  std::size_t batch;
};
/// smoke, desk or paper.
Preset preset(const std::string& name);

/// Applies presets and the defaults that depend on the mode, then checks the
/// combination.
void finalize_train_config(RunConfig& cfg);
TrainConfig train_config(const RunConfig& cfg);

/// Test split images drawn from a seed disjoint from the training split.
SyntheticSpec test_split(SyntheticSpec spec);

/// Runs one command. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vaegan
