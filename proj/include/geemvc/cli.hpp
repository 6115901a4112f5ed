#pragma once

#include <string>
#include <vector>

#include "geemvc/io.hpp"
#include "geemvc/selection.hpp"
#include "geemvc/simulate.hpp"

namespace geemvc {

struct RunConfig {
  enum class Command { Fit, Simulate, Select };
  Command command = Command::Fit;

  // fit / select inputs
  DatasetSpec data;
  LinkSpec links{};
  VarianceFunction vf = VarianceFunction::constant_one();
  WorkingStructure working{};
  FitOptions fit_opts{};

  // select
  SelectionStrategy strategy = SelectionStrategy::LicMarginal;
  PenaltyScale penalty = PenaltyScale::LogN;
  bool symmetrize_slope = false;

  // simulate
  ScenarioConfig scenario{};
  std::vector<SelectionStrategy> methods;
  std::vector<PenaltyScale> penalties;
  std::string emit_data_prefix;  // writes <prefix>_units.csv / <prefix>_pairs.csv
  std::string study;             // "est" or "sel"; defaults by scenario

  // output
  std::string out_path;       // empty -> stdout
  std::string format = "json";  // csv | json
};

// Parses argv-style arguments (without the program name).  Flag values
// override config-file values when --config is given.
RunConfig parse_config(const std::vector<std::string>& args);

// Executes the configured command.  Returns the process exit code:
// 0 ok, 2 config error, 3 numeric failure, 4 I/O failure.
int run(const RunConfig& config);

// Convenience wrapper used by the binary: parse + run with error reporting.
int cli_main(int argc, char** argv);

}  // namespace geemvc
