#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pvgc/data.hpp"
#include "pvgc/gradcheck.hpp"
#include "pvgc/run_config.hpp"

namespace pvgc {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitCheckpoint = 5,
  kExitGradcheck = 6,
};

struct CommandOptions {
  std::optional<std::filesystem::path> config;
  /// key=value strings, applied after the config file.
  std::vector<std::string> overrides;
  std::optional<std::string> preset;
  /// eval only.
  std::optional<std::filesystem::path> checkpoint;
  bool quiet = false;
};

struct Datasets {
  std::unique_ptr<Dataset> train;
  std::unique_ptr<Dataset> val;
  std::unique_ptr<Dataset> test;

  const Dataset& split(const std::string& name) const;
};

/// Synthetic sets (seeds synthetic_seed, +1, +2) or a stratified split of the
/// manifest.
Datasets load_datasets(const RunConfig& config);

/// Writes resolved.cfg, history.tsv, best.ckpt and metrics.txt under out_dir.
int cmd_train(const CommandOptions& options, std::ostream& out, std::ostream& err);
/// Metrics of a checkpoint on the configured split, printed to `out`.
int cmd_eval(const CommandOptions& options, std::ostream& out, std::ostream& err);
/// Every registered op check plus the end-to-end model check.
int cmd_gradcheck(const CommandOptions& options, std::ostream& out, std::ostream& err);
/// Per-stage shapes, parameter and FLOP census for both head kinds.
int cmd_inspect(const CommandOptions& options, std::ostream& out, std::ostream& err);

/// Gradcheck driver with an explicit op registry.
int run_gradcheck(const RunConfig& config, const std::vector<OpCheck>& checks, std::ostream& out, std::ostream& err);

/// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& error);

}  // namespace pvgc
