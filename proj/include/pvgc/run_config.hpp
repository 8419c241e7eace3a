#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pvgc/config.hpp"
#include "pvgc/data.hpp"
#include "pvgc/optim.hpp"

namespace pvgc {

/// Everything a command needs. Sections: [run], [model], [train], [data],
/// [gradcheck]. Keys are unique across sections.
struct RunConfig {
  std::string preset = "micro";
  std::string out_dir = "pvgc-out";

  ModelConfig model;
  TrainConfig train;

  bool synthetic = true;
  std::uint64_t synthetic_seed = 7;
  std::size_t synthetic_per_class = 20;
  std::size_t synthetic_val_per_class = 5;
  std::size_t synthetic_test_per_class = 5;
  std::string metadata;
  std::string image_dir;
  SplitSpec split;
  std::string eval_split = "val";

  std::size_t gradcheck_instances = 20;
  /// Coordinates sampled per tensor in the end-to-end check; 0 = all.
  std::size_t gradcheck_coords = 24;
  double gradcheck_op_tol = 1e-4;
  double gradcheck_model_tol = 1e-3;

  /// Throws ConfigError naming the violated constraint.
  void validate() const;
};

/// defaults < preset < file < overrides. The preset comes from `preset_flag`,
/// else a `preset` override, else the file, else "micro". Overrides are
/// `key=value` or `section.key=value`. Errors carry the source line.
RunConfig parse_run_config_text(const std::string& text, const std::string& source,
                                const std::vector<std::string>& overrides,
                                const std::optional<std::string>& preset_flag = std::nullopt);
RunConfig parse_run_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides,
                           const std::optional<std::string>& preset_flag = std::nullopt);

/// Complete config text; parsing it reproduces the same RunConfig.
std::string resolved_config_text(const RunConfig& config);

/// Every accepted key with its section, in output order.
std::vector<std::pair<std::string, std::string>> run_config_keys();

}  // namespace pvgc
