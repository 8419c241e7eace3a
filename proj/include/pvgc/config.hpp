#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace pvgc {

struct StageConfig {
  std::size_t dim = 48;          // D
  std::size_t ffn_ratio = 4;     // E
  std::size_t neighbors = 9;     // K
  std::size_t depth = 2;         // ViG blocks in the stage
  std::size_t stride_denominator = 4;

  bool operator==(const StageConfig&) const = default;
};

enum class HeadKind { pooling_mlp, capsule };

const char* head_name(HeadKind kind);
HeadKind parse_head(const std::string& name);

struct ModelConfig {
  std::size_t height = 256;
  std::size_t width = 256;
  std::array<std::size_t, 3> stem_channels{24, 48, 48};
  std::array<StageConfig, 4> stages{StageConfig{48, 4, 9, 2, 4}, StageConfig{96, 4, 9, 2, 8},
                                    StageConfig{240, 4, 9, 2, 16}, StageConfig{384, 4, 9, 2, 32}};
  HeadKind head = HeadKind::capsule;
  std::size_t classes = 7;
  std::size_t heads = 4;
  bool pos_embed = true;
  std::size_t primary_caps_dim = 8;
  std::size_t class_caps_dim = 16;
  std::size_t routing_iters = 3;
  /// One transformation per (capsule type, class) shared across spatial
  /// positions; false gives one per (primary capsule, class).
  bool share_capsule_weights = true;
  std::size_t mlp_hidden = 1024;

  /// Throws ConfigError naming the violated constraint.
  void validate() const;

  std::size_t total_blocks() const;
  /// Nodes (spatial positions) of stage s.
  std::size_t stage_nodes(std::size_t s) const;
  std::size_t stage_height(std::size_t s) const { return height / stages[s].stride_denominator; }
  std::size_t stage_width(std::size_t s) const { return width / stages[s].stride_denominator; }
  /// Primary capsule types per spatial location of the last stage.
  std::size_t capsule_types() const { return stages[3].dim / primary_caps_dim; }
  std::size_t primary_capsules() const { return capsule_types() * stage_nodes(3); }

  bool operator==(const ModelConfig&) const = default;
};

/// `tiny` reproduces the four-stage 48/96/240/384 layout at 256×256; `micro`
/// is a 32×32 desk-scale variant.
ModelConfig model_preset(const std::string& name);
bool is_model_preset(const std::string& name);

/// Ordered key/value view used by config files and checkpoints.
std::vector<std::pair<std::string, std::string>> model_config_entries(const ModelConfig& config);
/// Applies one key; returns false for keys that are not model keys. Throws
/// ConfigError on malformed values.
bool apply_model_entry(ModelConfig& config, const std::string& key, const std::string& value);
std::string model_config_text(const ModelConfig& config);
ModelConfig parse_model_config_text(const std::string& text);

// Value parsers shared by the config readers.
long long parse_integer(const std::string& value);
std::size_t parse_count(const std::string& value);
double parse_real(const std::string& value);
bool parse_flag(const std::string& value);
std::vector<std::string> split_list(const std::string& value);
std::string trim(const std::string& s);

}  // namespace pvgc
