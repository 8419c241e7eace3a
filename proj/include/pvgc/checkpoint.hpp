#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pvgc/config.hpp"
#include "pvgc/model.hpp"
#include "pvgc/optim.hpp"

namespace pvgc {

/// File layout (all integers little-endian):
///   "PVGC" u32 version
///   str config  u64 epoch  str rng_state  str metadata
///   u64 count, then per tensor: str name, u32 rank, u64 extents[rank], f64 values
///   u64 step, u64 count, then moment pairs (m, v) as rank/extents/values
///   u64 FNV-1a checksum of every preceding byte
/// where str is a u64 byte length followed by the bytes.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig config;
  std::uint64_t epoch = 0;
  std::string rng_state;
  /// Free-form key = value text (the resolved run configuration).
  std::string metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;
  OptState optimizer;
};

/// Deep copy of a model's tensors and, when given, optimizer state.
Checkpoint capture(const Model& model, const OptState* optimizer, std::uint64_t epoch, std::string rng_state,
                   std::string metadata = {});

/// Copies checkpoint tensors into a model built from a matching config.
/// Throws ModelMismatchError on config, name or shape disagreement.
void restore(Model& model, const Checkpoint& checkpoint);

/// A fresh model built from the checkpoint's config with its tensors loaded.
Model model_from_checkpoint(const Checkpoint& checkpoint);

std::string encode_checkpoint(const Checkpoint& checkpoint);
/// Throws VersionError, TruncationError or ChecksumError.
Checkpoint decode_checkpoint(const std::string& bytes);

void checkpoint_save(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint checkpoint_load(const std::filesystem::path& path);

/// Field-by-field equality, bitwise for tensor data.
bool checkpoints_equal(const Checkpoint& a, const Checkpoint& b);

}  // namespace pvgc
