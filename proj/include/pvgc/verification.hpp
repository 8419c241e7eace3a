#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "pvgc/config.hpp"
#include "pvgc/gradcheck.hpp"

namespace pvgc {

/// Checks for the backbone building blocks (stem, aggregation, multi-head
/// update, Grapher, FFN, downsample) on small random instances with frozen
/// neighbor tables.
std::vector<OpCheck> block_checks();

/// Tensor ops, capsule ops and backbone blocks, each name listed once.
std::vector<OpCheck> all_op_checks();

struct CheckResult {
  std::string name;
  std::size_t instances = 0;
  double max_error = 0.0;
  double threshold = 0.0;
  bool passed() const { return max_error <= threshold; }
};

/// Runs every check `instances` times with per-check seeded streams.
std::vector<CheckResult> run_op_checks(const std::vector<OpCheck>& checks, std::size_t instances,
                                       std::uint64_t seed, double threshold,
                                       const std::function<void(const CheckResult&)>& on_result = {});

/// Full-model loss gradient (margin loss for the capsule head, cross-entropy
/// otherwise) for a batch of two random images, graphs frozen after the
/// first pass and running statistics untouched. `coords_per_input` = 0
/// checks every coordinate.
double end_to_end_check(const ModelConfig& config, std::uint64_t seed, std::size_t coords_per_input);

}  // namespace pvgc
