#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pvgc/checkpoint.hpp"
#include "pvgc/data.hpp"
#include "pvgc/metrics.hpp"
#include "pvgc/model.hpp"
#include "pvgc/optim.hpp"

namespace pvgc {

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  /// Epoch of the selected checkpoint; 0 means the initial weights.
  std::size_t best_epoch = 0;
  double best_acc = 0.0;
  Checkpoint best;
};

/// Epoch-level observer, e.g. for progress output.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Batches of `batch_size` over `order`; a trailing batch of one sample is
/// merged into the previous batch so batch statistics stay defined.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size);

/// Sample order for an epoch, a permutation seeded by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::uint64_t epoch);

/// Stacks images into B×3×S×S; augmentation uses sample_rng(seed, epoch, id).
Tensor stack_batch(const Dataset& data, const std::vector<std::size_t>& indices, bool augment_images,
                   std::uint64_t seed, std::uint64_t epoch, std::vector<std::size_t>& labels);

/// Eval-mode metrics and mean loss over a dataset.
MetricsReport evaluate(Model& model, const Dataset& data, std::size_t batch_size, LossKind loss,
                       const MarginParams& margin = {});

/// Trains in place. The best checkpoint is chosen by validation accuracy
/// (training accuracy when `val` is null); ties keep the earlier epoch. Runs
/// under the configured precision. A non-finite loss raises NumericError
/// naming the epoch and batch.
TrainResult train(Model& model, const Dataset& train_data, const Dataset* val, const TrainConfig& config,
                  const std::string& metadata = {}, const EpochCallback& on_epoch = {});

/// Tab-separated history with a header row.
std::string history_tsv(const std::vector<EpochRecord>& history);

}  // namespace pvgc
