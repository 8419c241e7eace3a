#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pvgc/capsule.hpp"
#include "pvgc/model.hpp"
#include "pvgc/tensor.hpp"

namespace pvgc {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

struct TrainConfig {
  std::size_t epochs = 75;
  std::size_t batch_size = 32;
  std::size_t warmup_epochs = 20;
  double lr = 2e-3;
  double start_lr = 1e-6;
  AdamWConfig adamw;
  LossKind loss = LossKind::automatic;
  MarginParams margin;
  std::uint64_t seed = 0;
  Precision precision = Precision::f64;
  bool augment = true;

  /// Throws ConfigError naming the violated constraint.
  void validate() const;
  /// Warmup used by the schedule: the configured value when it is shorter
  /// than the run, otherwise a quarter of the run.
  std::size_t effective_warmup() const { return warmup_epochs < epochs ? warmup_epochs : epochs / 4; }
};

/// First and second moments per parameter plus the step counter.
struct OptState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static OptState fresh(std::span<const Tensor> params);
};

/// w ← w·(1 − lr·wd), then the bias-corrected Adam update. Parameters are
/// updated in place.
void adamw_step(std::span<const Tensor> params, std::span<const Tensor> grads, OptState& state, double lr,
                const AdamWConfig& config);

/// Linear ramp start→peak over [0, warmup), cosine decay peak→start over
/// [warmup, epochs].
double lr_at(double epoch, const TrainConfig& config);

}  // namespace pvgc
