#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pvgc/backbone.hpp"
#include "pvgc/capsule.hpp"
#include "pvgc/config.hpp"

namespace pvgc {

enum class LossKind { automatic, margin, cross_entropy };

const char* loss_name(LossKind kind);
LossKind parse_loss(const std::string& name);
/// `automatic` becomes margin for the capsule head, cross-entropy otherwise.
LossKind resolve_loss(LossKind kind, HeadKind head);

/// Global average pool → linear(mlp_hidden) → GELU → linear(c).
struct PoolingHeadParams {
  Linear fc1;
  Linear fc2;
};

struct ModelOutput {
  /// B×c: class-capsule norms (capsule head) or logits (pooling head).
  Tensor scores;
  /// B×c×d class capsules; undefined for the pooling head.
  Tensor capsules;
};

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  BackboneParams& backbone() noexcept { return backbone_; }
  Tensor& capsule_weights() noexcept { return capsule_weights_; }
  PoolingHeadParams& pooling_head() noexcept { return pooling_; }

  ModelOutput forward(const Tensor& images, const ForwardContext& ctx, RoutingTrace* trace = nullptr);

  /// Every parameter and buffer in a fixed order with stable names.
  std::vector<NamedTensor> tensors() const;
  /// Trainable tensors only, in the order of tensors().
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  /// Addresses of the trainable tensors, in parameters() order.
  std::vector<Tensor*> parameter_slots();

 private:
  ModelConfig config_;
  BackboneParams backbone_;
  Tensor capsule_weights_;
  PoolingHeadParams pooling_;
};

/// Mean cross-entropy of B×c logits, stabilized by max subtraction.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

Tensor model_loss(const ModelOutput& output, std::span<const std::size_t> targets, LossKind kind,
                  const MarginParams& margin = {});

struct CensusEntry {
  std::string group;  // "stem", "stage1", "down1", "head", ...
  std::string output_shape;
  std::size_t params = 0;
  std::size_t macs = 0;
};

struct ModelCensus {
  std::vector<CensusEntry> entries;
  std::size_t params = 0;
  /// 2 × multiply-accumulates for one image, including KNN distance matrices.
  std::size_t flops = 0;

  const CensusEntry& entry(const std::string& group) const;
};

/// Closed-form parameter and FLOP census of a configuration.
ModelCensus count_params_flops(const ModelConfig& config);

/// Side-by-side census table: group, params and MACs of a and b, and their
/// difference.
std::string census_diff(const ModelCensus& a, const ModelCensus& b, const std::string& label_a,
                        const std::string& label_b);

}  // namespace pvgc
