#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pvgc/config.hpp"
#include "pvgc/graph.hpp"
#include "pvgc/ops.hpp"
#include "pvgc/tensor.hpp"

namespace pvgc {

/// x·weight + bias, weight stored in×out.
struct Linear {
  Tensor weight;
  Tensor bias;
};

struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;
};

struct Conv {
  Tensor weight;  // O×C×kh×kw
  Tensor bias;    // O
  std::size_t stride = 1;
  std::size_t padding = 1;
};

struct GrapherParams {
  Linear in;
  BatchNorm in_norm;
  /// Per-head update matrices, each (2D/h)×(D/h).
  std::vector<Tensor> head_weights;
  Linear out;
  BatchNorm out_norm;
};

struct FfnParams {
  Linear fc1;  // D×(E·D)
  BatchNorm norm1;
  Linear fc2;  // (E·D)×D
  BatchNorm norm2;
};

struct BlockParams {
  GrapherParams grapher;
  FfnParams ffn;
};

struct StemParams {
  std::array<Conv, 3> convs;
  std::array<BatchNorm, 3> norms;
};

struct DownsampleParams {
  Conv conv;
  BatchNorm norm;
};

struct BackboneParams {
  StemParams stem;
  Tensor pos_embed;  // N₁×D₁, undefined when disabled
  std::array<std::vector<BlockParams>, 4> stages;
  std::array<DownsampleParams, 3> downsamples;
};

/// Neighbor tables produced during one forward pass. In replay mode the
/// recorded tables are reused so that repeated evaluations (finite
/// differences) see an identical graph.
class GraphCache {
 public:
  enum class Mode { record, replay };

  Mode mode() const noexcept { return mode_; }
  void replay() {
    mode_ = Mode::replay;
    cursor_ = 0;
  }
  void clear() {
    calls_.clear();
    cursor_ = 0;
    mode_ = Mode::record;
  }
  std::size_t calls() const noexcept { return calls_.size(); }
  const std::vector<NeighborTable>& call(std::size_t i) const { return calls_.at(i); }

  const std::vector<NeighborTable>& next(const std::function<std::vector<NeighborTable>()>& build);

 private:
  Mode mode_ = Mode::record;
  std::vector<std::vector<NeighborTable>> calls_;
  std::size_t cursor_ = 0;
};

struct ForwardContext {
  NormMode mode = NormMode::train;
  bool update_running_stats = true;
  GraphCache* graphs = nullptr;
};

Tensor linear_forward(const Tensor& x, const Linear& layer);
Tensor batch_norm_forward(const Tensor& x, BatchNorm& norm, const ForwardContext& ctx);

/// Three 3×3 convolutions with strides (2, 2, 1), each followed by batch norm
/// and GELU: B×3×H×W → B×C×H/4×W/4.
Tensor stem_forward(const Tensor& image, StemParams& params, const ForwardContext& ctx);

/// Row i becomes [x_i, max_j (x_j − x_i)] over the neighbors of i; rows of a
/// node without neighbors get a zero relative part.
Tensor max_relative_aggregate(const Tensor& x, const NeighborTable& table);
/// Batched form over a (B·N)×D matrix with one table per sample.
Tensor max_relative_aggregate(const Tensor& x, std::span<const NeighborTable> tables);

/// Splits each row into h contiguous chunks of width 2D/h, multiplies chunk
/// k by head_weights[k], and concatenates the results (width D).
Tensor multi_head_update(const Tensor& aggregated, std::span<const Tensor> head_weights);

/// Y = σ(G(X·W_in)) W_out + X over a (B·N)×D node matrix; the KNN graph is
/// rebuilt per sample from the projected features.
Tensor grapher_forward(const Tensor& x, std::size_t batch, GrapherParams& params, std::size_t neighbors,
                       std::size_t layer_index, const ForwardContext& ctx);

/// Z = σ(Y·W_1) W_2 + Y with batch norm after each linear map.
Tensor ffn_forward(const Tensor& y, FfnParams& params, const ForwardContext& ctx);

/// 3×3 stride-2 convolution plus batch norm: B×C×H×W → B×C'×H/2×W/2.
Tensor downsample(const Tensor& features, DownsampleParams& params, const ForwardContext& ctx);

/// Stem → four stages of (Grapher, FFN) blocks with downsampling between
/// them: B×3×H×W → B×D₄×H/32×W/32.
Tensor backbone_forward(const Tensor& image, const ModelConfig& config, BackboneParams& params,
                        const ForwardContext& ctx);

/// B×C×H×W ↔ (B·H·W)×C node matrix.
Tensor map_to_nodes(const Tensor& features);
Tensor nodes_to_map(const Tensor& nodes, std::size_t batch, std::size_t height, std::size_t width);

// Initialization.
Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng);
BatchNorm make_batch_norm(std::size_t channels);
Conv make_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
               std::mt19937_64& rng);
GrapherParams make_grapher(std::size_t dim, std::size_t heads, std::mt19937_64& rng);
FfnParams make_ffn(std::size_t dim, std::size_t ratio, std::mt19937_64& rng);
BackboneParams make_backbone(const ModelConfig& config, std::mt19937_64& rng);

/// Named view of every tensor in a parameter set. Buffers (running
/// statistics) are listed with trainable = false.
struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

void collect_tensors(const std::string& prefix, const Linear& p, std::vector<NamedTensor>& out);
void collect_tensors(const std::string& prefix, const BatchNorm& p, std::vector<NamedTensor>& out);
void collect_tensors(const std::string& prefix, const Conv& p, std::vector<NamedTensor>& out);
void collect_tensors(const std::string& prefix, const GrapherParams& p, std::vector<NamedTensor>& out);
void collect_tensors(const std::string& prefix, const FfnParams& p, std::vector<NamedTensor>& out);
void collect_tensors(const std::string& prefix, const BackboneParams& p, std::vector<NamedTensor>& out);

/// Addresses of the trainable tensors, in collect_tensors order. Used to
/// rebind parameters, e.g. to perturbed copies during gradient checks.
void collect_slots(Linear& p, std::vector<Tensor*>& out);
void collect_slots(BatchNorm& p, std::vector<Tensor*>& out);
void collect_slots(Conv& p, std::vector<Tensor*>& out);
void collect_slots(GrapherParams& p, std::vector<Tensor*>& out);
void collect_slots(FfnParams& p, std::vector<Tensor*>& out);
void collect_slots(StemParams& p, std::vector<Tensor*>& out);
void collect_slots(DownsampleParams& p, std::vector<Tensor*>& out);
void collect_slots(BackboneParams& p, std::vector<Tensor*>& out);

}  // namespace pvgc
