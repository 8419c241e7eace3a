#include "pvgc/backbone.hpp"

#include <cmath>
#include <string>

namespace pvgc {

const std::vector<NeighborTable>& GraphCache::next(const std::function<std::vector<NeighborTable>()>& build) {
  if (mode_ == Mode::record) {
    calls_.push_back(build());
    return calls_.back();
  }
  if (cursor_ >= calls_.size()) throw ContractError("graph cache replayed past its recorded calls");
  return calls_[cursor_++];
}

Tensor linear_forward(const Tensor& x, const Linear& layer) {
  Tensor y = matmul(x, layer.weight);
  return layer.bias.defined() ? add(y, layer.bias) : y;
}

Tensor batch_norm_forward(const Tensor& x, BatchNorm& norm, const ForwardContext& ctx) {
  BatchNormOptions opt;
  opt.mode = ctx.mode;
  opt.update_running_stats = ctx.update_running_stats;
  return batch_norm2d(x, norm.gamma, norm.beta, norm.state, opt);
}

namespace {

Tensor conv_forward(const Tensor& x, const Conv& conv) {
  return conv2d(x, conv.weight, conv.bias, conv.stride, conv.padding);
}

}  // namespace

Tensor stem_forward(const Tensor& image, StemParams& params, const ForwardContext& ctx) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("stem expects B×3×H×W images, got " + shape_str(image.shape()));
  }
  if (image.dim(2) % 4 != 0 || image.dim(3) % 4 != 0) {
    throw ShapeError("stem input extents must be divisible by 4, got " + shape_str(image.shape()));
  }
  Tensor x = image;
  for (std::size_t i = 0; i < 3; ++i) {
    x = gelu(batch_norm_forward(conv_forward(x, params.convs[i]), params.norms[i], ctx));
  }
  return x;
}

Tensor max_relative_aggregate(const Tensor& x, const NeighborTable& table) {
  return max_relative_aggregate(x, std::span<const NeighborTable>(&table, 1));
}

Tensor max_relative_aggregate(const Tensor& x, std::span<const NeighborTable> tables) {
  if (x.rank() != 2) throw ShapeError("max_relative_aggregate expects a node matrix, got " + shape_str(x.shape()));
  if (tables.empty()) throw ContractError("max_relative_aggregate needs at least one neighbor table");
  const std::size_t rows = x.dim(0);
  const std::size_t dim = x.dim(1);
  const std::size_t nodes = tables[0].node_count;
  const std::size_t k = tables[0].neighbors;
  for (const auto& t : tables) {
    if (t.node_count != nodes || t.neighbors != k) {
      throw ContractError("max_relative_aggregate: neighbor tables disagree on node or neighbor count");
    }
  }
  if (nodes * tables.size() != rows) {
    throw ContractError("max_relative_aggregate: tables cover " + std::to_string(nodes * tables.size()) +
                        " nodes but features have " + std::to_string(rows) + " rows");
  }
  Tensor relative;
  if (k == 0) {
    relative = Tensor::zeros({rows, dim});
  } else {
    std::vector<std::size_t> gather;
    gather.reserve(rows * k);
    for (std::size_t b = 0; b < tables.size(); ++b) {
      for (std::size_t i = 0; i < nodes; ++i) {
        for (auto j : tables[b].row(i)) gather.push_back(b * nodes + j);
      }
    }
    Tensor neighbors = reshape(index_rows(x, gather), {rows, k, dim});
    Tensor centers = reshape(x, {rows, 1, dim});
    relative = max(sub(neighbors, centers), {1});
  }
  std::vector<Tensor> parts{x, relative};
  return concat(parts, 1);
}

Tensor multi_head_update(const Tensor& aggregated, std::span<const Tensor> head_weights) {
  if (aggregated.rank() != 2) {
    throw ShapeError("multi_head_update expects R×2D input, got " + shape_str(aggregated.shape()));
  }
  const std::size_t heads = head_weights.size();
  const std::size_t width = aggregated.dim(1);
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("multi_head_update: width " + std::to_string(width) + " not divisible into " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t chunk = width / heads;
  for (const auto& w : head_weights) {
    if (w.rank() != 2 || w.dim(0) != chunk) {
      throw ShapeError("multi_head_update: head matrix " + shape_str(w.shape()) + " does not accept chunks of width " +
                       std::to_string(chunk));
    }
  }
  if (heads == 1) return matmul(aggregated, head_weights[0]);
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t k = 0; k < heads; ++k) {
    outputs.push_back(matmul(slice(aggregated, 1, k * chunk, chunk), head_weights[k]));
  }
  return concat(outputs, 1);
}

Tensor grapher_forward(const Tensor& x, std::size_t batch, GrapherParams& params, std::size_t neighbors,
                       std::size_t layer_index, const ForwardContext& ctx) {
  if (x.rank() != 2 || batch == 0 || x.dim(0) % batch != 0) {
    throw ShapeError("grapher expects a (B·N)×D node matrix, got " + shape_str(x.shape()) + " for batch " +
                     std::to_string(batch));
  }
  const std::size_t nodes = x.dim(0) / batch;
  const std::size_t dim = x.dim(1);
  Tensor projected = batch_norm_forward(linear_forward(x, params.in), params.in_norm, ctx);

  auto build = [&] {
    std::vector<NeighborTable> tables;
    tables.reserve(batch);
    const std::size_t dilation = dilation_for_layer(layer_index);
    auto values = projected.values();
    for (std::size_t b = 0; b < batch; ++b) {
      if (nodes < 2) {
        // A lone node has no neighbors; its relative part is zero.
        tables.push_back(NeighborTable{nodes, 0, neighbors, dilation, {}});
      } else {
        tables.push_back(knn_dilated(values.subspan(b * nodes * dim, nodes * dim), nodes, dim, neighbors, dilation));
      }
    }
    return tables;
  };
  std::vector<NeighborTable> local;
  const std::vector<NeighborTable>* tables = nullptr;
  if (ctx.graphs != nullptr) {
    tables = &ctx.graphs->next(build);
  } else {
    local = build();
    tables = &local;
  }
  Tensor updated = multi_head_update(max_relative_aggregate(projected, *tables), params.head_weights);
  Tensor out = batch_norm_forward(linear_forward(gelu(updated), params.out), params.out_norm, ctx);
  return add(out, x);
}

Tensor ffn_forward(const Tensor& y, FfnParams& params, const ForwardContext& ctx) {
  Tensor hidden = gelu(batch_norm_forward(linear_forward(y, params.fc1), params.norm1, ctx));
  Tensor out = batch_norm_forward(linear_forward(hidden, params.fc2), params.norm2, ctx);
  return add(out, y);
}

Tensor downsample(const Tensor& features, DownsampleParams& params, const ForwardContext& ctx) {
  if (features.rank() != 4 || features.dim(2) % 2 != 0 || features.dim(3) % 2 != 0) {
    throw ShapeError("downsample expects B×C×H×W with even H, W, got " + shape_str(features.shape()));
  }
  return batch_norm_forward(conv_forward(features, params.conv), params.norm, ctx);
}

Tensor map_to_nodes(const Tensor& features) {
  const auto& s = features.shape();
  return reshape(permute(features, {0, 2, 3, 1}), {s[0] * s[2] * s[3], s[1]});
}

Tensor nodes_to_map(const Tensor& nodes, std::size_t batch, std::size_t height, std::size_t width) {
  return permute(reshape(nodes, {batch, height, width, nodes.dim(1)}), {0, 3, 1, 2});
}

Tensor backbone_forward(const Tensor& image, const ModelConfig& config, BackboneParams& params,
                        const ForwardContext& ctx) {
  if (image.rank() != 4 || image.dim(2) != config.height || image.dim(3) != config.width) {
    throw ShapeError("backbone expects B×3×" + std::to_string(config.height) + "×" + std::to_string(config.width) +
                     " images, got " + shape_str(image.shape()));
  }
  const std::size_t batch = image.dim(0);
  Tensor map = stem_forward(image, params.stem, ctx);
  std::size_t layer = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) map = downsample(map, params.downsamples[s - 1], ctx);
    const std::size_t h = map.dim(2), w = map.dim(3);
    Tensor nodes = map_to_nodes(map);
    if (s == 0 && params.pos_embed.defined()) {
      const std::size_t n = h * w, d = map.dim(1);
      nodes = reshape(add(reshape(nodes, {batch, n, d}), params.pos_embed), {batch * n, d});
    }
    for (auto& block : params.stages[s]) {
      ++layer;
      nodes = grapher_forward(nodes, batch, block.grapher, config.stages[s].neighbors, layer, ctx);
      nodes = ffn_forward(nodes, block.ffn, ctx);
    }
    map = nodes_to_map(nodes, batch, h, w);
  }
  return map;
}

// ----------------------------------------------------------------- init

namespace {

Tensor init_normal(const Shape& shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  round_to_precision(v);
  return Tensor(shape, std::move(v), true);
}

}  // namespace

Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return Linear{init_normal({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng), Tensor::zeros({out}, true)};
}

BatchNorm make_batch_norm(std::size_t channels) {
  return BatchNorm{Tensor::full({channels}, 1.0, true), Tensor::zeros({channels}, true),
                   BatchNormState::fresh(channels)};
}

Conv make_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
               std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in * kernel * kernel);
  return Conv{init_normal({out, in, kernel, kernel}, 1.0 / std::sqrt(fan_in), rng), Tensor::zeros({out}, true),
              stride, padding};
}

GrapherParams make_grapher(std::size_t dim, std::size_t heads, std::mt19937_64& rng) {
  GrapherParams p;
  p.in = make_linear(dim, dim, rng);
  p.in_norm = make_batch_norm(dim);
  const std::size_t chunk = 2 * dim / heads;
  for (std::size_t k = 0; k < heads; ++k) {
    p.head_weights.push_back(init_normal({chunk, dim / heads}, 1.0 / std::sqrt(static_cast<double>(chunk)), rng));
  }
  p.out = make_linear(dim, dim, rng);
  p.out_norm = make_batch_norm(dim);
  return p;
}

FfnParams make_ffn(std::size_t dim, std::size_t ratio, std::mt19937_64& rng) {
  FfnParams p;
  p.fc1 = make_linear(dim, dim * ratio, rng);
  p.norm1 = make_batch_norm(dim * ratio);
  p.fc2 = make_linear(dim * ratio, dim, rng);
  p.norm2 = make_batch_norm(dim);
  return p;
}

BackboneParams make_backbone(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  BackboneParams p;
  const std::array<std::size_t, 3> strides{2, 2, 1};
  std::size_t in = 3;
  for (std::size_t i = 0; i < 3; ++i) {
    p.stem.convs[i] = make_conv(in, config.stem_channels[i], 3, strides[i], 1, rng);
    p.stem.norms[i] = make_batch_norm(config.stem_channels[i]);
    in = config.stem_channels[i];
  }
  if (config.pos_embed) p.pos_embed = Tensor::zeros({config.stage_nodes(0), config.stages[0].dim}, true);
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& st = config.stages[s];
    if (s > 0) {
      p.downsamples[s - 1] = DownsampleParams{make_conv(config.stages[s - 1].dim, st.dim, 3, 2, 1, rng),
                                              make_batch_norm(st.dim)};
    }
    for (std::size_t b = 0; b < st.depth; ++b) {
      p.stages[s].push_back(BlockParams{make_grapher(st.dim, config.heads, rng), make_ffn(st.dim, st.ffn_ratio, rng)});
    }
  }
  return p;
}

// ------------------------------------------------------------ collection

void collect_tensors(const std::string& prefix, const Linear& p, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".weight", p.weight, true});
  if (p.bias.defined()) out.push_back({prefix + ".bias", p.bias, true});
}

void collect_tensors(const std::string& prefix, const BatchNorm& p, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".gamma", p.gamma, true});
  out.push_back({prefix + ".beta", p.beta, true});
  out.push_back({prefix + ".running_mean", p.state.running_mean, false});
  out.push_back({prefix + ".running_var", p.state.running_var, false});
}

void collect_tensors(const std::string& prefix, const Conv& p, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".weight", p.weight, true});
  if (p.bias.defined()) out.push_back({prefix + ".bias", p.bias, true});
}

void collect_tensors(const std::string& prefix, const GrapherParams& p, std::vector<NamedTensor>& out) {
  collect_tensors(prefix + ".in", p.in, out);
  collect_tensors(prefix + ".in_norm", p.in_norm, out);
  for (std::size_t k = 0; k < p.head_weights.size(); ++k) {
    out.push_back({prefix + ".head" + std::to_string(k), p.head_weights[k], true});
  }
  collect_tensors(prefix + ".out", p.out, out);
  collect_tensors(prefix + ".out_norm", p.out_norm, out);
}

void collect_tensors(const std::string& prefix, const FfnParams& p, std::vector<NamedTensor>& out) {
  collect_tensors(prefix + ".fc1", p.fc1, out);
  collect_tensors(prefix + ".norm1", p.norm1, out);
  collect_tensors(prefix + ".fc2", p.fc2, out);
  collect_tensors(prefix + ".norm2", p.norm2, out);
}

void collect_tensors(const std::string& prefix, const BackboneParams& p, std::vector<NamedTensor>& out) {
  for (std::size_t i = 0; i < 3; ++i) {
    collect_tensors(prefix + "stem.conv" + std::to_string(i), p.stem.convs[i], out);
    collect_tensors(prefix + "stem.norm" + std::to_string(i), p.stem.norms[i], out);
  }
  if (p.pos_embed.defined()) out.push_back({prefix + "pos_embed", p.pos_embed, true});
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) {
      const std::string d = prefix + "down" + std::to_string(s);
      collect_tensors(d + ".conv", p.downsamples[s - 1].conv, out);
      collect_tensors(d + ".norm", p.downsamples[s - 1].norm, out);
    }
    for (std::size_t b = 0; b < p.stages[s].size(); ++b) {
      const std::string name = prefix + "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      collect_tensors(name + ".grapher", p.stages[s][b].grapher, out);
      collect_tensors(name + ".ffn", p.stages[s][b].ffn, out);
    }
  }
}

void collect_slots(Linear& p, std::vector<Tensor*>& out) {
  out.push_back(&p.weight);
  if (p.bias.defined()) out.push_back(&p.bias);
}

void collect_slots(BatchNorm& p, std::vector<Tensor*>& out) {
  out.push_back(&p.gamma);
  out.push_back(&p.beta);
}

void collect_slots(Conv& p, std::vector<Tensor*>& out) {
  out.push_back(&p.weight);
  if (p.bias.defined()) out.push_back(&p.bias);
}

void collect_slots(GrapherParams& p, std::vector<Tensor*>& out) {
  collect_slots(p.in, out);
  collect_slots(p.in_norm, out);
  for (auto& w : p.head_weights) out.push_back(&w);
  collect_slots(p.out, out);
  collect_slots(p.out_norm, out);
}

void collect_slots(FfnParams& p, std::vector<Tensor*>& out) {
  collect_slots(p.fc1, out);
  collect_slots(p.norm1, out);
  collect_slots(p.fc2, out);
  collect_slots(p.norm2, out);
}

void collect_slots(StemParams& p, std::vector<Tensor*>& out) {
  for (std::size_t i = 0; i < 3; ++i) {
    collect_slots(p.convs[i], out);
    collect_slots(p.norms[i], out);
  }
}

void collect_slots(DownsampleParams& p, std::vector<Tensor*>& out) {
  collect_slots(p.conv, out);
  collect_slots(p.norm, out);
}

void collect_slots(BackboneParams& p, std::vector<Tensor*>& out) {
  collect_slots(p.stem, out);
  if (p.pos_embed.defined()) out.push_back(&p.pos_embed);
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) collect_slots(p.downsamples[s - 1], out);
    for (auto& block : p.stages[s]) {
      collect_slots(block.grapher, out);
      collect_slots(block.ffn, out);
    }
  }
}

}  // namespace pvgc
