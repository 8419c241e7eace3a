#include "pvgc/model.hpp"

#include <algorithm>
#include <array>
#include <iomanip>
#include <random>
#include <sstream>

#include "pvgc/ops.hpp"

namespace pvgc {

const char* loss_name(LossKind kind) {
  switch (kind) {
    case LossKind::automatic: return "auto";
    case LossKind::margin: return "margin";
    case LossKind::cross_entropy: return "cross-entropy";
  }
  return "?";
}

LossKind parse_loss(const std::string& name) {
  if (name == "auto") return LossKind::automatic;
  if (name == "margin") return LossKind::margin;
  if (name == "cross-entropy" || name == "cross_entropy" || name == "ce") return LossKind::cross_entropy;
  throw ConfigError("unknown loss '" + name + "' (expected auto, margin or cross-entropy)");
}

LossKind resolve_loss(LossKind kind, HeadKind head) {
  if (kind != LossKind::automatic) return kind;
  return head == HeadKind::capsule ? LossKind::margin : LossKind::cross_entropy;
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  backbone_ = make_backbone(config_, rng);
  if (config_.head == HeadKind::capsule) {
    capsule_weights_ = make_capsule_weights(config_, rng);
  } else {
    pooling_.fc1 = make_linear(config_.stages[3].dim, config_.mlp_hidden, rng);
    pooling_.fc2 = make_linear(config_.mlp_hidden, config_.classes, rng);
  }
}

ModelOutput Model::forward(const Tensor& images, const ForwardContext& ctx, RoutingTrace* trace) {
  Tensor features = backbone_forward(images, config_, backbone_, ctx);
  ModelOutput out;
  if (config_.head == HeadKind::capsule) {
    Tensor u = primary_capsules(features, config_.primary_caps_dim);
    Tensor predictions = capsule_transform(u, capsule_weights_);
    out.capsules = dynamic_routing(predictions, config_.routing_iters, trace);
    out.scores = class_norms(out.capsules);
  } else {
    Tensor pooled = mean(features, {2, 3});
    out.scores = linear_forward(gelu(linear_forward(pooled, pooling_.fc1)), pooling_.fc2);
  }
  return out;
}

std::vector<NamedTensor> Model::tensors() const {
  std::vector<NamedTensor> out;
  collect_tensors("", backbone_, out);
  if (config_.head == HeadKind::capsule) {
    out.push_back({"head.capsule.weights", capsule_weights_, true});
  } else {
    collect_tensors("head.fc1", pooling_.fc1, out);
    collect_tensors("head.fc2", pooling_.fc2, out);
  }
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& t : tensors()) {
    if (t.trainable) out.push_back(t.tensor);
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

std::vector<Tensor*> Model::parameter_slots() {
  std::vector<Tensor*> out;
  collect_slots(backbone_, out);
  if (config_.head == HeadKind::capsule) {
    out.push_back(&capsule_weights_);
  } else {
    collect_slots(pooling_.fc1, out);
    collect_slots(pooling_.fc2, out);
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects B×c logits, got " + shape_str(logits.shape()));
  const std::size_t batch = logits.dim(0), c = logits.dim(1);
  if (targets.size() != batch) {
    throw ContractError("cross_entropy: " + std::to_string(targets.size()) + " targets for a batch of " +
                        std::to_string(batch));
  }
  std::vector<double> onehot(batch * c, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    if (targets[b] >= c) {
      throw ContractError("cross_entropy: target " + std::to_string(targets[b]) + " outside " + std::to_string(c) +
                          " classes");
    }
    onehot[b * c + targets[b]] = 1.0;
  }
  Tensor picked = sum(mul(log_softmax_last(logits), Tensor({batch, c}, std::move(onehot))));
  return mul_scalar(picked, -1.0 / static_cast<double>(batch));
}

Tensor model_loss(const ModelOutput& output, std::span<const std::size_t> targets, LossKind kind,
                  const MarginParams& margin) {
  switch (kind) {
    case LossKind::margin:
      if (!output.capsules.defined()) throw ConfigError("margin loss needs the capsule head");
      return margin_loss(output.scores, targets, margin);
    case LossKind::cross_entropy: return cross_entropy(output.scores, targets);
    case LossKind::automatic: break;
  }
  throw ContractError("model_loss: loss kind must be resolved before use");
}

// ------------------------------------------------------------------ census

const CensusEntry& ModelCensus::entry(const std::string& group) const {
  for (const auto& e : entries) {
    if (e.group == group) return e;
  }
  throw ContractError("census has no group '" + group + "'");
}

namespace {

std::string map_shape(std::size_t c, std::size_t h, std::size_t w) {
  return std::to_string(c) + "×" + std::to_string(h) + "×" + std::to_string(w);
}

// Conv with bias followed by batch norm.
void add_conv_bn(CensusEntry& e, std::size_t in, std::size_t out, std::size_t oh, std::size_t ow) {
  e.params += in * out * 9 + out + 2 * out;
  e.macs += in * out * 9 * oh * ow;
}

// Linear with bias followed by batch norm, applied to n rows.
void add_linear_bn(CensusEntry& e, std::size_t in, std::size_t out, std::size_t n) {
  e.params += in * out + out + 2 * out;
  e.macs += n * in * out;
}

}  // namespace

ModelCensus count_params_flops(const ModelConfig& config) {
  config.validate();
  ModelCensus census;
  {
    CensusEntry stem{"stem", "", 0, 0};
    const std::array<std::size_t, 3> div{2, 4, 4};
    std::size_t in = 3;
    for (std::size_t i = 0; i < 3; ++i) {
      add_conv_bn(stem, in, config.stem_channels[i], config.height / div[i], config.width / div[i]);
      in = config.stem_channels[i];
    }
    stem.output_shape = map_shape(in, config.height / 4, config.width / 4);
    census.entries.push_back(stem);
  }
  if (config.pos_embed) {
    census.entries.push_back(
        {"pos_embed", "", config.stage_nodes(0) * config.stages[0].dim, 0});
  }
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& st = config.stages[s];
    const std::size_t n = config.stage_nodes(s), d = st.dim, hidden = st.dim * st.ffn_ratio;
    const std::string shape = map_shape(d, config.stage_height(s), config.stage_width(s));
    if (s > 0) {
      CensusEntry down{"down" + std::to_string(s), shape, 0, 0};
      add_conv_bn(down, config.stages[s - 1].dim, d, config.stage_height(s), config.stage_width(s));
      census.entries.push_back(down);
    }
    CensusEntry stage{"stage" + std::to_string(s + 1), shape, 0, 0};
    for (std::size_t b = 0; b < st.depth; ++b) {
      add_linear_bn(stage, d, d, n);
      stage.params += 2 * d * d / config.heads;
      stage.macs += n * 2 * d * d / config.heads;
      stage.macs += n * n * d;  // pairwise distances
      add_linear_bn(stage, d, d, n);
      add_linear_bn(stage, d, hidden, n);
      add_linear_bn(stage, hidden, d, n);
    }
    census.entries.push_back(stage);
  }
  CensusEntry head{"head", "", 0, 0};
  const std::size_t c = config.classes;
  if (config.head == HeadKind::capsule) {
    const std::size_t m = config.primary_capsules(), p = config.primary_caps_dim, d = config.class_caps_dim;
    const std::size_t types = config.share_capsule_weights ? config.capsule_types() : m;
    head.params = types * c * p * d;
    head.macs = m * c * p * d + config.routing_iters * 2 * m * c * d;
    head.output_shape = std::to_string(c) + "×" + std::to_string(d);
  } else {
    const std::size_t d = config.stages[3].dim, hid = config.mlp_hidden;
    head.params = d * hid + hid + hid * c + c;
    head.macs = d * hid + hid * c;
    head.output_shape = std::to_string(c);
  }
  census.entries.push_back(head);
  std::size_t macs = 0;
  for (const auto& e : census.entries) {
    census.params += e.params;
    macs += e.macs;
  }
  census.flops = 2 * macs;
  return census;
}

std::string census_diff(const ModelCensus& a, const ModelCensus& b, const std::string& label_a,
                        const std::string& label_b) {
  const std::vector<std::string> headers{label_a + " params", label_b + " params", "diff", label_a + " MACs",
                                         label_b + " MACs"};
  std::vector<int> widths;
  for (const auto& h : headers) widths.push_back(static_cast<int>(std::max<std::size_t>(12, h.size() + 2)));
  std::ostringstream out;
  auto row = [&](const std::string& group, long long pa, long long pb, std::size_t ma, std::size_t mb) {
    out << std::left << std::setw(10) << group << std::right << std::setw(widths[0]) << pa << std::setw(widths[1])
        << pb << std::setw(widths[2]) << (pa - pb) << std::setw(widths[3]) << ma << std::setw(widths[4]) << mb
        << '\n';
  };
  out << std::left << std::setw(10) << "group" << std::right;
  for (std::size_t i = 0; i < headers.size(); ++i) out << std::setw(widths[i]) << headers[i];
  out << '\n';
  std::vector<std::string> groups;
  for (const auto* census : {&a, &b}) {
    for (const auto& e : census->entries) {
      if (std::find(groups.begin(), groups.end(), e.group) == groups.end()) groups.push_back(e.group);
    }
  }
  auto find = [](const ModelCensus& c, const std::string& g) -> const CensusEntry* {
    for (const auto& e : c.entries) {
      if (e.group == g) return &e;
    }
    return nullptr;
  };
  for (const auto& g : groups) {
    const CensusEntry* ea = find(a, g);
    const CensusEntry* eb = find(b, g);
    const long long pa = ea ? static_cast<long long>(ea->params) : 0;
    const long long pb = eb ? static_cast<long long>(eb->params) : 0;
    row(g, pa, pb, ea ? ea->macs : 0, eb ? eb->macs : 0);
  }
  row("total", static_cast<long long>(a.params), static_cast<long long>(b.params), a.flops / 2, b.flops / 2);
  return out.str();
}

}  // namespace pvgc
