#include "pvgc/verification.hpp"

#include <algorithm>
#include <memory>

#include "pvgc/backbone.hpp"
#include "pvgc/capsule.hpp"
#include "pvgc/graph.hpp"
#include "pvgc/model.hpp"
#include "pvgc/ops.hpp"

namespace pvgc {

namespace {

std::size_t extent(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// A scalar function together with the tensors it is differentiated against.
struct Problem {
  std::vector<Tensor> inputs;
  ScalarFn f;
};

OpCheck problem_check(std::string name, std::function<Problem(std::mt19937_64&)> make) {
  return OpCheck{std::move(name), [make = std::move(make)](std::mt19937_64& rng) {
                   Problem p = make(rng);
                   return grad_check(p.f, p.inputs);
                 }};
}

// Copies of `params` whose trainable tensors are taken from xs[offset...].
template <typename Params>
Params rebind(const Params& params, std::span<const Tensor> xs, std::size_t offset) {
  Params copy = params;
  std::vector<Tensor*> slots;
  collect_slots(copy, slots);
  for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] = xs[offset + i];
  return copy;
}

template <typename Params>
void append_trainable(Params& params, std::vector<Tensor>& inputs) {
  std::vector<Tensor*> slots;
  collect_slots(params, slots);
  for (auto* s : slots) inputs.push_back(*s);
}

// Gives freshly initialized norm layers non-trivial affine parameters.
template <typename Params>
void jitter(Params& params, std::mt19937_64& rng) {
  std::vector<Tensor*> slots;
  collect_slots(params, slots);
  std::normal_distribution<double> dist(0.0, 0.3);
  for (auto* s : slots) {
    for (auto& v : s->mutable_values()) v += dist(rng);
  }
}

const ForwardContext kFrozenTrain{NormMode::train, false, nullptr};

}  // namespace

std::vector<OpCheck> block_checks() {
  std::vector<OpCheck> checks;
  checks.push_back(problem_check("stem", [](std::mt19937_64& rng) {
    const std::size_t size = 4 * extent(rng, 1, 2);
    StemParams params;
    std::size_t in = 3;
    const std::array<std::size_t, 3> strides{2, 2, 1};
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t out = extent(rng, 1, 3);
      params.convs[i] = make_conv(in, out, 3, strides[i], 1, rng);
      params.norms[i] = make_batch_norm(out);
      in = out;
    }
    jitter(params, rng);
    std::vector<Tensor> inputs{random_normal({2, 3, size, size}, rng)};
    append_trainable(params, inputs);
    const std::uint64_t seed = rng();
    return Problem{inputs, [params, seed](std::span<const Tensor> xs) {
                     StemParams p = rebind(params, xs, 1);
                     return random_projection(stem_forward(xs[0], p, kFrozenTrain), seed);
                   }};
  }));
  checks.push_back(problem_check("max_relative_aggregate", [](std::mt19937_64& rng) {
    const std::size_t batch = extent(rng, 1, 2), n = extent(rng, 2, 6), d = extent(rng, 1, 4);
    Tensor x = random_normal({batch * n, d}, rng);
    const std::size_t k = extent(rng, 1, 3), dilation = extent(rng, 1, 2);
    std::vector<NeighborTable> tables;
    for (std::size_t b = 0; b < batch; ++b) {
      tables.push_back(knn_dilated(x.values().subspan(b * n * d, n * d), n, d, k, dilation));
    }
    const std::uint64_t seed = rng();
    return Problem{{x}, [tables, seed](std::span<const Tensor> xs) {
                     return random_projection(max_relative_aggregate(xs[0], tables), seed);
                   }};
  }));
  checks.push_back(problem_check("multi_head_update", [](std::mt19937_64& rng) {
    const std::size_t heads = extent(rng, 1, 3), d = heads * extent(rng, 1, 2), rows = extent(rng, 1, 4);
    std::vector<Tensor> inputs{random_normal({rows, 2 * d}, rng)};
    for (std::size_t h = 0; h < heads; ++h) inputs.push_back(random_normal({2 * d / heads, d / heads}, rng));
    const std::uint64_t seed = rng();
    return Problem{inputs, [seed](std::span<const Tensor> xs) {
                     return random_projection(multi_head_update(xs[0], xs.subspan(1)), seed);
                   }};
  }));
  checks.push_back(problem_check("grapher", [](std::mt19937_64& rng) {
    const std::size_t heads = extent(rng, 1, 2), d = heads * extent(rng, 1, 3);
    const std::size_t batch = extent(rng, 1, 2), n = extent(rng, 3, 6);
    const std::size_t k = extent(rng, 1, 3), layer = extent(rng, 1, 8);
    GrapherParams params = make_grapher(d, heads, rng);
    jitter(params, rng);
    std::vector<Tensor> inputs{random_normal({batch * n, d}, rng)};
    append_trainable(params, inputs);
    auto cache = std::make_shared<GraphCache>();
    const std::uint64_t seed = rng();
    return Problem{inputs, [params, cache, batch, k, layer, seed](std::span<const Tensor> xs) {
                     if (cache->calls() > 0) cache->replay();
                     GrapherParams p = rebind(params, xs, 1);
                     ForwardContext ctx{NormMode::train, false, cache.get()};
                     return random_projection(grapher_forward(xs[0], batch, p, k, layer, ctx), seed);
                   }};
  }));
  checks.push_back(problem_check("ffn", [](std::mt19937_64& rng) {
    const std::size_t d = extent(rng, 1, 4), ratio = extent(rng, 1, 2), rows = extent(rng, 2, 6);
    FfnParams params = make_ffn(d, ratio, rng);
    jitter(params, rng);
    std::vector<Tensor> inputs{random_normal({rows, d}, rng)};
    append_trainable(params, inputs);
    const std::uint64_t seed = rng();
    return Problem{inputs, [params, seed](std::span<const Tensor> xs) {
                     FfnParams p = rebind(params, xs, 1);
                     return random_projection(ffn_forward(xs[0], p, kFrozenTrain), seed);
                   }};
  }));
  checks.push_back(problem_check("downsample", [](std::mt19937_64& rng) {
    const std::size_t c = extent(rng, 1, 3), out = extent(rng, 1, 4), size = 2 * extent(rng, 1, 2);
    DownsampleParams params{make_conv(c, out, 3, 2, 1, rng), make_batch_norm(out)};
    jitter(params, rng);
    std::vector<Tensor> inputs{random_normal({2, c, size, size}, rng)};
    append_trainable(params, inputs);
    const std::uint64_t seed = rng();
    return Problem{inputs, [params, seed](std::span<const Tensor> xs) {
                     DownsampleParams p = rebind(params, xs, 1);
                     return random_projection(downsample(xs[0], p, kFrozenTrain), seed);
                   }};
  }));
  return checks;
}

std::vector<OpCheck> all_op_checks() {
  std::vector<OpCheck> checks = tensor_op_checks();
  for (auto& c : capsule_op_checks()) checks.push_back(std::move(c));
  for (auto& c : block_checks()) checks.push_back(std::move(c));
  return checks;
}

std::vector<CheckResult> run_op_checks(const std::vector<OpCheck>& checks, std::size_t instances,
                                       std::uint64_t seed, double threshold,
                                       const std::function<void(const CheckResult&)>& on_result) {
  std::vector<CheckResult> results;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    CheckResult r{checks[i].name, instances, 0.0, threshold};
    for (std::size_t k = 0; k < instances; ++k) r.max_error = std::max(r.max_error, checks[i].run_instance(rng));
    results.push_back(r);
    if (on_result) on_result(r);
  }
  return results;
}

double end_to_end_check(const ModelConfig& config, std::uint64_t seed, std::size_t coords_per_input) {
  Model model(config, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Tensor> inputs{random_normal({2, 3, config.height, config.width}, rng)};
  for (auto* slot : model.parameter_slots()) inputs.push_back(*slot);
  std::vector<std::size_t> targets{extent(rng, 0, config.classes - 1), extent(rng, 0, config.classes - 1)};
  const LossKind loss = resolve_loss(LossKind::automatic, config.head);
  auto cache = std::make_shared<GraphCache>();
  ScalarFn f = [&model, cache, targets, loss](std::span<const Tensor> xs) {
    if (cache->calls() > 0) cache->replay();
    Model copy = model;
    auto slots = copy.parameter_slots();
    for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] = xs[i + 1];
    ModelOutput out = copy.forward(xs[0], ForwardContext{NormMode::train, false, cache.get()});
    return model_loss(out, targets, loss);
  };
  GradCheckOptions options;
  options.max_coords_per_input = coords_per_input;
  options.seed = seed;
  // Thousands of max-relative argmaxes; a wider step straddles their switches.
  options.eps = 1e-6;
  return grad_check(f, inputs, options);
}

}  // namespace pvgc
