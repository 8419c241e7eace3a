#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "pvgc/autodiff.hpp"
#include "pvgc/backbone.hpp"
#include "pvgc/model.hpp"
#include "pvgc/verification.hpp"

using namespace pvgc;
using testing::vec;

namespace {

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

NeighborTable table_of(std::size_t n, std::size_t k, std::vector<std::size_t> idx) {
  NeighborTable t;
  t.node_count = n;
  t.neighbors = k;
  t.requested = k;
  t.indices = std::move(idx);
  return t;
}

const ForwardContext kEval{NormMode::eval, false, nullptr};

}  // namespace

TEST_CASE("stem output shape") {
  ModelConfig c = model_preset("tiny");
  c.height = c.width = 64;
  std::mt19937_64 rng(1);
  auto params = make_backbone(c, rng);
  auto y = stem_forward(random_normal({2, 3, 64, 64}, rng, 1.0, false), params.stem, kEval);
  CHECK(y.shape() == Shape{2, 48, 16, 16});
  CHECK_THROWS_AS(stem_forward(Tensor::zeros({1, 3, 30, 32}), params.stem, kEval), ShapeError);
}

TEST_CASE("stem equals the composition of conv, batch norm and gelu oracles") {
  ModelConfig c = model_preset("micro");
  std::mt19937_64 rng(2);
  auto params = make_backbone(c, rng);
  // Zero weights with bias β first, then random weights.
  for (int variant = 0; variant < 2; ++variant) {
    for (std::size_t i = 0; i < 3; ++i) {
      auto& conv = params.stem.convs[i];
      if (variant == 0) {
        conv.weight = Tensor::zeros(conv.weight.shape());
        conv.bias = Tensor::full(conv.bias.shape(), 0.3 * static_cast<double>(i + 1));
      } else {
        conv.weight = random_normal(conv.weight.shape(), rng, 0.3, false);
        conv.bias = random_normal(conv.bias.shape(), rng, 0.1, false);
      }
      auto& norm = params.stem.norms[i];
      norm.state.running_mean = random_normal(norm.gamma.shape(), rng, 0.1, false);
      norm.state.running_var = random_uniform(norm.gamma.shape(), rng, 0.5, 2.0, false);
      norm.gamma = random_uniform(norm.gamma.shape(), rng, 0.5, 1.5, false);
      norm.beta = random_normal(norm.gamma.shape(), rng, 0.1, false);
    }
    auto image = testing::normal_values(3 * 32 * 32, rng);
    auto got = vec(stem_forward(Tensor({1, 3, 32, 32}, image), params.stem, kEval));

    std::vector<double> x = image;
    std::size_t ch = 3, size = 32;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& conv = params.stem.convs[i];
      const std::size_t out = conv.weight.dim(0);
      x = oracle::conv2d(x, 1, ch, size, size, vec(conv.weight), out, 3, vec(conv.bias), conv.stride, conv.padding);
      size = (size + 2 * conv.padding - 3) / conv.stride + 1;
      const auto& norm = params.stem.norms[i];
      for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t p = 0; p < size * size; ++p) {
          double& v = x[o * size * size + p];
          v = (v - norm.state.running_mean[o]) / std::sqrt(norm.state.running_var[o] + 1e-5) * norm.gamma[o] +
              norm.beta[o];
          v = gelu_ref(v);
        }
      }
      ch = out;
    }
    CHECK(testing::max_abs_diff(got, x) < 1e-12);
  }
}

TEST_CASE("max_relative_aggregate examples") {
  Tensor x({3, 2}, {1, 2, 3, 0, 2, 5});
  auto t = table_of(3, 2, {1, 2, 0, 2, 0, 1});
  auto y = vec(max_relative_aggregate(x, t));
  CHECK(std::vector<double>(y.begin(), y.begin() + 4) == std::vector<double>{1, 2, 2, 3});

  Tensor same({3, 2}, {4, -1, 4, -1, 4, -1});
  auto s = vec(max_relative_aggregate(same, t));
  CHECK(std::vector<double>(s.begin(), s.begin() + 4) == std::vector<double>{4, -1, 0, 0});

  auto single = vec(max_relative_aggregate(x, table_of(3, 1, {2, 0, 1})));
  CHECK(std::vector<double>(single.begin(), single.begin() + 4) == std::vector<double>{1, 2, 1, 3});

  CHECK_THROWS_AS(max_relative_aggregate(x, table_of(4, 1, {1, 0, 0, 0})), ContractError);
}

TEST_CASE("max_relative_aggregate against a per-element loop") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 3 + rng() % 10, d = 1 + rng() % 5, k = 1 + rng() % 3;
    auto xv = testing::normal_values(n * d, rng);
    auto t = knn_dilated(xv, n, d, k, 1);
    auto got = vec(max_relative_aggregate(Tensor({n, d}, xv), t));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        double m = -INFINITY;
        for (auto j : t.row(i)) m = std::max(m, xv[j * d + c] - xv[i * d + c]);
        CHECK(got[i * 2 * d + c] == xv[i * d + c]);
        CHECK(got[i * 2 * d + d + c] == m);
      }
    }
  }
}

TEST_CASE("multi_head_update") {
  std::mt19937_64 rng(7);
  const std::size_t n = 5, d = 4;
  auto xv = testing::normal_values(n * 2 * d, rng);
  Tensor x({n, 2 * d}, xv);

  Tensor w1 = random_normal({2 * d, d}, rng, 1.0, false);
  CHECK(vec(multi_head_update(x, std::vector<Tensor>{w1})) == vec(matmul(x, w1)));

  Tensor h0 = random_normal({d, d / 2}, rng, 1.0, false);
  Tensor h1 = random_normal({d, d / 2}, rng, 1.0, false);
  auto y = vec(multi_head_update(x, std::vector<Tensor>{h0, h1}));
  CHECK(y.size() == n * d);
  std::vector<double> block(2 * d * d, 0.0);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d / 2; ++c) {
      block[r * d + c] = h0[r * (d / 2) + c];
      block[(d + r) * d + d / 2 + c] = h1[r * (d / 2) + c];
    }
  CHECK(testing::max_abs_diff(y, oracle::matmul(xv, block, n, 2 * d, d)) < 1e-12);

  std::vector<Tensor> three{random_normal({2, 1}, rng), random_normal({2, 1}, rng), random_normal({2, 1}, rng)};
  CHECK_THROWS_AS(multi_head_update(x, three), ShapeError);
}

TEST_CASE("grapher and ffn residual identities") {
  std::mt19937_64 rng(9);
  const std::size_t batch = 2, n = 9, d = 8;
  Tensor x = random_normal({batch * n, d}, rng, 1.0, false);
  auto g = make_grapher(d, 2, rng);
  g.out.weight = Tensor::zeros(g.out.weight.shape());
  for (auto mode : {NormMode::train, NormMode::eval}) {
    ForwardContext ctx{mode, false, nullptr};
    CHECK(vec(grapher_forward(x, batch, g, 3, 1, ctx)) == vec(x));
  }
  auto f = make_ffn(d, 4, rng);
  f.fc2.weight = Tensor::zeros(f.fc2.weight.shape());
  for (auto mode : {NormMode::train, NormMode::eval}) {
    ForwardContext ctx{mode, false, nullptr};
    auto z = ffn_forward(x, f, ctx);
    CHECK(z.shape() == x.shape());
    CHECK(vec(z) == vec(x));
  }
}

TEST_CASE("grapher node-permutation equivariance") {
  std::mt19937_64 rng(10);
  const std::size_t n = 16, d = 8;
  auto g = make_grapher(d, 2, rng);
  for (auto* norm : {&g.in_norm, &g.out_norm}) {
    norm->state.running_mean = random_normal({d}, rng, 0.1, false);
    norm->state.running_var = random_uniform({d}, rng, 0.5, 2.0, false);
  }
  for (int trial = 0; trial < 10; ++trial) {
    auto xv = testing::normal_values(n * d, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pv(n * d);
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(xv.begin() + static_cast<long>(perm[i] * d), d, pv.begin() + static_cast<long>(i * d));

    for (auto mode : {NormMode::eval, NormMode::train}) {
      ForwardContext ctx{mode, false, nullptr};
      auto y = vec(grapher_forward(Tensor({n, d}, xv), 1, g, 3, 5, ctx));
      auto py = vec(grapher_forward(Tensor({n, d}, pv), 1, g, 3, 5, ctx));
      double worst = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) worst = std::max(worst, std::abs(py[i * d + c] - y[perm[i] * d + c]));
      // Running statistics make every row independent; batch statistics
      // reorder a sum.
      if (mode == NormMode::eval) {
        CHECK(worst == 0.0);
      } else {
        CHECK(worst < 1e-12);
      }
    }
  }
}

TEST_CASE("downsample") {
  std::mt19937_64 rng(11);
  DownsampleParams p{make_conv(48, 96, 3, 2, 1, rng), make_batch_norm(96)};
  auto y = downsample(random_normal({1, 48, 8, 8}, rng, 1.0, false), p, kEval);
  CHECK(y.shape() == Shape{1, 96, 4, 4});
  p.conv.weight = Tensor::zeros(p.conv.weight.shape());
  ForwardContext train{NormMode::train, false, nullptr};
  CHECK(vec(downsample(random_normal({2, 48, 8, 8}, rng, 1.0, false), p, train)) ==
        std::vector<double>(2 * 96 * 16, 0.0));
  CHECK_THROWS_AS(downsample(Tensor::zeros({1, 48, 7, 8}), p, kEval), ShapeError);
}

TEST_CASE("backbone output shapes") {
  std::mt19937_64 rng(12);
  ModelConfig tiny = model_preset("tiny");
  tiny.height = tiny.width = 32;
  auto params = make_backbone(tiny, rng);
  CHECK(backbone_forward(Tensor::zeros({2, 3, 32, 32}), tiny, params, kEval).shape() == Shape{2, 384, 1, 1});

  ModelConfig micro = model_preset("micro");
  auto mp = make_backbone(micro, rng);
  CHECK(backbone_forward(Tensor::zeros({2, 3, 32, 32}), micro, mp, kEval).shape() == Shape{2, 32, 1, 1});
}

TEST_CASE("backbone output at 256") {
  std::mt19937_64 rng(13);
  ModelConfig tiny = model_preset("tiny");
  auto params = make_backbone(tiny, rng);
  auto y = backbone_forward(random_normal({1, 3, 256, 256}, rng, 1.0, false), tiny, params, kEval);
  CHECK(y.shape() == Shape{1, 384, 8, 8});
}

TEST_CASE("stage shapes follow the H/4 ... H/32 schedule") {
  for (const char* name : {"micro", "tiny"}) {
    ModelConfig c = model_preset(name);
    auto census = count_params_flops(c);
    for (std::size_t s = 0; s < 4; ++s) {
      std::string want = std::to_string(c.stages[s].dim) + "×" + std::to_string(c.height >> (s + 2)) + "×" +
                         std::to_string(c.width >> (s + 2));
      CHECK(census.entry("stage" + std::to_string(s + 1)).output_shape == want);
    }
  }
}

TEST_CASE("census matches the instantiated model") {
  for (auto head : {HeadKind::capsule, HeadKind::pooling_mlp}) {
    ModelConfig c = model_preset("micro");
    c.head = head;
    Model m(c, 1);
    CHECK(count_params_flops(c).params == m.parameter_count());
  }
}

TEST_CASE("census closed forms") {
  ModelConfig c = model_preset("micro");
  auto census = count_params_flops(c);
  // Three 3×3 conv layers plus batch norm affine pairs.
  std::size_t stem = 0, in = 3;
  for (auto out : c.stem_channels) {
    stem += out * in * 9 + out + 2 * out;
    in = out;
  }
  CHECK(census.entry("stem").params == stem);
  CHECK(census.entry("down1").params == 16 * 8 * 9 + 16 + 2 * 16);
  CHECK(census.flops % 2 == 0);
}

TEST_CASE("tiny census directional relations") {
  ModelConfig pool = model_preset("tiny");
  pool.head = HeadKind::pooling_mlp;
  ModelConfig caps = model_preset("tiny");
  auto p = count_params_flops(pool);
  auto k = count_params_flops(caps);
  CHECK(k.params < p.params);
  CHECK(k.flops > p.flops);
}

TEST_CASE("block gradient checks") {
  PrecisionScope f64(Precision::f64);
  for (const auto& r : run_op_checks(block_checks(), 20, 3, 1e-4)) {
    INFO(r.name);
    CHECK(r.passed());
  }
}
