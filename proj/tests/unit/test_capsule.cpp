#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "pvgc/autodiff.hpp"
#include "pvgc/capsule.hpp"
#include "pvgc/gradcheck.hpp"
#include "pvgc/model.hpp"

using namespace pvgc;
using testing::vec;

TEST_CASE("squash examples") {
  CHECK(vec(squash(Tensor::zeros({4}))) == std::vector<double>(4, 0.0));
  auto s = vec(squash(Tensor({2}, {3, 4})));
  CHECK(s[0] == doctest::Approx(0.576923).epsilon(1e-6));
  CHECK(s[1] == doctest::Approx(0.769231).epsilon(1e-6));
  CHECK(std::hypot(s[0], s[1]) == doctest::Approx(25.0 / 26.0).epsilon(1e-14));
}

TEST_CASE("squash norm bound on random vectors") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> scale(-3.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    auto v = testing::normal_values(8, rng, std::pow(10.0, scale(rng)));
    auto out = vec(squash(Tensor({8}, v)));
    double sq = 0.0, on = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
      sq += v[j] * v[j];
      on += out[j] * out[j];
    }
    CHECK(std::sqrt(on) < 1.0);
    CHECK(std::abs(std::sqrt(on) - sq / (1.0 + sq)) <= 1e-12);
    CHECK(testing::max_abs_diff(out, oracle::squash(v)) < 1e-14);
  }
}

TEST_CASE("norm_last and class_norms") {
  CHECK(vec(class_norms(Tensor({1, 2, 2}, {1, 0, 3, 4}))) == std::vector<double>{1, 5});
  CHECK(class_norms(Tensor::zeros({1, 1, 3})).item() == 0.0);

  Tensor z = Tensor::zeros({1, 3}, true);
  Tape tape;
  TapeScope scope(tape);
  auto g = backward(sum(norm_last(z)));
  CHECK(vec(g.grad(z)) == std::vector<double>(3, 0.0));
}

TEST_CASE("primary_capsules") {
  std::mt19937_64 rng(2);
  auto caps = primary_capsules(random_normal({2, 384, 8, 8}, rng, 1.0, false), 8);
  CHECK(caps.shape() == Shape{2, 3072, 8});
  CHECK(primary_capsules(random_normal({1, 384, 1, 1}, rng, 1.0, false), 8).shape() == Shape{1, 48, 8});
  CHECK(vec(primary_capsules(Tensor::zeros({1, 16, 2, 2}), 8)) == std::vector<double>(64, 0.0));
  CHECK_THROWS_AS(primary_capsules(Tensor::zeros({1, 12, 1, 1}), 8), ConfigError);

  // Location (y, x) holds channels [t·p, (t+1)·p) as capsule (y·w + x)·T + t.
  auto f = random_normal({1, 16, 2, 2}, rng, 1.0, false);
  auto out = vec(primary_capsules(f, 8));
  for (std::size_t loc = 0; loc < 4; ++loc)
    for (std::size_t t = 0; t < 2; ++t) {
      std::vector<double> raw(8);
      for (std::size_t j = 0; j < 8; ++j) raw[j] = f[(t * 8 + j) * 4 + loc];
      auto want = oracle::squash(raw);
      for (std::size_t j = 0; j < 8; ++j) CHECK(out[(loc * 2 + t) * 8 + j] == doctest::Approx(want[j]).epsilon(1e-14));
    }
}

TEST_CASE("capsule_transform shares weights by type") {
  std::mt19937_64 rng(3);
  const std::size_t m = 4, t = 2, c = 3, p = 2, d = 3;
  auto u = random_normal({1, m, p}, rng, 1.0, false);
  auto w = random_normal({t, c, p, d}, rng, 1.0, false);
  auto y = vec(capsule_transform(u, w));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t k = 0; k < d; ++k) {
        double s = 0.0;
        for (std::size_t q = 0; q < p; ++q) s += u[i * p + q] * w[(((i % t) * c + j) * p + q) * d + k];
        CHECK(y[((i * c) + j) * d + k] == doctest::Approx(s).epsilon(1e-14));
      }
}

TEST_CASE("routing matches a straight-line reimplementation") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t b = 2, m = 6 + rng() % 10, c = 2 + rng() % 5, d = 2 + rng() % 6;
    auto uv = testing::normal_values(b * m * c * d, rng, 0.5);
    RoutingTrace trace;
    auto v = vec(dynamic_routing(Tensor({b, m, c, d}, uv), 3, &trace));
    REQUIRE(trace.couplings.size() == 3);
    for (std::size_t s = 0; s < b; ++s) {
      std::vector<double> one(uv.begin() + static_cast<long>(s * m * c * d),
                              uv.begin() + static_cast<long>((s + 1) * m * c * d));
      std::vector<std::vector<double>> coup;
      auto want = oracle::routing(one, m, c, d, 3, &coup);
      std::vector<double> got(v.begin() + static_cast<long>(s * c * d), v.begin() + static_cast<long>((s + 1) * c * d));
      CHECK(testing::max_abs_diff(got, want) <= 1e-10);
      for (std::size_t it = 0; it < 3; ++it) {
        auto cv = vec(trace.couplings[it]);
        std::vector<double> mine(cv.begin() + static_cast<long>(s * m * c), cv.begin() + static_cast<long>((s + 1) * m * c));
        CHECK(testing::max_abs_diff(mine, coup[it]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("coupling rows are probability vectors") {
  std::mt19937_64 rng(5);
  RoutingTrace trace;
  dynamic_routing(random_normal({3, 20, 7, 16}, rng, 1.0, false), 5, &trace);
  for (const auto& cpl : trace.couplings) {
    auto v = vec(cpl);
    for (std::size_t row = 0; row < 60; ++row) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(v[row * 7 + j] >= 0.0);
        s += v[row * 7 + j];
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("single-iteration routing is uniform") {
  std::mt19937_64 rng(6);
  const std::size_t m = 5, c = 3, d = 4;
  auto uv = testing::normal_values(m * c * d, rng);
  auto v = vec(dynamic_routing(Tensor({1, m, c, d}, uv), 1));
  for (std::size_t j = 0; j < c; ++j) {
    std::vector<double> s(d, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < d; ++k) s[k] += uv[(i * c + j) * d + k] / static_cast<double>(c);
    auto want = oracle::squash(s);
    for (std::size_t k = 0; k < d; ++k) CHECK(std::abs(v[j * d + k] - want[k]) <= 1e-12);
  }

  auto single = vec(dynamic_routing(Tensor({1, 1, c, d}, std::vector<double>(uv.begin(), uv.begin() + c * d)), 1));
  for (std::size_t j = 0; j < c; ++j) {
    std::vector<double> s(uv.begin() + static_cast<long>(j * d), uv.begin() + static_cast<long>((j + 1) * d));
    for (auto& x : s) x /= static_cast<double>(c);
    auto want = oracle::squash(s);
    for (std::size_t k = 0; k < d; ++k) CHECK(std::abs(single[j * d + k] - want[k]) <= 1e-12);
  }
  CHECK_THROWS_AS(dynamic_routing(Tensor({1, m, c, d}, uv), 0), ConfigError);
}

TEST_CASE("predict") {
  CHECK(predict(Tensor({1, 3}, {0.1, 0.9, 0.2})) == std::vector<std::size_t>{1});
  CHECK(predict(Tensor({1, 3}, {0.5, 0.5, 0.5})) == std::vector<std::size_t>{0});

  std::mt19937_64 rng(7);
  auto caps = random_normal({4, 5, 3}, rng, 1.0, false);
  auto before = predict(class_norms(caps));
  CHECK(predict(class_norms(mul_scalar(caps, 3.7))) == before);
}

TEST_CASE("margin loss closed forms") {
  std::vector<std::size_t> target{0};
  CHECK(margin_loss(Tensor({1, 3}, {0.95, 0.05, 0.05}), target).item() == 0.0);
  CHECK(std::abs(margin_loss(Tensor({1, 3}, {0.4, 0.05, 0.05}), target).item() - 0.25) <= 1e-12);
  CHECK(std::abs(margin_loss(Tensor({1, 3}, {0.95, 0.6, 0.05}), target).item() - 0.125) <= 1e-12);

  // Batch mean.
  std::vector<std::size_t> two{0, 0};
  CHECK(std::abs(margin_loss(Tensor({2, 2}, {0.4, 0.0, 0.95, 0.0}), two).item() - 0.125) <= 1e-12);

  CHECK_THROWS_AS(margin_loss(Tensor({1, 3}, {0.1, 0.2, 0.3}), std::vector<std::size_t>{3}), ContractError);

  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    auto norms = random_uniform({2, 7}, rng, 0.0, 0.999, false);
    std::vector<std::size_t> t{rng() % 7, rng() % 7};
    CHECK(margin_loss(norms, t).item() >= 0.0);
  }
}

TEST_CASE("margin loss gradient away from kinks") {
  PrecisionScope f64(Precision::f64);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> v(7);
    std::uniform_real_distribution<double> dist(0.0, 0.999);
    for (auto& x : v) {
      do x = dist(rng);
      while (std::abs(x - 0.9) < 1e-3 || std::abs(x - 0.1) < 1e-3);
    }
    std::vector<std::size_t> t{rng() % 7};
    std::vector<Tensor> in{Tensor({1, 7}, v, true)};
    auto err = grad_check([&](std::span<const Tensor> xs) { return margin_loss(xs[0], t); }, in);
    CHECK(err <= 1e-6);
  }
}

TEST_CASE("cross entropy") {
  std::vector<std::size_t> t{3};
  CHECK(std::abs(cross_entropy(Tensor::zeros({1, 7}), t).item() - std::log(7.0)) <= 1e-9);
  std::vector<double> sat(7, 0.0);
  sat[3] = 1000.0;
  CHECK(cross_entropy(Tensor({1, 7}, sat), t).item() < 1e-6);

  std::mt19937_64 rng(10);
  auto logits = testing::normal_values(7, rng);
  auto shifted = logits;
  for (auto& x : shifted) x += 12.5;
  CHECK(std::abs(cross_entropy(Tensor({1, 7}, logits), t).item() - cross_entropy(Tensor({1, 7}, shifted), t).item()) <=
        1e-12);
}

TEST_CASE("capsule gradient checks") {
  PrecisionScope f64(Precision::f64);
  std::mt19937_64 rng(11);
  for (const auto& check : capsule_op_checks()) {
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) worst = std::max(worst, check.run_instance(rng));
    INFO(check.name);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("model forward and loss selection") {
  Model m(model_preset("micro"), 3);
  std::mt19937_64 rng(12);
  auto out = m.forward(random_normal({2, 3, 32, 32}, rng, 1.0, false), ForwardContext{NormMode::train, false, nullptr});
  CHECK(out.scores.shape() == Shape{2, 3});
  CHECK(out.capsules.shape() == Shape{2, 3, 8});
  for (double s : out.scores.values()) CHECK(s < 1.0);
  CHECK(resolve_loss(LossKind::automatic, HeadKind::capsule) == LossKind::margin);
  CHECK(resolve_loss(LossKind::automatic, HeadKind::pooling_mlp) == LossKind::cross_entropy);
  CHECK(parse_loss("ce") == LossKind::cross_entropy);
  CHECK_THROWS_AS(parse_loss("hinge"), ConfigError);
}
