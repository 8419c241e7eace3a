#include "pvgc/capsule.hpp"

#include <cmath>
#include <string>

#include "pvgc/autodiff.hpp"
#include "pvgc/detail/op_support.hpp"
#include "pvgc/ops.hpp"

namespace pvgc {

using detail::make_output;
using detail::needs_grad;
using detail::record;
using detail::recording_tape;

Tensor squash(const Tensor& s) {
  if (s.rank() == 0) throw ShapeError("squash needs rank ≥ 1");
  const std::size_t width = s.shape().back();
  const std::size_t rows = s.numel() / width;
  auto sv = s.values();
  std::vector<double> out(s.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = sv.data() + r * width;
    double n2 = 0.0;
    for (std::size_t j = 0; j < width; ++j) n2 += in[j] * in[j];
    const double n = std::sqrt(n2);
    const double k = n / (1.0 + n2);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = k * in[j];
  }
  Tensor result = make_output("squash", s.shape(), std::move(out));
  if (Tape* tape = recording_tape({&s})) {
    Tensor x = s.detach();
    record(tape, result, "squash", {&s}, [x, rows, width](const Tensor& g) {
      auto xv = x.values();
      auto gv = g.values();
      std::vector<double> dx(x.numel());
      for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * width;
        const double* gi = gv.data() + r * width;
        double n2 = 0.0, dot = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
          n2 += in[j] * in[j];
          dot += in[j] * gi[j];
        }
        const double n = std::sqrt(n2);
        const double k = n / (1.0 + n2);
        // k'(n)/n with k' = (1 − n²)/(1 + n²)²; the product with s·(s·g) vanishes at n = 0.
        const double radial = n > 0.0 ? (1.0 - n2) / ((1.0 + n2) * (1.0 + n2)) / n : 0.0;
        for (std::size_t j = 0; j < width; ++j) dx[r * width + j] = k * gi[j] + radial * dot * in[j];
      }
      return std::vector<Tensor>{Tensor(x.shape(), std::move(dx))};
    });
  }
  return result;
}

Tensor norm_last(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("norm_last needs rank ≥ 1");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  auto xv = x.values();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < width; ++j) n2 += xv[r * width + j] * xv[r * width + j];
    out[r] = std::sqrt(n2);
  }
  Tensor result = make_output("norm", out_shape, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    Tensor in = x.detach();
    Tensor norms = result.detach();
    record(tape, result, "norm", {&x}, [in, norms, rows, width](const Tensor& g) {
      auto xv = in.values();
      auto nv = norms.values();
      auto gv = g.values();
      std::vector<double> dx(in.numel(), 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        if (nv[r] == 0.0) continue;
        const double scale = gv[r] / nv[r];
        for (std::size_t j = 0; j < width; ++j) dx[r * width + j] = scale * xv[r * width + j];
      }
      return std::vector<Tensor>{Tensor(in.shape(), std::move(dx))};
    });
  }
  return result;
}

Tensor capsule_transform(const Tensor& u, const Tensor& w) {
  if (u.rank() != 3 || w.rank() != 4) {
    throw ShapeError("capsule_transform expects B×M×p and T×c×p×d, got " + shape_str(u.shape()) + " and " +
                     shape_str(w.shape()));
  }
  const std::size_t batch = u.dim(0), m = u.dim(1), p = u.dim(2);
  const std::size_t types = w.dim(0), c = w.dim(1), d = w.dim(3);
  if (w.dim(2) != p) {
    throw ShapeError("capsule_transform: capsule width " + std::to_string(p) + " does not match weights " +
                     shape_str(w.shape()));
  }
  if (m % types != 0) {
    throw ShapeError("capsule_transform: " + std::to_string(types) + " weight types do not divide " +
                     std::to_string(m) + " capsules");
  }
  auto uv = u.values();
  auto wv = w.values();
  std::vector<double> out(batch * m * c * d, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ui = uv.data() + (b * m + i) * p;
      const double* wt = wv.data() + (i % types) * c * p * d;
      double* o = out.data() + (b * m + i) * c * d;
      for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t k = 0; k < p; ++k) {
          const double uk = ui[k];
          const double* row = wt + (j * p + k) * d;
          for (std::size_t e = 0; e < d; ++e) o[j * d + e] += uk * row[e];
        }
      }
    }
  }
  Tensor result = make_output("capsule_transform", {batch, m, c, d}, std::move(out));
  if (Tape* tape = recording_tape({&u, &w})) {
    const bool gu = needs_grad(tape, u);
    const bool gw = needs_grad(tape, w);
    Tensor uc = u.detach();
    Tensor wc = w.detach();
    record(tape, result, "capsule_transform", {&u, &w},
           [uc, wc, batch, m, p, types, c, d, gu, gw](const Tensor& g) {
             auto uv = uc.values();
             auto wv = wc.values();
             auto gv = g.values();
             std::vector<Tensor> grads(2);
             std::vector<double> du(gu ? uc.numel() : 0, 0.0);
             std::vector<double> dw(gw ? wc.numel() : 0, 0.0);
             for (std::size_t b = 0; b < batch; ++b) {
               for (std::size_t i = 0; i < m; ++i) {
                 const std::size_t t = i % types;
                 const double* gi = gv.data() + (b * m + i) * c * d;
                 const double* ui = uv.data() + (b * m + i) * p;
                 for (std::size_t j = 0; j < c; ++j) {
                   for (std::size_t k = 0; k < p; ++k) {
                     const std::size_t row = ((t * c + j) * p + k) * d;
                     double acc = 0.0;
                     for (std::size_t e = 0; e < d; ++e) {
                       acc += gi[j * d + e] * wv[row + e];
                       if (gw) dw[row + e] += ui[k] * gi[j * d + e];
                     }
                     if (gu) du[(b * m + i) * p + k] += acc;
                   }
                 }
               }
             }
             if (gu) grads[0] = Tensor(uc.shape(), std::move(du));
             if (gw) grads[1] = Tensor(wc.shape(), std::move(dw));
             return grads;
           });
  }
  return result;
}

Tensor primary_capsules(const Tensor& features, std::size_t capsule_dim) {
  if (features.rank() != 4) throw ShapeError("primary_capsules expects B×C×h×w, got " + shape_str(features.shape()));
  const std::size_t channels = features.dim(1);
  if (capsule_dim == 0 || channels % capsule_dim != 0) {
    throw ConfigError("primary capsule dim " + std::to_string(capsule_dim) + " does not divide " +
                      std::to_string(channels) + " channels");
  }
  const std::size_t batch = features.dim(0);
  const std::size_t m = channels / capsule_dim * features.dim(2) * features.dim(3);
  return squash(reshape(permute(features, {0, 2, 3, 1}), {batch, m, capsule_dim}));
}

Tensor dynamic_routing(const Tensor& predictions, std::size_t iterations, RoutingTrace* trace) {
  if (iterations < 1) throw ConfigError("routing needs at least one iteration");
  if (predictions.rank() != 4) {
    throw ShapeError("dynamic_routing expects B×M×c×d predictions, got " + shape_str(predictions.shape()));
  }
  const std::size_t batch = predictions.dim(0), m = predictions.dim(1);
  const std::size_t c = predictions.dim(2), d = predictions.dim(3);
  Tensor logits = Tensor::zeros({batch, m, c});
  Tensor v;
  for (std::size_t it = 0; it < iterations; ++it) {
    Tensor couplings = softmax_last(logits);
    if (trace != nullptr) trace->couplings.push_back(couplings.detach());
    Tensor s = sum(mul(predictions, reshape(couplings, {batch, m, c, 1})), {1});
    v = squash(s);
    if (it + 1 < iterations) {
      Tensor agreement = sum(mul(predictions, reshape(v, {batch, 1, c, d})), {3});
      logits = add(logits, agreement);
    }
  }
  return v;
}

std::vector<std::size_t> predict(const Tensor& scores) {
  if (scores.rank() != 2) throw ShapeError("predict expects B×c scores, got " + shape_str(scores.shape()));
  const std::size_t c = scores.dim(1);
  auto sv = scores.values();
  std::vector<std::size_t> out(scores.dim(0));
  for (std::size_t b = 0; b < out.size(); ++b) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (sv[b * c + j] > sv[b * c + best]) best = j;
    }
    out[b] = best;
  }
  return out;
}

Tensor margin_loss(const Tensor& norms, std::span<const std::size_t> targets, const MarginParams& params) {
  if (norms.rank() != 2) throw ShapeError("margin_loss expects B×c norms, got " + shape_str(norms.shape()));
  const std::size_t batch = norms.dim(0), c = norms.dim(1);
  if (targets.size() != batch) {
    throw ContractError("margin_loss: " + std::to_string(targets.size()) + " targets for a batch of " +
                        std::to_string(batch));
  }
  std::vector<double> present(batch * c, 0.0), absent(batch * c, params.lambda);
  for (std::size_t b = 0; b < batch; ++b) {
    if (targets[b] >= c) {
      throw ContractError("margin_loss: target " + std::to_string(targets[b]) + " outside " + std::to_string(c) +
                          " classes");
    }
    present[b * c + targets[b]] = 1.0;
    absent[b * c + targets[b]] = 0.0;
  }
  Tensor t_present({batch, c}, std::move(present));
  Tensor t_absent({batch, c}, std::move(absent));
  Tensor below = relu(add_scalar(negate(norms), params.m_plus));
  Tensor above = relu(add_scalar(norms, -params.m_minus));
  Tensor terms = add(mul(mul(below, below), t_present), mul(mul(above, above), t_absent));
  return mul_scalar(sum(terms), 1.0 / static_cast<double>(batch));
}

Tensor make_capsule_weights(const ModelConfig& config, std::mt19937_64& rng) {
  const std::size_t m = config.primary_capsules();
  const std::size_t types = config.share_capsule_weights ? config.capsule_types() : m;
  const std::size_t p = config.primary_caps_dim;
  // Scaled so that the uniformly coupled first-round sum over M inputs stays O(1).
  const double stddev = static_cast<double>(config.classes) / std::sqrt(static_cast<double>(m * p));
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(types * config.classes * p * config.class_caps_dim);
  for (auto& x : v) x = dist(rng);
  round_to_precision(v);
  return Tensor({types, config.classes, p, config.class_caps_dim}, std::move(v), true);
}

std::vector<OpCheck> capsule_op_checks() {
  auto extent = [](std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  std::vector<OpCheck> checks;
  checks.push_back({"squash", [extent](std::mt19937_64& rng) {
                      Tensor s = random_normal({extent(rng, 1, 4), extent(rng, 1, 6)}, rng);
                      const std::uint64_t seed = rng();
                      return grad_check(
                          [seed](std::span<const Tensor> xs) { return random_projection(squash(xs[0]), seed); },
                          std::vector<Tensor>{s});
                    }});
  checks.push_back({"norm", [extent](std::mt19937_64& rng) {
                      Tensor s = random_normal({extent(rng, 1, 4), extent(rng, 1, 6)}, rng);
                      const std::uint64_t seed = rng();
                      return grad_check(
                          [seed](std::span<const Tensor> xs) { return random_projection(norm_last(xs[0]), seed); },
                          std::vector<Tensor>{s});
                    }});
  checks.push_back({"capsule_transform", [extent](std::mt19937_64& rng) {
                      const std::size_t types = extent(rng, 1, 3);
                      const std::size_t m = types * extent(rng, 1, 2);
                      const std::size_t p = extent(rng, 1, 4);
                      Tensor u = random_normal({extent(rng, 1, 2), m, p}, rng);
                      Tensor w = random_normal({types, extent(rng, 1, 3), p, extent(rng, 1, 4)}, rng);
                      const std::uint64_t seed = rng();
                      return grad_check(
                          [seed](std::span<const Tensor> xs) {
                            return random_projection(capsule_transform(xs[0], xs[1]), seed);
                          },
                          std::vector<Tensor>{u, w});
                    }});
  checks.push_back({"dynamic_routing", [extent](std::mt19937_64& rng) {
                      Tensor pred = random_normal({extent(rng, 1, 2), extent(rng, 1, 5), extent(rng, 2, 4),
                                                   extent(rng, 1, 4)},
                                                  rng, 0.5);
                      const std::size_t iterations = extent(rng, 1, 3);
                      const std::uint64_t seed = rng();
                      return grad_check(
                          [seed, iterations](std::span<const Tensor> xs) {
                            return random_projection(dynamic_routing(xs[0], iterations), seed);
                          },
                          std::vector<Tensor>{pred});
                    }});
  checks.push_back({"margin_loss", [extent](std::mt19937_64& rng) {
                      const std::size_t batch = extent(rng, 1, 4), c = extent(rng, 2, 6);
                      MarginParams params;
                      std::uniform_real_distribution<double> unit(0.0, 0.999);
                      std::vector<double> v(batch * c);
                      for (auto& x : v) {
                        // Stay clear of the hinge points.
                        do {
                          x = unit(rng);
                        } while (std::abs(x - params.m_plus) < 1e-3 || std::abs(x - params.m_minus) < 1e-3);
                      }
                      std::vector<std::size_t> targets(batch);
                      for (auto& t : targets) t = extent(rng, 0, c - 1);
                      Tensor norms({batch, c}, std::move(v), true);
                      return grad_check(
                          [targets](std::span<const Tensor> xs) { return margin_loss(xs[0], targets); },
                          std::vector<Tensor>{norms});
                    }});
  return checks;
}

}  // namespace pvgc
