#include "pvgc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pvgc/autodiff.hpp"
#include "pvgc/ops.hpp"

namespace pvgc {

double grad_check(const ScalarFn& f, std::span<const Tensor> inputs, const GradCheckOptions& options) {
  if (precision() != Precision::f64) throw ContractError("grad_check requires f64 precision");
  std::vector<Tensor> xs;
  xs.reserve(inputs.size());
  for (const auto& in : inputs) xs.push_back(Tensor(in.shape(), {in.values().begin(), in.values().end()}, true));

  GradStore grads;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f(xs);
    if (y.numel() != 1) throw ContractError("grad_check function must return a scalar");
    if (!std::isfinite(y.item())) throw NumericError("grad_check function value is not finite");
    grads = backward(y);
  }

  auto evaluate = [&]() {
    NoGradScope no_grad;
    double v = f(xs).item();
    if (!std::isfinite(v)) throw NumericError("grad_check function value is not finite");
    return v;
  };

  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  for (auto& x : xs) {
    Tensor analytic = grads.grad(x);
    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input != 0 && coords.size() > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    auto values = x.mutable_values();
    for (auto i : coords) {
      const double saved = values[i];
      values[i] = saved + options.eps;
      const double plus = evaluate();
      values[i] = saved - options.eps;
      const double minus = evaluate();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double a = analytic[i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

Tensor random_normal(const Shape& shape, std::mt19937_64& rng, double scale, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(shape, std::move(v), requires_grad);
}

Tensor random_uniform(const Shape& shape, std::mt19937_64& rng, double lo, double hi, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(shape, std::move(v), requires_grad);
}

Tensor random_projection(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_normal(y.shape(), rng, 1.0, false)));
}

namespace {

std::size_t extent(std::mt19937_64& rng, std::size_t lo = 1, std::size_t hi = 6) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Shape random_shape(std::mt19937_64& rng, std::size_t min_rank = 1, std::size_t max_rank = 3) {
  Shape s(extent(rng, min_rank, max_rank));
  for (auto& e : s) e = extent(rng);
  return s;
}

// Differentiable inputs plus fixed, non-differentiable settings.
struct Instance {
  std::vector<Tensor> inputs;
  std::vector<double> settings = {};
};

using InstanceOp = std::function<Tensor(std::span<const Tensor>, const std::vector<double>&)>;

// Builds a check that projects the op output onto a random direction.
OpCheck projected(std::string name, std::function<Instance(std::mt19937_64&)> make_instance, InstanceOp op) {
  return OpCheck{std::move(name),
                 [make_instance = std::move(make_instance), op = std::move(op)](std::mt19937_64& rng) {
                   Instance inst = make_instance(rng);
                   const std::uint64_t seed = rng();
                   return grad_check(
                       [&](std::span<const Tensor> xs) { return random_projection(op(xs, inst.settings), seed); },
                       inst.inputs);
                 }};
}

// b shaped as a broadcastable suffix of a's shape, with random unit extents.
Shape broadcast_suffix(const Shape& a, std::mt19937_64& rng) {
  std::size_t keep = extent(rng, 0, a.size());
  Shape b(a.end() - static_cast<long>(keep), a.end());
  for (auto& e : b) {
    if (rng() % 3 == 0) e = 1;
  }
  if (b.empty()) b.push_back(1);
  return b;
}

OpCheck binary_check(const char* name, BinaryKind kind) {
  return projected(
      name,
      [](std::mt19937_64& rng) {
        Shape a = random_shape(rng);
        Shape b = (rng() % 2 == 0) ? a : broadcast_suffix(a, rng);
        return Instance{{random_normal(a, rng), random_normal(b, rng)}};
      },
      [kind](std::span<const Tensor> xs, const std::vector<double>&) { return apply_binary(xs[0], xs[1], kind); });
}

OpCheck unary_check(const char* name, UnaryKind kind, double lo, double hi) {
  return projected(
      name,
      [lo, hi](std::mt19937_64& rng) { return Instance{{random_uniform(random_shape(rng), rng, lo, hi)}}; },
      [kind](std::span<const Tensor> xs, const std::vector<double>&) { return apply_unary(xs[0], kind); });
}

OpCheck reduce_check(const char* name, ReduceKind kind) {
  return projected(
      name,
      [](std::mt19937_64& rng) { return Instance{{random_normal(random_shape(rng, 1, 4), rng)}}; },
      [kind](std::span<const Tensor> xs, const std::vector<double>&) {
        // Deterministic axis subset derived from the shape.
        const Shape& s = xs[0].shape();
        std::vector<std::size_t> axes;
        for (std::size_t d = 0; d < s.size(); ++d) {
          if ((s[d] + d) % 2 == 0) axes.push_back(d);
        }
        return reduce(xs[0], kind, axes);
      });
}

}  // namespace

std::vector<OpCheck> tensor_op_checks() {
  std::vector<OpCheck> checks;
  checks.push_back(binary_check("add", BinaryKind::add));
  checks.push_back(binary_check("sub", BinaryKind::sub));
  checks.push_back(binary_check("mul", BinaryKind::mul));
  checks.push_back(projected(
      "matmul",
      [](std::mt19937_64& rng) {
        std::size_t m = extent(rng), k = extent(rng), n = extent(rng);
        return Instance{{random_normal({m, k}, rng), random_normal({k, n}, rng)}};
      },
      [](std::span<const Tensor> xs, [[maybe_unused]] const std::vector<double>& settings) { return matmul(xs[0], xs[1]); }));
  checks.push_back(projected(
      "conv2d",
      [](std::mt19937_64& rng) {
        std::size_t b = extent(rng, 1, 3), c = extent(rng, 1, 4), h = extent(rng, 2, 6), w = extent(rng, 2, 6);
        std::size_t o = extent(rng, 1, 4), k = extent(rng, 1, 3);
        std::size_t stride = extent(rng, 1, 2), pad = extent(rng, 0, 1);
        k = std::min({k, h + 2 * pad, w + 2 * pad});
        return Instance{{random_normal({b, c, h, w}, rng), random_normal({o, c, k, k}, rng), random_normal({o}, rng)},
                        {static_cast<double>(stride), static_cast<double>(pad)}};
      },
      [](std::span<const Tensor> xs, [[maybe_unused]] const std::vector<double>& settings) {
        return conv2d(xs[0], xs[1], xs[2], static_cast<std::size_t>(settings[0]),
                      static_cast<std::size_t>(settings[1]));
      }));
  checks.push_back(unary_check("gelu", UnaryKind::gelu, -3.0, 3.0));
  checks.push_back(unary_check("relu", UnaryKind::relu, -3.0, 3.0));
  checks.push_back(unary_check("exp", UnaryKind::exp, -2.0, 2.0));
  checks.push_back(unary_check("log", UnaryKind::log, 0.5, 3.0));
  checks.push_back(unary_check("sqrt", UnaryKind::sqrt, 0.5, 3.0));
  checks.push_back(unary_check("negate", UnaryKind::negate, -3.0, 3.0));
  checks.push_back(reduce_check("reduce_sum", ReduceKind::sum));
  checks.push_back(reduce_check("reduce_mean", ReduceKind::mean));
  checks.push_back(reduce_check("reduce_max", ReduceKind::max));
  checks.push_back(projected(
      "batch_norm2d",
      [](std::mt19937_64& rng) {
        std::size_t b = extent(rng, 2, 4), c = extent(rng, 1, 4), h = extent(rng, 1, 4), w = extent(rng, 1, 4);
        return Instance{{random_normal({b, c, h, w}, rng), random_uniform({c}, rng, 0.5, 1.5), random_normal({c}, rng)},
                        {static_cast<double>(rng() % 2)}};
      },
      [](std::span<const Tensor> xs, [[maybe_unused]] const std::vector<double>& settings) {
        const std::size_t c = xs[0].dim(1);
        BatchNormState state{Tensor::full({c}, 0.25), Tensor::full({c}, 1.5)};
        BatchNormOptions opt;
        opt.mode = settings[0] == 0.0 ? NormMode::train : NormMode::eval;
        opt.update_running_stats = false;
        return batch_norm2d(xs[0], xs[1], xs[2], state, opt);
      }));
  checks.push_back(projected(
      "reshape", [](std::mt19937_64& rng) { return Instance{{random_normal(random_shape(rng, 2, 3), rng)}}; },
      [](std::span<const Tensor> xs, [[maybe_unused]] const std::vector<double>& settings) { return reshape(xs[0], {xs[0].numel()}); }));
  checks.push_back(projected(
      "permute", [](std::mt19937_64& rng) { return Instance{{random_normal(random_shape(rng, 3, 4), rng)}}; },
      [](std::span<const Tensor> xs, [[maybe_unused]] const std::vector<double>& settings) {
        std::vector<std::size_t> axes(xs[0].rank());
        std::iota(axes.begin(), axes.end(), std::size_t{0});
        std::reverse(axes.begin(), axes.end());
        std::swap(axes[0], axes.back());
        return permute(xs[0], axes);
      }));
  checks.push_back(projected(
      "slice", [](std::mt19937_64& rng) { return Instance{{random_normal(random_shape(rng, 1, 3), rng)}}; },
      [](std::span<const Tensor> xs, [[maybe_unused]] const std::vector<double>& settings) {
        const std::size_t axis = xs[0].rank() - 1;
        const std::size_t n = xs[0].dim(axis);
        const std::size_t start = n / 3;
        return slice(xs[0], axis, start, n - start);
      }));
  checks.push_back(projected(
      "concat",
      [](std::mt19937_64& rng) {
        Shape a = random_shape(rng, 2, 3);
        Shape b = a;
        b[1] = extent(rng);
        return Instance{{random_normal(a, rng), random_normal(b, rng)}};
      },
      [](std::span<const Tensor> xs, [[maybe_unused]] const std::vector<double>& settings) {
        std::vector<Tensor> parts{xs[0], xs[1]};
        return concat(parts, 1);
      }));
  checks.push_back(projected(
      "index_rows",
      [](std::mt19937_64& rng) { return Instance{{random_normal({extent(rng), extent(rng)}, rng)}}; },
      [](std::span<const Tensor> xs, [[maybe_unused]] const std::vector<double>& settings) {
        const std::size_t n = xs[0].dim(0);
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < 2 * n + 1; ++i) rows.push_back((i * 7 + 3) % n);
        return index_rows(xs[0], rows);
      }));
  checks.push_back(projected(
      "softmax", [](std::mt19937_64& rng) { return Instance{{random_normal(random_shape(rng), rng)}}; },
      [](std::span<const Tensor> xs, [[maybe_unused]] const std::vector<double>& settings) { return softmax_last(xs[0]); }));
  checks.push_back(projected(
      "log_softmax", [](std::mt19937_64& rng) { return Instance{{random_normal(random_shape(rng), rng)}}; },
      [](std::span<const Tensor> xs, [[maybe_unused]] const std::vector<double>& settings) { return log_softmax_last(xs[0]); }));
  return checks;
}

}  // namespace pvgc
