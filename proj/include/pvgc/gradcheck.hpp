#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pvgc/tensor.hpp"

namespace pvgc {

struct GradCheckOptions {
  double eps = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded sample per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

/// Scalar-valued function of differentiable inputs.
using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

/// Max relative error between reverse-mode and central-difference gradients,
/// |a - n| / max(1, |a|, |n|). Inputs are copied; the callers' tensors are
/// never perturbed. Requires f64 precision.
double grad_check(const ScalarFn& f, std::span<const Tensor> inputs, const GradCheckOptions& options = {});

/// One differentiable op with a generator of random small instances.
struct OpCheck {
  std::string name;
  /// Builds one random instance (extents ≤ 6) and returns its max relative error.
  std::function<double(std::mt19937_64&)> run_instance;
};

/// Checks for every differentiable op in the tensor layer.
std::vector<OpCheck> tensor_op_checks();

/// Random tensor helpers shared by the check registries.
Tensor random_normal(const Shape& shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true);
Tensor random_uniform(const Shape& shape, std::mt19937_64& rng, double lo, double hi, bool requires_grad = true);

/// sum(y ⊙ r) for a fixed random r; turns any tensor output into a scalar
/// whose gradient exercises every output coordinate.
Tensor random_projection(const Tensor& y, std::uint64_t seed);

}  // namespace pvgc
