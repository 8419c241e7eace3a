#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pvgc/tensor.hpp"

namespace pvgc {

enum class BinaryKind { add, sub, mul };
enum class UnaryKind { gelu, relu, exp, log, sqrt, negate };
enum class ReduceKind { sum, mean, max };

/// Elementwise a (op) b. `b` may broadcast to `a`: shapes are aligned at the
/// trailing axis and each extent of `b` must equal that of `a` or be 1.
Tensor apply_binary(const Tensor& a, const Tensor& b, BinaryKind kind);
inline Tensor add(const Tensor& a, const Tensor& b) { return apply_binary(a, b, BinaryKind::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return apply_binary(a, b, BinaryKind::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return apply_binary(a, b, BinaryKind::mul); }
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

/// (m×k)·(k×n).
Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation of B×C×H×W with O×C×kh×kw, zero padding. `bias` (O) may
/// be undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// GELU uses the exact error-function form x·Φ(x).
Tensor apply_unary(const Tensor& x, UnaryKind kind);
inline Tensor gelu(const Tensor& x) { return apply_unary(x, UnaryKind::gelu); }
inline Tensor relu(const Tensor& x) { return apply_unary(x, UnaryKind::relu); }
inline Tensor exp(const Tensor& x) { return apply_unary(x, UnaryKind::exp); }
inline Tensor log(const Tensor& x) { return apply_unary(x, UnaryKind::log); }
inline Tensor sqrt(const Tensor& x) { return apply_unary(x, UnaryKind::sqrt); }
inline Tensor negate(const Tensor& x) { return apply_unary(x, UnaryKind::negate); }

/// Reduces over `axes` (removed from the result shape). An empty axis list
/// reduces everything to a scalar. Max routes its gradient to the first
/// (lowest flat index) maximal element.
Tensor reduce(const Tensor& x, ReduceKind kind, std::vector<std::size_t> axes = {});
inline Tensor sum(const Tensor& x, std::vector<std::size_t> axes = {}) {
  return reduce(x, ReduceKind::sum, std::move(axes));
}
inline Tensor mean(const Tensor& x, std::vector<std::size_t> axes = {}) {
  return reduce(x, ReduceKind::mean, std::move(axes));
}
inline Tensor max(const Tensor& x, std::vector<std::size_t> axes = {}) {
  return reduce(x, ReduceKind::max, std::move(axes));
}

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;

  static BatchNormState fresh(std::size_t channels);
};

enum class NormMode { train, eval };

struct BatchNormOptions {
  NormMode mode = NormMode::train;
  double eps = 1e-5;
  double momentum = 0.1;
  bool update_running_stats = true;
};

/// Per-channel normalization of B×C×H×W (or R×C, treated as R×C×1×1).
/// Train mode uses biased batch statistics and folds the unbiased variance
/// into the running estimate.
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                    const BatchNormOptions& options = {});

// Layout ops.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Rows of a rank-2 tensor, repeated indices allowed.
Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows);

// Last-axis ops.
Tensor softmax_last(const Tensor& x);
Tensor log_softmax_last(const Tensor& x);

}  // namespace pvgc
