#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "pvgc/config.hpp"
#include "pvgc/gradcheck.hpp"
#include "pvgc/tensor.hpp"

namespace pvgc {

/// squash(s) = (‖s‖²/(1+‖s‖²))·(s/‖s‖) applied to every vector along the
/// last axis; the zero vector maps to zero.
Tensor squash(const Tensor& s);

/// Euclidean norm along the last axis (the axis is removed). The gradient at
/// a zero vector is taken as zero.
Tensor norm_last(const Tensor& x);

/// Prediction vectors û[b,i,j] = u[b,i]·W[i mod T, j].
/// u: B×M×p, W: T×c×p×d (T divides M) → B×M×c×d.
Tensor capsule_transform(const Tensor& u, const Tensor& w);

/// B×C×h×w backbone map → B×M×p squashed capsules, M = (C/p)·h·w. Capsule
/// index is (y·w + x)·(C/p) + type, so its type is index mod C/p.
Tensor primary_capsules(const Tensor& features, std::size_t capsule_dim);

/// Couplings after each routing iteration, detached. couplings[t] is B×M×c.
struct RoutingTrace {
  std::vector<Tensor> couplings;
};

/// Routing by agreement over predictions û (B×M×c×d): b ← 0, then
/// `iterations` rounds of C = softmax(b), s = Σᵢ C·û, v = squash(s),
/// b += û·v. Fully differentiable. Returns B×c×d class capsules.
Tensor dynamic_routing(const Tensor& predictions, std::size_t iterations, RoutingTrace* trace = nullptr);

/// Norm of each class capsule: B×c×d → B×c.
inline Tensor class_norms(const Tensor& capsules) { return norm_last(capsules); }

/// Row-wise argmax of a B×c score matrix; ties go to the lowest index.
std::vector<std::size_t> predict(const Tensor& scores);

struct MarginParams {
  double m_plus = 0.9;
  double m_minus = 0.1;
  double lambda = 0.5;
};

/// Σ_k T_k·max(0, m⁺−‖v_k‖)² + λ(1−T_k)·max(0, ‖v_k‖−m⁻)², summed over
/// classes and averaged over the batch. norms: B×c.
Tensor margin_loss(const Tensor& norms, std::span<const std::size_t> targets, const MarginParams& params = {});

/// Capsule head weights T×c×p×d for a config.
Tensor make_capsule_weights(const ModelConfig& config, std::mt19937_64& rng);

/// Gradient checks for the capsule ops.
std::vector<OpCheck> capsule_op_checks();

}  // namespace pvgc
