#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pvgc/tensor.hpp"

namespace pvgc {

using NodeId = std::size_t;
inline constexpr NodeId kConstantNode = std::numeric_limits<NodeId>::max();

/// Computes the gradient of every input from the gradient of the output.
/// Entries may be left undefined for inputs that need no gradient.
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_output)>;

class GradStore;

struct TapeRecord {
  std::string_view kind;  // "leaf" for registered inputs
  std::vector<NodeId> inputs;
  Shape shape;
  BackwardFn backward;
};

/// Ordered record of differentiable operations. Every record's inputs
/// precede it, so reverse order is a valid backward traversal.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t serial() const noexcept { return serial_; }
  std::span<const TapeRecord> records() const noexcept { return records_; }

  /// Node of a tensor on this tape, or kConstantNode.
  NodeId node_of(const Tensor& t) const;

  /// True when gradients should flow into `t` on this tape.
  bool participates(const Tensor& t) const;

  NodeId track(const Tensor& input);
  /// Records `output` as produced from `inputs`; marks it as a tracked result.
  void attach(Tensor& output, std::string_view kind, std::span<const Tensor* const> inputs,
              BackwardFn backward);

 private:
  friend GradStore backward(const Tensor& root);
  std::uint64_t serial_;
  std::vector<TapeRecord> records_;
  std::unordered_map<const detail::TensorImpl*, NodeId> leaves_;
  std::vector<Tensor> leaf_refs_;
};

/// Installs a tape as the active recorder for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording for the current thread.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Gradients keyed by tape node.
class GradStore {
 public:
  GradStore() = default;

  /// Gradient of the root with respect to `t`; zeros when `t` is unreachable.
  Tensor grad(const Tensor& t) const;
  bool has(const Tensor& t) const;
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend GradStore backward(const Tensor& root);
  std::uint64_t serial_ = 0;
  std::unordered_map<const detail::TensorImpl*, NodeId> leaves_;
  std::vector<Tensor> leaf_refs_;
  std::vector<Tensor> grads_;
};

/// Reverse-mode pass from a scalar root recorded on the active tape.
GradStore backward(const Tensor& root);

}  // namespace pvgc
