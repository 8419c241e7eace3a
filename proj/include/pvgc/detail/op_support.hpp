#pragma once

// Shared plumbing for differentiable op implementations.

#include <initializer_list>
#include <string_view>
#include <vector>

#include "pvgc/autodiff.hpp"
#include "pvgc/tensor.hpp"

namespace pvgc::detail {

/// Wraps op output values: rounds to the active precision and, in f64 mode,
/// rejects non-finite results.
Tensor make_output(std::string_view kind, Shape shape, std::vector<double> values);

/// Active tape if any of `inputs` participates in differentiation there.
Tape* recording_tape(std::initializer_list<const Tensor*> inputs);
Tape* recording_tape(std::span<const Tensor> inputs);

inline bool needs_grad(Tape* tape, const Tensor& t) { return tape && tape->participates(t); }

inline void record(Tape* tape, Tensor& out, std::string_view kind,
                   std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  std::vector<const Tensor*> ptrs(inputs);
  tape->attach(out, kind, ptrs, std::move(fn));
}

/// Row-major strides of a shape.
std::vector<std::size_t> strides_of(const Shape& shape);

bool verification_mode();

}  // namespace pvgc::detail
