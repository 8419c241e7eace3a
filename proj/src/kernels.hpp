#pragma once

// Dense kernels shared by the op implementations. Row-major storage.

#include <cstddef>

namespace pvgc::kernels {

/// C (m×n) = op(A)·op(B) (+ C when accumulate). op(A) is m×k, op(B) is k×n.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);

}  // namespace pvgc::kernels
