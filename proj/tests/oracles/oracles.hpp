#pragma once

// Reference implementations for tests. None of these share code with the
// library; they work on plain vectors with straight loops.

#include <cstddef>
#include <vector>

namespace oracle {

/// Row-major N×K neighbor ids after a full sort of every candidate list.
struct Knn {
  std::size_t neighbors = 0;
  std::vector<std::size_t> indices;
};
Knn knn_bruteforce(const std::vector<double>& x, std::size_t n, std::size_t d, std::size_t k, std::size_t dilation);

/// A (m×k) · B (k×n).
std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m, std::size_t k,
                           std::size_t n);

/// Cross-correlation with zero padding, 6 nested loops per output.
std::vector<double> conv2d(const std::vector<double>& x, std::size_t batch, std::size_t channels, std::size_t h,
                           std::size_t w, const std::vector<double>& weight, std::size_t out_channels,
                           std::size_t kernel, const std::vector<double>& bias, std::size_t stride,
                           std::size_t padding);

std::vector<double> squash(const std::vector<double>& s);

/// Routing for one sample. u_hat is M×c×d. Returns c×d; `couplings` gets
/// one M×c matrix per iteration.
std::vector<double> routing(const std::vector<double>& u_hat, std::size_t m, std::size_t c, std::size_t d,
                            std::size_t iterations, std::vector<std::vector<double>>* couplings = nullptr);

/// Scalar AdamW over `steps` repeated gradients, returns the final weights.
std::vector<double> adamw(std::vector<double> w, const std::vector<std::vector<double>>& grads, double lr,
                          double beta1, double beta2, double eps, double weight_decay);

}  // namespace oracle
