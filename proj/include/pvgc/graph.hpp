#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pvgc/tensor.hpp"

namespace pvgc {

/// Per-node K-nearest-neighbor indices (self excluded), each row ordered by
/// ascending squared distance with ties broken by ascending index.
struct NeighborTable {
  std::size_t node_count = 0;
  /// Effective K: the row width, possibly clamped below `requested`.
  std::size_t neighbors = 0;
  std::size_t requested = 0;
  std::size_t dilation = 1;
  std::vector<std::size_t> indices;

  std::span<const std::size_t> row(std::size_t i) const {
    return std::span<const std::size_t>(indices).subspan(i * neighbors, neighbors);
  }
  bool clamped() const { return neighbors < requested; }
};

bool operator==(const NeighborTable& a, const NeighborTable& b);

/// N×N squared Euclidean distances of the rows of an N×D matrix. Exactly
/// symmetric with a zero diagonal.
std::vector<double> pairwise_sq_dist(std::span<const double> features, std::size_t n, std::size_t d);
Tensor pairwise_sq_dist(const Tensor& features);

/// Number of neighbors a dilated walk can reach among n-1 candidates.
std::size_t effective_neighbors(std::size_t n, std::size_t k, std::size_t dilation);

/// Dilated KNN: candidate ranks 0, dilation, 2·dilation, ... of the sorted
/// list, clamped at its end. Indices are constants to any enclosing
/// differentiation.
NeighborTable knn_dilated(std::span<const double> features, std::size_t n, std::size_t d, std::size_t k,
                          std::size_t dilation);
NeighborTable knn_dilated(const Tensor& features, std::size_t k, std::size_t dilation);

/// Dilation of the ℓ-th Grapher layer (1-based, counted across all stages):
/// max(1, ceil(ℓ / 4)).
std::size_t dilation_for_layer(std::size_t layer_index);

}  // namespace pvgc
