#include "pvgc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pvgc/parallel.hpp"

namespace pvgc {

bool operator==(const NeighborTable& a, const NeighborTable& b) {
  return a.node_count == b.node_count && a.neighbors == b.neighbors && a.requested == b.requested &&
         a.dilation == b.dilation && a.indices == b.indices;
}

std::vector<double> pairwise_sq_dist(std::span<const double> features, std::size_t n, std::size_t d) {
  if (n == 0 || d == 0) throw ContractError("pairwise_sq_dist needs N ≥ 1 and D ≥ 1");
  if (features.size() != n * d) throw ShapeError("pairwise_sq_dist: feature buffer does not hold N×D values");
  for (double v : features) {
    if (!std::isfinite(v)) throw NumericError("pairwise_sq_dist: non-finite feature value");
  }
  std::vector<double> dist(n * n, 0.0);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const double* xi = features.data() + i * d;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double* xj = features.data() + j * d;
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = xi[k] - xj[k];
          s += diff * diff;
        }
        dist[i * n + j] = s;
      }
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) dist[j * n + i] = dist[i * n + j];
  }
  return dist;
}

Tensor pairwise_sq_dist(const Tensor& features) {
  if (features.rank() != 2) throw ShapeError("pairwise_sq_dist expects N×D, got " + shape_str(features.shape()));
  const std::size_t n = features.dim(0);
  return Tensor({n, n}, pairwise_sq_dist(features.values(), n, features.dim(1)));
}

std::size_t effective_neighbors(std::size_t n, std::size_t k, std::size_t dilation) {
  if (n < 2) return 0;
  const std::size_t reachable = (n - 1 + dilation - 1) / dilation;
  return std::min(k, reachable);
}

NeighborTable knn_dilated(std::span<const double> features, std::size_t n, std::size_t d, std::size_t k,
                          std::size_t dilation) {
  if (n < 2) throw DegenerateGraphError("KNN graph needs at least 2 nodes, got " + std::to_string(n));
  if (k == 0) throw ContractError("KNN neighbor count must be positive");
  if (dilation == 0) throw ContractError("KNN dilation must be positive");
  const auto dist = pairwise_sq_dist(features, n, d);

  NeighborTable table;
  table.node_count = n;
  table.requested = k;
  table.dilation = dilation;
  table.neighbors = effective_neighbors(n, k, dilation);
  table.indices.resize(n * table.neighbors);
  // Only the first `prefix` ranks can be selected.
  const std::size_t prefix = std::min(n - 1, (table.neighbors - 1) * dilation + 1);

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> cand(n - 1);
    for (std::size_t i = begin; i < end; ++i) {
      const double* di = dist.data() + i * n;
      for (std::size_t j = 0, c = 0; j < n; ++j) {
        if (j != i) cand[c++] = j;
      }
      auto closer = [di](std::size_t a, std::size_t b) { return di[a] < di[b] || (di[a] == di[b] && a < b); };
      std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(prefix), cand.end(), closer);
      std::size_t* out = table.indices.data() + i * table.neighbors;
      for (std::size_t r = 0; r < table.neighbors; ++r) out[r] = cand[r * dilation];
    }
  });
  return table;
}

NeighborTable knn_dilated(const Tensor& features, std::size_t k, std::size_t dilation) {
  if (features.rank() != 2) throw ShapeError("knn_dilated expects N×D, got " + shape_str(features.shape()));
  return knn_dilated(features.values(), features.dim(0), features.dim(1), k, dilation);
}

std::size_t dilation_for_layer(std::size_t layer_index) {
  return std::max<std::size_t>(1, (layer_index + 3) / 4);
}

}  // namespace pvgc
