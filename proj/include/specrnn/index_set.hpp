#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "specrnn/matrix.hpp"

namespace specrnn {

// Sorted, duplicate-free set of node indices in [0, m).
struct IndexSet {
  std::vector<std::size_t> indices;

  IndexSet() = default;
  explicit IndexSet(std::vector<std::size_t> idx) : indices(std::move(idx)) {
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  }

  static IndexSet full(std::size_t m) {
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) idx[i] = i;
    return IndexSet(std::move(idx));
  }

  std::size_t size() const { return indices.size(); }
  bool contains(std::size_t v) const {
    return std::binary_search(indices.begin(), indices.end(), v);
  }
  void check_bounds(std::size_t m) const {
    if (!indices.empty() && indices.back() >= m)
      throw DimensionError("IndexSet: index out of range");
  }
};

}  // namespace specrnn
