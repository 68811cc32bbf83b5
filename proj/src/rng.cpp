#include "specrnn/rng.hpp"

#include <algorithm>
#include <numeric>

namespace specrnn {

std::vector<std::size_t> SplitMix64::subset(std::size_t n, std::size_t k) {
  if (k > n) throw std::invalid_argument("subset: k exceeds n");
  // Partial Fisher-Yates: first k entries of a shuffled identity permutation.
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(next_below(n - i));
    std::swap(perm[i], perm[j]);
  }
  std::vector<std::size_t> out(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace specrnn
