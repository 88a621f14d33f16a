#include "pretext/rng.hpp"

#include <numeric>

#include "pretext/error.hpp"

namespace pretext {

std::vector<size_t> Rng::sample_indices(size_t n, size_t k) {
  if (k > n) raise<ValueError>("sample_indices: k=", k, " exceeds n=", n);
  std::vector<size_t> pool(n);
  std::iota(pool.begin(), pool.end(), size_t{0});
  for (size_t i = 0; i < k; ++i) {
    size_t j = i + static_cast<size_t>(below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace pretext
