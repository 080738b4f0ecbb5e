#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace dcsm {

// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Independent substream seed for (seed, stream). Used for per-cell grid
// seeds, network init, and expert jitter so that parallel or reordered
// generation cannot change any output bits.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(seed + 0x9e3779b97f4a7c15ull * (stream + 1));
}

// mt19937_64 with hand-rolled value mappings. The standard pins the engine's
// output bits but not the distributions', so uniform/int/shuffle are mapped
// explicitly here to keep seeded runs byte-identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform in (0, 1); rejects the single zero value
  double uniform_pos() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  // unbiased integer in [0, n); n >= 1
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

  // Fisher-Yates
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dcsm
