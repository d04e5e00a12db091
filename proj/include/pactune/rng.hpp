#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace pactune {

/// Portable random source. The engine is std::mt19937_64, whose output
/// sequence is fixed by the C++ standard; the uniform, normal and integer
/// transforms are implemented here rather than taken from <random>, whose
/// distributions are implementation-defined. The same seed therefore gives
/// the same stream on every conforming platform.
///
///   uniform(): top 53 bits of one engine draw, scaled by 2^-53, in [0, 1)
///   normal():  Box-Muller on two uniforms, both outputs used in turn
///   below(n):  rejection sampling on the top bits, unbiased
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::size_t below(std::size_t n);

  void fill_normal(std::span<double> out);
  std::vector<double> normals(std::size_t n);

  /// In-place Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Derives an independent stream seed from a base seed and a stream tag
/// (splitmix64 finalizer over the combination).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace pactune
