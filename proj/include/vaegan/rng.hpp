#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "vaegan/tensor.hpp"

namespace vaegan {

/// xoshiro256** (Blackman & Vigna), seeded through SplitMix64.
///
/// Every derived quantity (uniforms, normals, bounded integers, shuffles) is
/// computed here from raw 64-bit outputs, so sequences are identical across
/// compilers and standard libraries. State is four 64-bit words and is
/// serialized into checkpoints verbatim.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);
  static Rng from_state(const State& s);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  /// Standard normal via Box-Muller; consumes exactly two uniforms.
  double normal();
  /// Uniform integer in [0, bound), rejection-sampled (no modulo bias).
  std::uint64_t below(std::uint64_t bound);
  bool bernoulli(double p) { return uniform() < p; }

  Tensor normal_tensor(Shape shape);

  /// Fisher-Yates, walking from the back.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  const State& state() const { return s_; }

  friend bool operator==(const Rng& a, const Rng& b) { return a.s_ == b.s_; }

 private:
  State s_{};
};

/// Mix two words into an independent seed (SplitMix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace vaegan
