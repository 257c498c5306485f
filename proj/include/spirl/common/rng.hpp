// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace spirl {

// Deterministic RNG. The engine is std::mt19937_64 (fully specified by the
// standard); every derived distribution is implemented here so results do not
// depend on the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n) by rejection; n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01();

  double normal();

  // Normal(0, std) truncated to [-2 std, 2 std] by resampling.
  double truncated_normal(double std);

  bool bernoulli(double p) { return uniform01() < p; }

  // In-place Fisher-Yates: for i = n-1 down to 1, swap(v[i], v[j]), j in [0, i].
  template <class Item>
  void shuffle(std::span<Item> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n);

  // Derive an independent child seed (splitmix64 of the next draw).
  std::uint64_t fork_seed();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace spirl
