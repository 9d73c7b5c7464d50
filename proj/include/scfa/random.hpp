#pragma once

#include <cstddef>
#include <cstdint>

#include "scfa/tensor.hpp"

namespace scfa {

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter), mixed with the SplitMix64 finalizer. Streams are
// split per (b, h) so results never depend on iteration or thread order.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : key_(mix(seed ^ mix(stream + kStreamSalt))) {}

  // Derives an independent generator for a sub-stream.
  CounterRng split(std::uint64_t sub) const { return CounterRng(key_, sub + 1); }

  std::uint64_t bits(std::uint64_t counter) const { return mix(key_ + counter * kGolden); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller on counters (2c, 2c+1).
  double normal(std::uint64_t counter) const;

  static std::uint64_t mix(std::uint64_t z) {
    z += kGolden;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  static constexpr std::uint64_t kStreamSalt = 0x5ca1ab1e0ddba11ULL;

  std::uint64_t key_;
};

struct Normal {
  double mean = 0.0;
  double stddev = 1.0;
};

// Values depend only on (seed, b, h, t, d); the same seed gives the same
// values at either precision.
template <typename T>
Tensor4<T> random_tensor(const Shape4& shape, std::uint64_t seed, Normal dist = {},
                         Layout layout = Layout::kHeadMajor);

// Per-(position, head) keep flags; each entry is dropped with probability
// `drop_prob`. Layout (B, T, H).
KeepTensor random_keep(std::size_t batch, std::size_t length, std::size_t heads, double drop_prob,
                       std::uint64_t seed);

// Uniform bucket ids in [0, nb). Layout (B, T, H).
BucketTensor random_buckets(std::size_t batch, std::size_t length, std::size_t heads,
                            std::int32_t num_buckets, std::uint64_t seed);

}  // namespace scfa
