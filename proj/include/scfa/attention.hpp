#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "scfa/tensor.hpp"

namespace scfa {

// Key-block interval [j_start, j_stop) computed for one query block.
struct TileRange {
  std::size_t j_start = 0;
  std::size_t j_stop = 0;

  std::size_t size() const { return j_stop - j_start; }
  bool contains(std::size_t j) const { return j >= j_start && j < j_stop; }
  friend bool operator==(const TileRange&, const TileRange&) = default;
};

// Tile intervals for every (b, h, query block), stored row-major in that order.
struct TileSchedule {
  std::size_t batch = 0;
  std::size_t heads = 0;
  std::size_t query_blocks = 0;
  std::size_t key_blocks = 0;
  std::vector<TileRange> ranges;

  TileRange& at(std::size_t b, std::size_t h, std::size_t i) {
    return ranges[(b * heads + h) * query_blocks + i];
  }
  const TileRange& at(std::size_t b, std::size_t h, std::size_t i) const {
    return ranges[(b * heads + h) * query_blocks + i];
  }

  std::uint64_t cardinality() const {
    std::uint64_t n = 0;
    for (const auto& r : ranges) n += r.size();
    return n;
  }
  std::uint64_t cardinality(std::size_t b, std::size_t h) const {
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < query_blocks; ++i) n += at(b, h, i).size();
    return n;
  }
};

// Forward results. M and L are (B, H, T_Q) head-major; M is -inf and L is 0
// for queries that saw no key.
template <typename T>
struct FlashOutputs {
  Tensor4<T> O;
  std::vector<T> M;
  std::vector<T> L;
  std::uint64_t tiles_computed = 0;
};

// Wall-clock split of an end-to-end call, in milliseconds.
struct RunStats {
  double pre_ms = 0.0;
  double fwd_ms = 0.0;
  double post_ms = 0.0;
  std::uint64_t tiles_computed = 0;
};

template <typename T>
struct Gradients {
  Tensor4<T> dQ;
  Tensor4<T> dK;
  Tensor4<T> dV;
};

}  // namespace scfa
