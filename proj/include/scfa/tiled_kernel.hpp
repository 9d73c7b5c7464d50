#pragma once

#include <cstdint>

#include "scfa/attention.hpp"
#include "scfa/tensor.hpp"

namespace scfa {

// Position metadata the per-tile mask is computed from. All grids are
// head-major (B, H, T). A key j is visible to query i when
//   q_idx[i] >= k_idx[j]   (> with exclude_self)
// and, when hash grids are present, q_hash[i] == k_hash[j].
struct TileMask {
  const IndexTensor* q_idx = nullptr;
  const IndexTensor* k_idx = nullptr;
  const Grid3<std::int32_t>* q_hash = nullptr;
  const Grid3<std::int32_t>* k_hash = nullptr;
  bool exclude_self = false;
};

// Online-softmax attention over exactly the tiles listed in `schedule`.
// Q is (B, H, T_Q, D), K and V are (B, H, T_KV, D), all head-major. Parallel
// over (b, h, query block).
template <typename T>
FlashOutputs<T> tiled_forward(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V, const TileMask& mask,
                              const TileSchedule& schedule, double tau, const BlockSpec& blocks);

// Gradients of <O, dO>, recomputing probabilities tile by tile from the stored
// M and L. dQ is owned per query block, dK and dV per key block; the key-block
// pass visits the transpose of the forward schedule.
template <typename T>
Gradients<T> tiled_backward(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V,
                            const FlashOutputs<T>& outputs, const Tensor4<T>& dO, const TileMask& mask,
                            const TileSchedule& schedule, double tau, const BlockSpec& blocks);

}  // namespace scfa
