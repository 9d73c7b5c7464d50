#pragma once

#include <cstdint>

#include "scfa/attention.hpp"
#include "scfa/tensor.hpp"

namespace scfa {

// Causal schedule for plain positions: query block i computes key blocks
// [0, j_stop) where j_stop counts the key blocks whose first position is
// <= the last position of block i.
TileSchedule dense_schedule(std::size_t batch, std::size_t heads, std::size_t length, const BlockSpec& blocks);

// Tiles computed per (b, h) by the causal schedule; m(m+1)/2 when
// block_m == block_n divides T.
std::uint64_t dense_tile_count(std::size_t length, const BlockSpec& blocks);

// Tiled causal attention on head-major (B, H, T, D) operands.
template <typename T>
FlashOutputs<T> flash_forward(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V, double tau,
                              const BlockSpec& blocks);

template <typename T>
Gradients<T> flash_backward(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V,
                            const FlashOutputs<T>& outputs, const Tensor4<T>& dO, double tau,
                            const BlockSpec& blocks);

}  // namespace scfa
