#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "scfa/attention.hpp"
#include "scfa/tensor.hpp"

namespace scfa {

inline constexpr std::int64_t kQueryPad = -1;
inline constexpr std::int64_t kKeyPad = 1'000'000'000;

// Kept rows of x gathered per (b, h), in time order, into a buffer as long
// as the largest kept count over the whole (B, H) grid.
template <typename T>
struct CompactResult {
  Tensor4<T> compact;                        // (B, buffer, H, D), seq-major
  IndexTensor index;                         // (B, buffer, H), seq-major, original positions
  std::vector<std::int64_t> indices_per_head;  // kept counts at b * H + h; empty when an index was supplied
};

// `keep` and `x` are seq-major; x.shape().length must equal keep.length().
// Slots past a head's kept count hold its dropped rows (still in time
// order). When `index` is given it is used verbatim (V reuses K's index).
// The buffer is at least one row long, even when everything is dropped.
template <typename T>
CompactResult<T> compact(const KeepTensor& keep, const Tensor4<T>& x, const IndexTensor* index = nullptr);

// Copy of `index` with slots >= indices_per_head[b * H + h] set to pad.
IndexTensor pad_index(const IndexTensor& index, std::span<const std::int64_t> indices_per_head, std::int64_t pad);

// Number of leading key blocks with min(k_idx_j) <= max(q_idx_block); the
// query block computes tiles [0, j_stop).
std::size_t qk_tile_stop(std::span<const std::int64_t> q_idx_block, std::span<const std::int64_t> k_idx,
                         std::size_t block_n);

// Schedule for padded head-major index grids. Throws ContractError when a
// non-pad prefix is not strictly increasing or pads are not trailing.
TileSchedule qk_schedule(const IndexTensor& q_idx, const IndexTensor& k_idx, const BlockSpec& blocks);

// Kernels on compacted head-major operands with padded head-major indices.
template <typename T>
FlashOutputs<T> qk_forward_kernel(const Tensor4<T>& Qc, const Tensor4<T>& Kc, const Tensor4<T>& Vc,
                                  const IndexTensor& q_idx, const IndexTensor& k_idx, double tau,
                                  const BlockSpec& blocks);

template <typename T>
Gradients<T> qk_backward_kernel(const Tensor4<T>& Qc, const Tensor4<T>& Kc, const Tensor4<T>& Vc,
                                const FlashOutputs<T>& outputs, const Tensor4<T>& dOc, const IndexTensor& q_idx,
                                const IndexTensor& k_idx, double tau, const BlockSpec& blocks);

// Everything the kernel needs, built from boundary-layout inputs.
template <typename T>
struct QkPrepared {
  Tensor4<T> Qc, Kc, Vc;     // head-major, compacted
  IndexTensor q_idx, k_idx;  // head-major, padded
  IndexTensor q_index;       // seq-major, unpadded; drives the scatter
  IndexTensor k_index;       // seq-major, unpadded; scatters key gradients
};

template <typename T>
QkPrepared<T> qk_prepare(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V, const KeepTensor& q_keep,
                         const KeepTensor& k_keep);

// Scatters head-major compact rows into a zero (B, T, H, D) tensor.
template <typename T>
Tensor4<T> qk_scatter(const Tensor4<T>& y_compact, const IndexTensor& q_index, std::size_t length);

// End to end: Q, K, V and keep flags in (B, T, H, ...) layout. Dropped query
// rows of the result are exactly zero.
template <typename T>
Tensor4<T> qk_sparse_attention(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V,
                               const KeepTensor& q_keep, const KeepTensor& k_keep, double tau,
                               const BlockSpec& blocks = {}, RunStats* stats = nullptr);

}  // namespace scfa
