#pragma once

#include <cstdint>
#include <span>

#include "scfa/attention.hpp"
#include "scfa/tensor.hpp"

namespace scfa {

// Angular LSH: per (b, h) a random D x (nb/2) Gaussian projection R is drawn
// from `seed`, and bucket(x) = argmax([xR, -xR]), lowest index on ties.
// nb must be even and >= 2. Output layout is (B, T, H).
template <typename T>
BucketTensor lsh_buckets(const Tensor4<T>& X, std::int32_t num_buckets, std::uint64_t seed);

// Rows scaled to unit Euclidean norm; zero rows raise NumericError.
template <typename T>
Tensor4<T> normalize_keys(const Tensor4<T>& Q);

// Operands reordered by a stable sort on bucket id. All head-major.
template <typename T>
struct SortedBatch {
  Tensor4<T> Q, K, V;
  IndexTensor q_idx, k_idx;  // original position of each sorted slot
  Grid3<std::int32_t> q_hash, k_hash;
  std::int32_t num_buckets = 1;
};

// Q, K, V in (B, T, H, D) layout; hashes in (B, T, H). V follows K's order.
template <typename T>
SortedBatch<T> sort_by_bucket(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V,
                              const BucketTensor& q_hash, const BucketTensor& k_hash);

// Stable per-(b, h) order of positions by bucket; head-major (B, H, T).
IndexTensor bucket_order(const BucketTensor& hash);

// Rows of a (B, T, H, D) tensor gathered into head-major sorted order.
template <typename T>
Tensor4<T> gather_rows(const Tensor4<T>& x, const IndexTensor& order);

// Tile interval for one query block of a sorted batch:
//   j_start  = #key blocks with max(k_hash_j) < min(q_hash_i)
//   j_stop   = #key blocks with min(k_hash_j) <= max(q_hash_i)
//   result   = [j_start, 1 + last j in [j_start, j_stop) with
//               min(k_idx_j) <= max(q_idx_i)), empty when none qualifies.
TileRange hash_tile_range(std::span<const std::int32_t> q_hash_block, std::span<const std::int64_t> q_idx_block,
                          std::span<const std::int32_t> k_hash, std::span<const std::int64_t> k_idx,
                          std::size_t block_n);

// Throws ContractError if hashes are unsorted, out of range, or positions
// within a bucket are not strictly increasing.
TileSchedule hash_schedule(const IndexTensor& q_idx, const IndexTensor& k_idx, const Grid3<std::int32_t>& q_hash,
                           const Grid3<std::int32_t>& k_hash, std::int32_t num_buckets, const BlockSpec& blocks);
template <typename T>
TileSchedule hash_schedule(const SortedBatch<T>& sorted, const BlockSpec& blocks);

// Sorted index and hash grids without touching any tensor data.
struct SortedHashes {
  IndexTensor q_idx, k_idx;
  Grid3<std::int32_t> q_hash, k_hash;
};
SortedHashes sort_hashes(const BucketTensor& q_hash, const BucketTensor& k_hash);

template <typename T>
FlashOutputs<T> hash_forward_kernel(const SortedBatch<T>& sorted, double tau, const BlockSpec& blocks,
                                    bool exclude_self);

template <typename T>
Gradients<T> hash_backward_kernel(const SortedBatch<T>& sorted, const FlashOutputs<T>& outputs,
                                  const Tensor4<T>& dO_sorted, double tau, const BlockSpec& blocks,
                                  bool exclude_self);

// Head-major sorted rows back to original positions, (B, T, H, D) layout.
template <typename T>
Tensor4<T> unsort_rows(const Tensor4<T>& y_sorted, const IndexTensor& order);

// End to end, boundary layout in and out.
template <typename T>
Tensor4<T> hash_sparse_attention(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V,
                                 const BucketTensor& q_hash, const BucketTensor& k_hash, double tau,
                                 bool exclude_self, const BlockSpec& blocks = {}, RunStats* stats = nullptr);

}  // namespace scfa
