#pragma once

#include <cstdint>

#include "scfa/attention.hpp"
#include "scfa/hash_sparse.hpp"
#include "scfa/tensor.hpp"

namespace scfa {

struct ChunkSpec {
  std::size_t length = 64;

  void validate() const {
    if (length == 0) throw ParameterError("chunk length must be >= 1");
  }
};

struct CoverageReport {
  std::uint64_t required_pairs = 0;
  std::uint64_t covered_pairs = 0;

  // 1 when nothing is required.
  double coverage() const {
    return required_pairs == 0 ? 1.0 : static_cast<double>(covered_pairs) / static_cast<double>(required_pairs);
  }
};

// Sorted query chunk i sees sorted key chunks i - 1 and i.
TileSchedule reformer_schedule(std::size_t batch, std::size_t heads, std::size_t length, const ChunkSpec& chunk);

// Kernels on a bucket-sorted batch; tiles are (chunk x chunk).
template <typename T>
FlashOutputs<T> reformer_forward_kernel(const SortedBatch<T>& sorted, const ChunkSpec& chunk, double tau,
                                        bool exclude_self);

template <typename T>
Gradients<T> reformer_backward_kernel(const SortedBatch<T>& sorted, const FlashOutputs<T>& outputs,
                                      const Tensor4<T>& dO_sorted, const ChunkSpec& chunk, double tau,
                                      bool exclude_self);

// Chunked LSH attention over the composite mask
//   same chunk or one back  AND  same bucket  AND  causal (strict if exclude_self),
// computed exactly and returned in (B, T, H, D) layout. Needs T_Q == T_KV.
template <typename T>
Tensor4<T> reformer_attention(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V,
                              const BucketTensor& q_hash, const BucketTensor& k_hash, const ChunkSpec& chunk,
                              double tau, bool exclude_self, RunStats* stats = nullptr);

// Same-bucket causal pairs, and how many of them land in a tile of
// `schedule` (tiles addressed in sorted-slot coordinates via `blocks`).
CoverageReport schedule_coverage(const SortedHashes& sorted, const TileSchedule& schedule, const BlockSpec& blocks,
                                 bool exclude_self);

// Coverage of the fixed two-chunk window.
CoverageReport lsh_coverage(const BucketTensor& q_hash, const BucketTensor& k_hash, const ChunkSpec& chunk,
                            bool exclude_self);

// Coverage of the hash-sparse tile schedule (1.0 by construction of the
// schedule, measured rather than assumed).
CoverageReport hash_coverage(const BucketTensor& q_hash, const BucketTensor& k_hash, const BlockSpec& blocks,
                             bool exclude_self);

}  // namespace scfa
