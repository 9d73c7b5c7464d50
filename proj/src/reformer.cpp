#include "scfa/reformer.hpp"

#include <algorithm>
#include <vector>

#include "scfa/error.hpp"
#include "scfa/parallel.hpp"
#include "scfa/tiled_kernel.hpp"
#include "scfa/timer.hpp"

namespace scfa {

TileSchedule reformer_schedule(std::size_t batch, std::size_t heads, std::size_t length, const ChunkSpec& chunk) {
  chunk.validate();
  const BlockSpec blocks{chunk.length, chunk.length};
  const std::size_t chunks = blocks.query_blocks(length);
  TileSchedule s{batch, heads, chunks, chunks, {}};
  s.ranges.resize(batch * heads * chunks);
  for (std::size_t bh = 0; bh < batch * heads; ++bh)
    for (std::size_t i = 0; i < chunks; ++i) s.ranges[bh * chunks + i] = TileRange{i == 0 ? 0 : i - 1, i + 1};
  return s;
}

namespace {

template <typename T>
TileMask sorted_mask(const SortedBatch<T>& sorted, bool exclude_self) {
  return TileMask{&sorted.q_idx, &sorted.k_idx, &sorted.q_hash, &sorted.k_hash, exclude_self};
}

template <typename T>
void require_square(const SortedBatch<T>& sorted) {
  if (sorted.Q.shape() != sorted.K.shape()) throw ShapeError("chunked attention needs T_Q == T_KV");
}

}  // namespace

template <typename T>
FlashOutputs<T> reformer_forward_kernel(const SortedBatch<T>& sorted, const ChunkSpec& chunk, double tau,
                                        bool exclude_self) {
  chunk.validate();
  require_square(sorted);
  const Shape4& s = sorted.Q.shape();
  return tiled_forward(sorted.Q, sorted.K, sorted.V, sorted_mask(sorted, exclude_self),
                       reformer_schedule(s.batch, s.heads, s.length, chunk), tau,
                       BlockSpec{chunk.length, chunk.length});
}

template <typename T>
Gradients<T> reformer_backward_kernel(const SortedBatch<T>& sorted, const FlashOutputs<T>& outputs,
                                      const Tensor4<T>& dO_sorted, const ChunkSpec& chunk, double tau,
                                      bool exclude_self) {
  chunk.validate();
  require_square(sorted);
  const Shape4& s = sorted.Q.shape();
  return tiled_backward(sorted.Q, sorted.K, sorted.V, outputs, dO_sorted, sorted_mask(sorted, exclude_self),
                        reformer_schedule(s.batch, s.heads, s.length, chunk), tau,
                        BlockSpec{chunk.length, chunk.length});
}

template <typename T>
Tensor4<T> reformer_attention(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V,
                              const BucketTensor& q_hash, const BucketTensor& k_hash, const ChunkSpec& chunk,
                              double tau, bool exclude_self, RunStats* stats) {
  chunk.validate();
  if (Q.shape() != K.shape()) throw ShapeError("chunked attention needs T_Q == T_KV");
  Stopwatch clock;
  const SortedBatch<T> sorted = sort_by_bucket(Q, K, V, q_hash, k_hash);
  const double pre = clock.lap_ms();
  const FlashOutputs<T> y = reformer_forward_kernel(sorted, chunk, resolve_scale(tau, Q.shape().dim), exclude_self);
  const double fwd = clock.lap_ms();
  Tensor4<T> out = unsort_rows(y.O, sorted.q_idx);
  if (stats != nullptr) *stats = RunStats{pre, fwd, clock.lap_ms(), y.tiles_computed};
  return out;
}

#define SCFA_INSTANTIATE_REFORMER(T)                                                                            \
  template FlashOutputs<T> reformer_forward_kernel(const SortedBatch<T>&, const ChunkSpec&, double, bool);      \
  template Gradients<T> reformer_backward_kernel(const SortedBatch<T>&, const FlashOutputs<T>&,                 \
                                                 const Tensor4<T>&, const ChunkSpec&, double, bool);            \
  template Tensor4<T> reformer_attention(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,               \
                                         const BucketTensor&, const BucketTensor&, const ChunkSpec&, double,    \
                                         bool, RunStats*);

SCFA_INSTANTIATE_REFORMER(float)
SCFA_INSTANTIATE_REFORMER(double)
#undef SCFA_INSTANTIATE_REFORMER

CoverageReport schedule_coverage(const SortedHashes& sorted, const TileSchedule& schedule, const BlockSpec& blocks,
                                 bool exclude_self) {
  blocks.validate();
  const std::size_t t_q = sorted.q_idx.length();
  const std::size_t t_kv = sorted.k_idx.length();
  if (schedule.batch != sorted.q_idx.batch() || schedule.heads != sorted.q_idx.heads() ||
      schedule.query_blocks != blocks.query_blocks(t_q)) {
    throw ShapeError("schedule does not match sorted hashes");
  }
  const std::size_t slices = schedule.batch * schedule.heads;
  std::vector<CoverageReport> per_slice(slices);

  // Within a bucket the sorted keys are in time order, so the keys a query
  // needs are a prefix [first, first + count) of its bucket's key slots.
  parallel_for(slices, [&](std::size_t bh) {
    const std::size_t b = bh / schedule.heads;
    const std::size_t h = bh % schedule.heads;
    auto kh = sorted.k_hash.head(b, h);
    auto ki = sorted.k_idx.head(b, h);
    auto qh = sorted.q_hash.head(b, h);
    auto qi = sorted.q_idx.head(b, h);
    CoverageReport report;
    std::size_t bucket_begin = 0;
    std::size_t bucket_end = 0;
    std::int32_t bucket = -1;

    for (std::size_t p = 0; p < t_q; ++p) {
      if (qh[p] != bucket) {
        bucket = qh[p];
        auto lo = std::lower_bound(kh.begin(), kh.end(), bucket);
        auto hi = std::upper_bound(lo, kh.end(), bucket);
        bucket_begin = static_cast<std::size_t>(lo - kh.begin());
        bucket_end = static_cast<std::size_t>(hi - kh.begin());
      }
      auto first = ki.begin() + static_cast<std::ptrdiff_t>(bucket_begin);
      auto last = ki.begin() + static_cast<std::ptrdiff_t>(bucket_end);
      auto cut = exclude_self ? std::lower_bound(first, last, qi[p]) : std::upper_bound(first, last, qi[p]);
      const std::size_t need_end = static_cast<std::size_t>(cut - ki.begin());
      report.required_pairs += need_end - bucket_begin;

      const TileRange range = schedule.at(b, h, p / blocks.block_m);
      const std::size_t lo = std::max(bucket_begin, range.j_start * blocks.block_n);
      const std::size_t hi = std::min({need_end, range.j_stop * blocks.block_n, t_kv});
      if (hi > lo) report.covered_pairs += hi - lo;
    }
    per_slice[bh] = report;
  });

  CoverageReport total;
  for (const auto& r : per_slice) {
    total.required_pairs += r.required_pairs;
    total.covered_pairs += r.covered_pairs;
  }
  return total;
}

CoverageReport lsh_coverage(const BucketTensor& q_hash, const BucketTensor& k_hash, const ChunkSpec& chunk,
                            bool exclude_self) {
  chunk.validate();
  if (q_hash.values.length() != k_hash.values.length()) throw ShapeError("chunked coverage needs T_Q == T_KV");
  const SortedHashes sorted = sort_hashes(q_hash, k_hash);
  const auto& g = q_hash.values;
  return schedule_coverage(sorted, reformer_schedule(g.batch(), g.heads(), g.length(), chunk),
                           BlockSpec{chunk.length, chunk.length}, exclude_self);
}

CoverageReport hash_coverage(const BucketTensor& q_hash, const BucketTensor& k_hash, const BlockSpec& blocks,
                             bool exclude_self) {
  const SortedHashes sorted = sort_hashes(q_hash, k_hash);
  const std::int32_t nb = std::max(q_hash.num_buckets, k_hash.num_buckets);
  const TileSchedule schedule = hash_schedule(sorted.q_idx, sorted.k_idx, sorted.q_hash, sorted.k_hash, nb, blocks);
  return schedule_coverage(sorted, schedule, blocks, exclude_self);
}

}  // namespace scfa
