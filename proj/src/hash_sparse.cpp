#include "scfa/hash_sparse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "scfa/error.hpp"
#include "scfa/random.hpp"
#include "scfa/tiled_kernel.hpp"
#include "scfa/timer.hpp"

namespace scfa {
namespace {

void check_buckets(const BucketTensor& hash, std::size_t batch, std::size_t heads, std::size_t length,
                   const char* side) {
  const auto& g = hash.values;
  if (g.batch() != batch || g.heads() != heads || g.length() != length) {
    throw ShapeError(std::string(side) + " hashes do not match operands");
  }
  if (hash.num_buckets < 1) throw ParameterError("bucket count must be >= 1");
  for (std::int32_t v : g.values()) {
    if (v < 0 || v >= hash.num_buckets) {
      throw ParameterError(std::string(side) + " hash " + std::to_string(v) + " outside [0, " +
                           std::to_string(hash.num_buckets) + ")");
    }
  }
}

void check_sorted(std::span<const std::int32_t> hash, std::span<const std::int64_t> idx, std::int32_t nb,
                  const char* side) {
  for (std::size_t t = 0; t < hash.size(); ++t) {
    if (hash[t] < 0 || hash[t] >= nb) throw ContractError(std::string(side) + " hash out of range");
    if (t == 0) continue;
    if (hash[t] < hash[t - 1]) throw ContractError(std::string(side) + " hashes are not sorted");
    if (hash[t] == hash[t - 1] && idx[t] <= idx[t - 1]) {
      throw ContractError(std::string(side) + " positions within a bucket are not increasing");
    }
  }
}

template <typename T>
TileMask sorted_mask(const SortedBatch<T>& s, bool exclude_self) {
  return TileMask{&s.q_idx, &s.k_idx, &s.q_hash, &s.k_hash, exclude_self};
}

}  // namespace

template <typename T>
BucketTensor lsh_buckets(const Tensor4<T>& X, std::int32_t num_buckets, std::uint64_t seed) {
  if (num_buckets < 2 || num_buckets % 2 != 0) {
    throw ParameterError("LSH bucket count must be even and >= 2, got " + std::to_string(num_buckets));
  }
  const Shape4& s = X.shape();
  const auto half = static_cast<std::size_t>(num_buckets / 2);
  BucketTensor out{Grid3<std::int32_t>(s.batch, s.heads, s.length, Layout::kSeqMajor), num_buckets};
  std::vector<double> proj(s.dim * half);
  std::vector<double> code(half);

  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < s.heads; ++h) {
      const CounterRng rng = CounterRng(seed, b * s.heads + h).split(3);
      for (std::size_t i = 0; i < proj.size(); ++i) proj[i] = rng.normal(i);

      for (std::size_t t = 0; t < s.length; ++t) {
        auto x = X.row(b, h, t);
        std::fill(code.begin(), code.end(), 0.0);
        for (std::size_t d = 0; d < s.dim; ++d) {
          const double xd = static_cast<double>(x[d]);
          for (std::size_t c = 0; c < half; ++c) code[c] += xd * proj[d * half + c];
        }
        // argmax over [code, -code]
        std::size_t best = 0;
        double best_val = code[0];
        for (std::size_t c = 1; c < 2 * half; ++c) {
          const double v = c < half ? code[c] : -code[c - half];
          if (v > best_val) {
            best_val = v;
            best = c;
          }
        }
        out.values.at(b, h, t) = static_cast<std::int32_t>(best);
      }
    }
  }
  return out;
}

template <typename T>
Tensor4<T> normalize_keys(const Tensor4<T>& Q) {
  Tensor4<T> K = Q;
  const Shape4& s = Q.shape();
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h)
      for (std::size_t t = 0; t < s.length; ++t) {
        auto row = K.row(b, h, t);
        double sq = 0.0;
        for (T v : row) sq += static_cast<double>(v) * static_cast<double>(v);
        if (!(sq > 0.0)) throw NumericError("cannot normalize a zero query row");
        const double inv = 1.0 / std::sqrt(sq);
        for (T& v : row) v = static_cast<T>(static_cast<double>(v) * inv);
      }
  return K;
}

IndexTensor bucket_order(const BucketTensor& hash) {
  const auto& g = hash.values;
  IndexTensor order(g.batch(), g.heads(), g.length(), Layout::kHeadMajor);
  std::vector<std::int64_t> perm(g.length());
  for (std::size_t b = 0; b < g.batch(); ++b)
    for (std::size_t h = 0; h < g.heads(); ++h) {
      std::iota(perm.begin(), perm.end(), 0);
      std::stable_sort(perm.begin(), perm.end(), [&](std::int64_t x, std::int64_t y) {
        return g.at(b, h, static_cast<std::size_t>(x)) < g.at(b, h, static_cast<std::size_t>(y));
      });
      std::copy(perm.begin(), perm.end(), order.head(b, h).begin());
    }
  return order;
}

template <typename T>
Tensor4<T> gather_rows(const Tensor4<T>& x, const IndexTensor& order) {
  const Shape4& s = x.shape();
  if (order.batch() != s.batch || order.heads() != s.heads || order.length() != s.length) {
    throw ShapeError("gather order does not match tensor");
  }
  Tensor4<T> out(s, Layout::kHeadMajor);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h)
      for (std::size_t t = 0; t < s.length; ++t) {
        auto src = x.row(b, h, static_cast<std::size_t>(order.at(b, h, t)));
        std::copy(src.begin(), src.end(), out.row(b, h, t).begin());
      }
  return out;
}

template <typename T>
Tensor4<T> unsort_rows(const Tensor4<T>& y_sorted, const IndexTensor& order) {
  const Shape4& s = y_sorted.shape();
  if (order.batch() != s.batch || order.heads() != s.heads || order.length() != s.length) {
    throw ShapeError("scatter order does not match tensor");
  }
  Tensor4<T> out(s, Layout::kSeqMajor);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h)
      for (std::size_t t = 0; t < s.length; ++t) {
        auto src = y_sorted.row(b, h, t);
        std::copy(src.begin(), src.end(), out.row(b, h, static_cast<std::size_t>(order.at(b, h, t))).begin());
      }
  return out;
}

SortedHashes sort_hashes(const BucketTensor& q_hash, const BucketTensor& k_hash) {
  auto sorted_values = [](const BucketTensor& hash, const IndexTensor& order) {
    const auto& g = hash.values;
    Grid3<std::int32_t> out(g.batch(), g.heads(), g.length(), Layout::kHeadMajor);
    for (std::size_t b = 0; b < g.batch(); ++b)
      for (std::size_t h = 0; h < g.heads(); ++h)
        for (std::size_t t = 0; t < g.length(); ++t)
          out.at(b, h, t) = g.at(b, h, static_cast<std::size_t>(order.at(b, h, t)));
    return out;
  };
  SortedHashes out;
  out.q_idx = bucket_order(q_hash);
  out.k_idx = bucket_order(k_hash);
  out.q_hash = sorted_values(q_hash, out.q_idx);
  out.k_hash = sorted_values(k_hash, out.k_idx);
  return out;
}

template <typename T>
SortedBatch<T> sort_by_bucket(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V,
                              const BucketTensor& q_hash, const BucketTensor& k_hash) {
  for (const auto* x : {&Q, &K, &V}) {
    if (x->layout() != Layout::kSeqMajor) throw ShapeError("Q, K, V must be in (B, T, H, D) layout");
  }
  if (K.shape() != V.shape()) throw ShapeError("K and V shapes differ");
  const Shape4& q = Q.shape();
  const Shape4& k = K.shape();
  if (q.batch != k.batch || q.heads != k.heads || q.dim != k.dim) throw ShapeError("Q incompatible with K");
  check_buckets(q_hash, q.batch, q.heads, q.length, "query");
  check_buckets(k_hash, k.batch, k.heads, k.length, "key");
  if (q_hash.num_buckets != k_hash.num_buckets) throw ParameterError("query and key bucket counts differ");

  SortedHashes order = sort_hashes(q_hash, k_hash);
  SortedBatch<T> out;
  out.num_buckets = q_hash.num_buckets;
  out.Q = gather_rows(Q, order.q_idx);
  out.K = gather_rows(K, order.k_idx);
  out.V = gather_rows(V, order.k_idx);
  out.q_idx = std::move(order.q_idx);
  out.k_idx = std::move(order.k_idx);
  out.q_hash = std::move(order.q_hash);
  out.k_hash = std::move(order.k_hash);
  return out;
}

TileRange hash_tile_range(std::span<const std::int32_t> q_hash_block, std::span<const std::int64_t> q_idx_block,
                          std::span<const std::int32_t> k_hash, std::span<const std::int64_t> k_idx,
                          std::size_t block_n) {
  if (q_hash_block.empty() || block_n == 0) return {};
  const auto [q_hash_min, q_hash_max] = std::minmax_element(q_hash_block.begin(), q_hash_block.end());
  const std::int64_t q_idx_max = *std::max_element(q_idx_block.begin(), q_idx_block.end());

  std::size_t start = 0;
  std::size_t end_hash = 0;
  for (std::size_t c0 = 0; c0 < k_hash.size(); c0 += block_n) {
    auto block = k_hash.subspan(c0, std::min(block_n, k_hash.size() - c0));
    const auto [k_min, k_max] = std::minmax_element(block.begin(), block.end());
    if (*k_min <= *q_hash_max) ++end_hash;
    if (*k_max < *q_hash_min) ++start;
  }

  std::size_t end = start;
  for (std::size_t j = start; j < end_hash; ++j) {
    const std::size_t c0 = j * block_n;
    auto block = k_idx.subspan(c0, std::min(block_n, k_idx.size() - c0));
    if (*std::min_element(block.begin(), block.end()) <= q_idx_max) end = j + 1;
  }
  return TileRange{start, end};
}

TileSchedule hash_schedule(const IndexTensor& q_idx, const IndexTensor& k_idx, const Grid3<std::int32_t>& q_hash,
                           const Grid3<std::int32_t>& k_hash, std::int32_t num_buckets, const BlockSpec& blocks) {
  blocks.validate();
  for (const auto* g : {&q_idx, &k_idx}) {
    if (g->layout() != Layout::kHeadMajor) throw ShapeError("sorted indices must be head-major");
  }
  if (q_hash.layout() != Layout::kHeadMajor || k_hash.layout() != Layout::kHeadMajor) {
    throw ShapeError("sorted hashes must be head-major");
  }
  if (q_idx.batch() != k_idx.batch() || q_idx.heads() != k_idx.heads() || q_hash.length() != q_idx.length() ||
      k_hash.length() != k_idx.length() || q_hash.batch() != q_idx.batch() || k_hash.heads() != k_idx.heads()) {
    throw ShapeError("sorted index and hash grids disagree");
  }
  const std::size_t t_q = q_idx.length();
  TileSchedule s{q_idx.batch(), q_idx.heads(), blocks.query_blocks(t_q), blocks.key_blocks(k_idx.length()), {}};
  s.ranges.resize(s.batch * s.heads * s.query_blocks);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h) {
      auto qh = q_hash.head(b, h);
      auto qi = q_idx.head(b, h);
      auto kh = k_hash.head(b, h);
      auto ki = k_idx.head(b, h);
      check_sorted(qh, qi, num_buckets, "query");
      check_sorted(kh, ki, num_buckets, "key");
      for (std::size_t i = 0; i < s.query_blocks; ++i) {
        const std::size_t r0 = i * blocks.block_m;
        const std::size_t rows = std::min(blocks.block_m, t_q - r0);
        s.at(b, h, i) = hash_tile_range(qh.subspan(r0, rows), qi.subspan(r0, rows), kh, ki, blocks.block_n);
      }
    }
  return s;
}

template <typename T>
TileSchedule hash_schedule(const SortedBatch<T>& sorted, const BlockSpec& blocks) {
  return hash_schedule(sorted.q_idx, sorted.k_idx, sorted.q_hash, sorted.k_hash, sorted.num_buckets, blocks);
}

template <typename T>
FlashOutputs<T> hash_forward_kernel(const SortedBatch<T>& sorted, double tau, const BlockSpec& blocks,
                                    bool exclude_self) {
  return tiled_forward(sorted.Q, sorted.K, sorted.V, sorted_mask(sorted, exclude_self),
                       hash_schedule(sorted, blocks), tau, blocks);
}

template <typename T>
Gradients<T> hash_backward_kernel(const SortedBatch<T>& sorted, const FlashOutputs<T>& outputs,
                                  const Tensor4<T>& dO_sorted, double tau, const BlockSpec& blocks,
                                  bool exclude_self) {
  return tiled_backward(sorted.Q, sorted.K, sorted.V, outputs, dO_sorted, sorted_mask(sorted, exclude_self),
                        hash_schedule(sorted, blocks), tau, blocks);
}

template <typename T>
Tensor4<T> hash_sparse_attention(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V,
                                 const BucketTensor& q_hash, const BucketTensor& k_hash, double tau,
                                 bool exclude_self, const BlockSpec& blocks, RunStats* stats) {
  Stopwatch clock;
  const SortedBatch<T> sorted = sort_by_bucket(Q, K, V, q_hash, k_hash);
  const double pre = clock.lap_ms();
  const FlashOutputs<T> y =
      hash_forward_kernel(sorted, resolve_scale(tau, Q.shape().dim), blocks, exclude_self);
  const double fwd = clock.lap_ms();
  Tensor4<T> out = unsort_rows(y.O, sorted.q_idx);
  if (stats != nullptr) *stats = RunStats{pre, fwd, clock.lap_ms(), y.tiles_computed};
  return out;
}

#define SCFA_INSTANTIATE_HASH(T)                                                                                \
  template BucketTensor lsh_buckets(const Tensor4<T>&, std::int32_t, std::uint64_t);                            \
  template Tensor4<T> normalize_keys(const Tensor4<T>&);                                                        \
  template SortedBatch<T> sort_by_bucket(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,               \
                                         const BucketTensor&, const BucketTensor&);                             \
  template Tensor4<T> gather_rows(const Tensor4<T>&, const IndexTensor&);                                       \
  template Tensor4<T> unsort_rows(const Tensor4<T>&, const IndexTensor&);                                       \
  template TileSchedule hash_schedule(const SortedBatch<T>&, const BlockSpec&);                                 \
  template FlashOutputs<T> hash_forward_kernel(const SortedBatch<T>&, double, const BlockSpec&, bool);          \
  template Gradients<T> hash_backward_kernel(const SortedBatch<T>&, const FlashOutputs<T>&, const Tensor4<T>&,  \
                                             double, const BlockSpec&, bool);                                   \
  template Tensor4<T> hash_sparse_attention(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,            \
                                            const BucketTensor&, const BucketTensor&, double, bool,             \
                                            const BlockSpec&, RunStats*);

SCFA_INSTANTIATE_HASH(float)
SCFA_INSTANTIATE_HASH(double)
#undef SCFA_INSTANTIATE_HASH

}  // namespace scfa
