#pragma once

// Independent reference implementations used only by tests. Nothing here
// calls into the kernels, schedules, or the library oracle it is compared
// against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "scfa/attention.hpp"
#include "scfa/tensor.hpp"

namespace scfa::testing {

using Visible = std::function<bool(std::size_t b, std::size_t h, std::size_t i, std::size_t j)>;

// Straight transcription of softmax(tau q k^T) v over visible keys, in long
// double, two passes per row. Stranded rows are zero.
template <typename T>
Tensor4<double> brute_attention(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V, const Visible& visible,
                                double tau) {
  const Shape4& s = Q.shape();
  const std::size_t t_kv = K.shape().length;
  Tensor4<double> out(s, Q.layout());
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h)
      for (std::size_t i = 0; i < s.length; ++i) {
        std::vector<long double> logit(t_kv, 0.0L);
        long double mx = -std::numeric_limits<long double>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < t_kv; ++j) {
          if (!visible(b, h, i, j)) continue;
          long double dot = 0.0L;
          for (std::size_t d = 0; d < s.dim; ++d) dot += static_cast<long double>(Q.at(b, h, i, d)) * K.at(b, h, j, d);
          logit[j] = tau * dot;
          mx = std::max(mx, logit[j]);
          any = true;
        }
        if (!any) continue;
        long double denom = 0.0L;
        for (std::size_t j = 0; j < t_kv; ++j)
          if (visible(b, h, i, j)) denom += std::exp(logit[j] - mx);
        for (std::size_t d = 0; d < s.dim; ++d) {
          long double acc = 0.0L;
          for (std::size_t j = 0; j < t_kv; ++j)
            if (visible(b, h, i, j)) acc += std::exp(logit[j] - mx) / denom * V.at(b, h, j, d);
          out.at(b, h, i, d) = static_cast<double>(acc);
        }
      }
  return out;
}

// Key blocks j with min(k_idx_j) <= max(q_idx_i), by enumeration over every
// (i, j) and every element of both blocks.
inline std::vector<std::vector<bool>> brute_causal_tiles(const std::vector<std::int64_t>& q_idx,
                                                         const std::vector<std::int64_t>& k_idx, std::size_t bm,
                                                         std::size_t bn) {
  const std::size_t m = (q_idx.size() + bm - 1) / bm;
  const std::size_t n = (k_idx.size() + bn - 1) / bn;
  std::vector<std::vector<bool>> need(m, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t r = i * bm; r < std::min(q_idx.size(), (i + 1) * bm); ++r)
        for (std::size_t c = j * bn; c < std::min(k_idx.size(), (j + 1) * bn); ++c)
          if (k_idx[c] <= q_idx[r]) need[i][j] = true;
  return need;
}

// Smallest interval of key blocks containing every tile that has at least
// one same-bucket pair and at least one (possibly different) causal pair,
// i.e. the two conditions the hash schedule combines, evaluated pairwise.
struct BruteRange {
  std::size_t start, stop;
};
inline std::vector<BruteRange> brute_hash_ranges(const std::vector<std::int32_t>& q_hash,
                                                 const std::vector<std::int64_t>& q_idx,
                                                 const std::vector<std::int32_t>& k_hash,
                                                 const std::vector<std::int64_t>& k_idx, std::size_t bm,
                                                 std::size_t bn) {
  const std::size_t m = (q_hash.size() + bm - 1) / bm;
  const std::size_t n = (k_hash.size() + bn - 1) / bn;
  std::vector<BruteRange> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t r_end = std::min(q_hash.size(), (i + 1) * bm);
    std::int32_t qmin = std::numeric_limits<std::int32_t>::max(), qmax = std::numeric_limits<std::int32_t>::min();
    std::int64_t qidx_max = std::numeric_limits<std::int64_t>::min();
    for (std::size_t r = i * bm; r < r_end; ++r) {
      qmin = std::min(qmin, q_hash[r]);
      qmax = std::max(qmax, q_hash[r]);
      qidx_max = std::max(qidx_max, q_idx[r]);
    }
    // start: blocks whose every hash is below every query hash
    std::size_t start = 0, hash_stop = 0;
    for (std::size_t j = 0; j < n; ++j) {
      bool all_below = true, some_not_above = false;
      for (std::size_t c = j * bn; c < std::min(k_hash.size(), (j + 1) * bn); ++c) {
        if (!(k_hash[c] < qmin)) all_below = false;
        if (k_hash[c] <= qmax) some_not_above = true;
      }
      start += all_below;
      hash_stop += some_not_above;
    }
    std::size_t stop = start;
    for (std::size_t j = start; j < hash_stop; ++j)
      for (std::size_t c = j * bn; c < std::min(k_idx.size(), (j + 1) * bn); ++c)
        if (k_idx[c] <= qidx_max) stop = j + 1;
    out[i] = {start, stop};
  }
  return out;
}

// FNV-1a over raw bytes; used for double-run determinism checks.
class Fnv1a {
 public:
  template <typename T>
  void add(std::span<const T> xs) {
    const auto* p = reinterpret_cast<const unsigned char*>(xs.data());
    for (std::size_t i = 0; i < xs.size_bytes(); ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  void add(const std::vector<T>& xs) {
    add(std::span<const T>(xs));
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

template <typename T>
bool all_finite(const Tensor4<T>& x) {
  return std::all_of(x.values().begin(), x.values().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
bool all_zero(std::span<const T> xs) {
  return std::all_of(xs.begin(), xs.end(), [](T v) { return v == T(0); });
}

}  // namespace scfa::testing
