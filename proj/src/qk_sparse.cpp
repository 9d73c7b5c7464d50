#include "scfa/qk_sparse.hpp"

#include <algorithm>
#include <string>

#include "scfa/error.hpp"
#include "scfa/tiled_kernel.hpp"
#include "scfa/timer.hpp"

namespace scfa {
namespace {

// Non-pad prefix strictly increasing and in range, pads only trailing.
void check_padded(std::span<const std::int64_t> idx, std::int64_t pad, const char* side) {
  bool in_pad = false;
  std::int64_t prev = -1;
  for (std::int64_t v : idx) {
    if (v == pad) {
      in_pad = true;
      continue;
    }
    if (in_pad) throw ContractError(std::string(side) + " index has a real entry after padding");
    if (v < 0 || v >= kKeyPad) throw ContractError(std::string(side) + " index out of range");
    if (v <= prev) throw ContractError(std::string(side) + " index prefix is not strictly increasing");
    prev = v;
  }
}

template <typename T>
void check_boundary(const Tensor4<T>& x, const char* what) {
  if (x.layout() != Layout::kSeqMajor) throw ShapeError(std::string(what) + " must be in (B, T, H, D) layout");
}

}  // namespace

template <typename T>
CompactResult<T> compact(const KeepTensor& keep, const Tensor4<T>& x, const IndexTensor* index) {
  const Shape4& s = x.shape();
  CompactResult<T> out;

  if (index != nullptr) {
    if (index->batch() != s.batch || index->heads() != s.heads) throw ShapeError("index does not match x");
    for (std::int64_t v : index->values()) {
      if (v < 0 || static_cast<std::size_t>(v) >= s.length) {
        throw ShapeError("supplied index " + std::to_string(v) + " outside [0, " + std::to_string(s.length) + ")");
      }
    }
    out.index = to_layout(*index, Layout::kSeqMajor);
  } else {
    if (keep.batch() != s.batch || keep.heads() != s.heads || keep.length() != s.length) {
      throw ShapeError("keep mask does not match x " + s.to_string());
    }
    out.indices_per_head.assign(s.batch * s.heads, 0);
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::size_t h = 0; h < s.heads; ++h)
        for (std::size_t t = 0; t < s.length; ++t) {
          const auto k = keep.at(b, h, t);
          if (k > 1) throw ParameterError("keep flags must be 0 or 1");
          out.indices_per_head[b * s.heads + h] += k;
        }
    const std::int64_t widest = *std::max_element(out.indices_per_head.begin(), out.indices_per_head.end());
    const auto buffer = static_cast<std::size_t>(std::max<std::int64_t>(widest, 1));

    // Stable partition: kept positions in time order, then dropped ones.
    out.index = IndexTensor(s.batch, s.heads, buffer, Layout::kSeqMajor);
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::size_t h = 0; h < s.heads; ++h) {
        std::size_t slot = 0;
        for (int pass = 1; pass >= 0; --pass)
          for (std::size_t t = 0; t < s.length && slot < buffer; ++t)
            if (keep.at(b, h, t) == pass) out.index.at(b, h, slot++) = static_cast<std::int64_t>(t);
      }
  }

  const std::size_t buffer = out.index.length();
  out.compact = Tensor4<T>(Shape4{s.batch, s.heads, buffer, s.dim}, Layout::kSeqMajor);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h)
      for (std::size_t slot = 0; slot < buffer; ++slot) {
        auto src = x.row(b, h, static_cast<std::size_t>(out.index.at(b, h, slot)));
        std::copy(src.begin(), src.end(), out.compact.row(b, h, slot).begin());
      }
  return out;
}

template CompactResult<float> compact(const KeepTensor&, const Tensor4<float>&, const IndexTensor*);
template CompactResult<double> compact(const KeepTensor&, const Tensor4<double>&, const IndexTensor*);

IndexTensor pad_index(const IndexTensor& index, std::span<const std::int64_t> indices_per_head, std::int64_t pad) {
  if (indices_per_head.size() != index.batch() * index.heads()) {
    throw ShapeError("indices_per_head must have B * H entries");
  }
  IndexTensor out = index;
  for (std::size_t b = 0; b < index.batch(); ++b)
    for (std::size_t h = 0; h < index.heads(); ++h) {
      const std::int64_t kept = indices_per_head[b * index.heads() + h];
      for (std::size_t t = 0; t < index.length(); ++t)
        if (static_cast<std::int64_t>(t) >= kept) out.at(b, h, t) = pad;
    }
  return out;
}

std::size_t qk_tile_stop(std::span<const std::int64_t> q_idx_block, std::span<const std::int64_t> k_idx,
                         std::size_t block_n) {
  if (q_idx_block.empty() || block_n == 0) return 0;
  const std::int64_t q_max = *std::max_element(q_idx_block.begin(), q_idx_block.end());
  std::size_t end = 0;
  for (std::size_t c0 = 0; c0 < k_idx.size(); c0 += block_n) {
    auto block = k_idx.subspan(c0, std::min(block_n, k_idx.size() - c0));
    if (*std::min_element(block.begin(), block.end()) <= q_max) ++end;
  }
  return end;
}

TileSchedule qk_schedule(const IndexTensor& q_idx, const IndexTensor& k_idx, const BlockSpec& blocks) {
  blocks.validate();
  if (q_idx.layout() != Layout::kHeadMajor || k_idx.layout() != Layout::kHeadMajor) {
    throw ShapeError("padded indices must be head-major");
  }
  if (q_idx.batch() != k_idx.batch() || q_idx.heads() != k_idx.heads()) {
    throw ShapeError("query and key indices disagree on (B, H)");
  }
  const std::size_t t_q = q_idx.length();
  TileSchedule s{q_idx.batch(), q_idx.heads(), blocks.query_blocks(t_q), blocks.key_blocks(k_idx.length()), {}};
  s.ranges.resize(s.batch * s.heads * s.query_blocks);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h) {
      auto qh = q_idx.head(b, h);
      auto kh = k_idx.head(b, h);
      check_padded(qh, kQueryPad, "query");
      check_padded(kh, kKeyPad, "key");
      for (std::size_t i = 0; i < s.query_blocks; ++i) {
        const std::size_t r0 = i * blocks.block_m;
        auto qb = qh.subspan(r0, std::min(blocks.block_m, t_q - r0));
        s.at(b, h, i) = TileRange{0, qk_tile_stop(qb, kh, blocks.block_n)};
      }
    }
  return s;
}

template <typename T>
FlashOutputs<T> qk_forward_kernel(const Tensor4<T>& Qc, const Tensor4<T>& Kc, const Tensor4<T>& Vc,
                                  const IndexTensor& q_idx, const IndexTensor& k_idx, double tau,
                                  const BlockSpec& blocks) {
  const TileMask mask{&q_idx, &k_idx};
  return tiled_forward(Qc, Kc, Vc, mask, qk_schedule(q_idx, k_idx, blocks), tau, blocks);
}

template <typename T>
Gradients<T> qk_backward_kernel(const Tensor4<T>& Qc, const Tensor4<T>& Kc, const Tensor4<T>& Vc,
                                const FlashOutputs<T>& outputs, const Tensor4<T>& dOc, const IndexTensor& q_idx,
                                const IndexTensor& k_idx, double tau, const BlockSpec& blocks) {
  const TileMask mask{&q_idx, &k_idx};
  return tiled_backward(Qc, Kc, Vc, outputs, dOc, mask, qk_schedule(q_idx, k_idx, blocks), tau, blocks);
}

template <typename T>
QkPrepared<T> qk_prepare(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V, const KeepTensor& q_keep,
                         const KeepTensor& k_keep) {
  check_boundary(Q, "Q");
  check_boundary(K, "K");
  check_boundary(V, "V");
  if (K.shape() != V.shape()) throw ShapeError("K and V shapes differ");
  if (K.shape().length >= static_cast<std::size_t>(kKeyPad)) throw ParameterError("T_KV must stay below the key pad");

  CompactResult<T> cq = compact(q_keep, Q);
  CompactResult<T> ck = compact(k_keep, K);
  CompactResult<T> cv = compact(k_keep, V, &ck.index);

  QkPrepared<T> p;
  p.q_idx = to_layout(pad_index(cq.index, cq.indices_per_head, kQueryPad), Layout::kHeadMajor);
  p.k_idx = to_layout(pad_index(ck.index, ck.indices_per_head, kKeyPad), Layout::kHeadMajor);
  p.Qc = to_layout(cq.compact, Layout::kHeadMajor);
  p.Kc = to_layout(ck.compact, Layout::kHeadMajor);
  p.Vc = to_layout(cv.compact, Layout::kHeadMajor);
  p.q_index = std::move(cq.index);
  p.k_index = std::move(ck.index);
  return p;
}

template <typename T>
Tensor4<T> qk_scatter(const Tensor4<T>& y_compact, const IndexTensor& q_index, std::size_t length) {
  const Shape4& c = y_compact.shape();
  if (q_index.batch() != c.batch || q_index.heads() != c.heads || q_index.length() != c.length) {
    throw ShapeError("scatter index does not match compact output");
  }
  Tensor4<T> out(Shape4{c.batch, c.heads, length, c.dim}, Layout::kSeqMajor);
  for (std::size_t b = 0; b < c.batch; ++b)
    for (std::size_t h = 0; h < c.heads; ++h)
      for (std::size_t slot = 0; slot < c.length; ++slot) {
        const std::int64_t t = q_index.at(b, h, slot);
        if (t < 0 || static_cast<std::size_t>(t) >= length) throw ShapeError("scatter index out of range");
        auto src = y_compact.row(b, h, slot);
        std::copy(src.begin(), src.end(), out.row(b, h, static_cast<std::size_t>(t)).begin());
      }
  return out;
}

template <typename T>
Tensor4<T> qk_sparse_attention(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V,
                               const KeepTensor& q_keep, const KeepTensor& k_keep, double tau,
                               const BlockSpec& blocks, RunStats* stats) {
  Stopwatch clock;
  const QkPrepared<T> p = qk_prepare(Q, K, V, q_keep, k_keep);
  const double pre = clock.lap_ms();
  const double scale = resolve_scale(tau, Q.shape().dim);
  const FlashOutputs<T> y = qk_forward_kernel(p.Qc, p.Kc, p.Vc, p.q_idx, p.k_idx, scale, blocks);
  const double fwd = clock.lap_ms();
  Tensor4<T> out = qk_scatter(y.O, p.q_index, Q.shape().length);
  if (stats != nullptr) *stats = RunStats{pre, fwd, clock.lap_ms(), y.tiles_computed};
  return out;
}

#define SCFA_INSTANTIATE_QK(T)                                                                                    \
  template FlashOutputs<T> qk_forward_kernel(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,             \
                                             const IndexTensor&, const IndexTensor&, double, const BlockSpec&);   \
  template Gradients<T> qk_backward_kernel(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,               \
                                           const FlashOutputs<T>&, const Tensor4<T>&, const IndexTensor&,         \
                                           const IndexTensor&, double, const BlockSpec&);                         \
  template QkPrepared<T> qk_prepare(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&, const KeepTensor&,   \
                                    const KeepTensor&);                                                           \
  template Tensor4<T> qk_scatter(const Tensor4<T>&, const IndexTensor&, std::size_t);                             \
  template Tensor4<T> qk_sparse_attention(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,                \
                                          const KeepTensor&, const KeepTensor&, double, const BlockSpec&,         \
                                          RunStats*);

SCFA_INSTANTIATE_QK(float)
SCFA_INSTANTIATE_QK(double)
#undef SCFA_INSTANTIATE_QK

}  // namespace scfa
