#include "scfa/tiled_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "scfa/error.hpp"
#include "scfa/online_softmax.hpp"
#include "scfa/parallel.hpp"

namespace scfa {
namespace {

struct Extents {
  std::size_t batch, heads, t_q, t_kv, dim, m_blocks, n_blocks;
};

template <typename T>
Extents check_inputs(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V, const TileMask& mask,
                     const TileSchedule& schedule, const BlockSpec& blocks) {
  blocks.validate();
  for (const auto* x : {&Q, &K, &V}) {
    if (x->layout() != Layout::kHeadMajor) throw ShapeError("kernel operands must be head-major");
  }
  const Shape4& q = Q.shape();
  const Shape4& k = K.shape();
  if (k != V.shape()) throw ShapeError("K " + k.to_string() + " and V " + V.shape().to_string() + " differ");
  if (q.batch != k.batch || q.heads != k.heads || q.dim != k.dim) {
    throw ShapeError("Q " + q.to_string() + " incompatible with K " + k.to_string());
  }
  if (mask.q_idx == nullptr || mask.k_idx == nullptr) throw ShapeError("tile mask needs query and key indices");
  auto check_grid = [&](const auto& g, std::size_t len, const char* what) {
    if (g.layout() != Layout::kHeadMajor || g.batch() != q.batch || g.heads() != q.heads || g.length() != len) {
      throw ShapeError(std::string(what) + " grid does not match operands");
    }
  };
  check_grid(*mask.q_idx, q.length, "query index");
  check_grid(*mask.k_idx, k.length, "key index");
  if ((mask.q_hash == nullptr) != (mask.k_hash == nullptr)) throw ShapeError("hashes must be given for both sides");
  if (mask.q_hash != nullptr) {
    check_grid(*mask.q_hash, q.length, "query hash");
    check_grid(*mask.k_hash, k.length, "key hash");
  }
  const Extents e{q.batch, q.heads, q.length, k.length, q.dim, blocks.query_blocks(q.length),
                  blocks.key_blocks(k.length)};
  if (schedule.batch != e.batch || schedule.heads != e.heads || schedule.query_blocks != e.m_blocks ||
      schedule.key_blocks != e.n_blocks || schedule.ranges.size() != e.batch * e.heads * e.m_blocks) {
    throw ShapeError("tile schedule does not match operands and block sizes");
  }
  for (const auto& r : schedule.ranges) {
    if (r.j_start > r.j_stop || r.j_stop > e.n_blocks) throw ContractError("tile range out of bounds");
  }
  return e;
}

// Scratch buffers for one tile; reused across the tiles a task visits.
template <typename T>
struct TileScratch {
  std::vector<T> k_t;  // dim x cols, transposed key block
  std::vector<T> s;    // rows x cols

  TileScratch(std::size_t rows, std::size_t cols, std::size_t dim) : k_t(dim * cols), s(rows * cols) {}
};

// Writes the masked, scaled logits tau * q k^T (masked entries -inf) of the
// tile starting at (r0, c0) into scratch.s, rows x cols.
template <typename T>
void masked_logits(std::span<const T> q_head, std::span<const T> k_head, const TileMask& mask, std::size_t b,
                   std::size_t h, std::size_t r0, std::size_t rows, std::size_t c0, std::size_t cols,
                   std::size_t dim, T tau, TileScratch<T>& scratch) {
  T* kt = scratch.k_t.data();
  for (std::size_t c = 0; c < cols; ++c) {
    const T* kc = k_head.data() + (c0 + c) * dim;
    for (std::size_t d = 0; d < dim; ++d) kt[d * cols + c] = kc[d];
  }

  const std::int64_t* q_idx = mask.q_idx->head(b, h).data() + r0;
  const std::int64_t* k_idx = mask.k_idx->head(b, h).data() + c0;
  const std::int32_t* q_hash = mask.q_hash ? mask.q_hash->head(b, h).data() + r0 : nullptr;
  const std::int32_t* k_hash = mask.k_hash ? mask.k_hash->head(b, h).data() + c0 : nullptr;
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();

  for (std::size_t r = 0; r < rows; ++r) {
    T* s = scratch.s.data() + r * cols;
    std::fill(s, s + cols, T(0));
    const T* qr = q_head.data() + (r0 + r) * dim;
    for (std::size_t d = 0; d < dim; ++d) {
      const T qd = qr[d];
      const T* ktd = kt + d * cols;
      for (std::size_t c = 0; c < cols; ++c) s[c] += qd * ktd[c];
    }
    for (std::size_t c = 0; c < cols; ++c) {
      bool visible = mask.exclude_self ? q_idx[r] > k_idx[c] : q_idx[r] >= k_idx[c];
      if (q_hash != nullptr && q_hash[r] != k_hash[c]) visible = false;
      s[c] = visible ? s[c] * tau : kNegInf;
    }
  }
}

template <typename T>
T offset_of(T m) {
  return m == -std::numeric_limits<T>::infinity() ? T(0) : m;
}

template <typename T>
T inverse_of(T l) {
  const T z = T(1) / l;
  return z == std::numeric_limits<T>::infinity() ? T(1) : z;
}

// Per-tile probability and score-gradient recomputation shared by the dQ
// and dK/dV passes. On return scratch.s holds P and ds holds
// dS = P * (dP - delta).
template <typename T>
void tile_gradients(std::span<const T> q_head, std::span<const T> k_head, std::span<const T> v_head,
                    std::span<const T> do_head, const T* m_row, const T* l_row, const T* delta_row,
                    const TileMask& mask, std::size_t b, std::size_t h, std::size_t r0, std::size_t rows,
                    std::size_t c0, std::size_t cols, std::size_t dim, T tau, TileScratch<T>& scratch,
                    std::vector<T>& v_t, std::vector<T>& ds) {
  masked_logits(q_head, k_head, mask, b, h, r0, rows, c0, cols, dim, tau, scratch);

  for (std::size_t c = 0; c < cols; ++c) {
    const T* vc = v_head.data() + (c0 + c) * dim;
    for (std::size_t d = 0; d < dim; ++d) v_t[d * cols + c] = vc[d];
  }

  for (std::size_t r = 0; r < rows; ++r) {
    T* p = scratch.s.data() + r * cols;
    const T m_hat = offset_of(m_row[r]);
    const T z = inverse_of(l_row[r]);
    for (std::size_t c = 0; c < cols; ++c) p[c] = std::exp(p[c] - m_hat) * z;

    T* dsr = ds.data() + r * cols;
    std::fill(dsr, dsr + cols, T(0));
    const T* dor = do_head.data() + (r0 + r) * dim;
    for (std::size_t d = 0; d < dim; ++d) {
      const T g = dor[d];
      const T* vtd = v_t.data() + d * cols;
      for (std::size_t c = 0; c < cols; ++c) dsr[c] += g * vtd[c];
    }
    for (std::size_t c = 0; c < cols; ++c) dsr[c] = p[c] * (dsr[c] - delta_row[r]);
  }
}

}  // namespace

template <typename T>
FlashOutputs<T> tiled_forward(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V, const TileMask& mask,
                              const TileSchedule& schedule, double tau, const BlockSpec& blocks) {
  const Extents e = check_inputs(Q, K, V, mask, schedule, blocks);
  tau = resolve_scale(tau, Q.shape().dim);
  FlashOutputs<T> out;
  out.O = Tensor4<T>(Q.shape(), Layout::kHeadMajor);
  out.M.assign(e.batch * e.heads * e.t_q, -std::numeric_limits<T>::infinity());
  out.L.assign(e.batch * e.heads * e.t_q, T(0));
  out.tiles_computed = schedule.cardinality();
  const T scale = static_cast<T>(tau);

  parallel_for(e.batch * e.heads * e.m_blocks, [&](std::size_t task) {
    const std::size_t i = task % e.m_blocks;
    const std::size_t bh = task / e.m_blocks;
    const std::size_t b = bh / e.heads;
    const std::size_t h = bh % e.heads;
    const std::size_t r0 = i * blocks.block_m;
    const std::size_t rows = std::min(blocks.block_m, e.t_q - r0);

    auto q_head = std::as_const(Q).head(b, h);
    auto k_head = std::as_const(K).head(b, h);
    auto v_head = std::as_const(V).head(b, h);
    SoftmaxState<T> state = init_state<T>(rows, e.dim);
    TileScratch<T> scratch(rows, blocks.block_n, e.dim);

    const TileRange range = schedule.at(b, h, i);
    for (std::size_t j = range.j_start; j < range.j_stop; ++j) {
      const std::size_t c0 = j * blocks.block_n;
      const std::size_t cols = std::min(blocks.block_n, e.t_kv - c0);
      masked_logits(q_head, k_head, mask, b, h, r0, rows, c0, cols, e.dim, scale, scratch);
      update_stats(state, std::span<T>(scratch.s.data(), rows * cols), cols, v_head.subspan(c0 * e.dim, cols * e.dim));
    }

    auto o_head = out.O.head(b, h);
    std::copy(state.o.begin(), state.o.end(), o_head.begin() + static_cast<std::ptrdiff_t>(r0 * e.dim));
    const std::size_t stat0 = bh * e.t_q + r0;
    std::copy(state.m.begin(), state.m.end(), out.M.begin() + static_cast<std::ptrdiff_t>(stat0));
    std::copy(state.l.begin(), state.l.end(), out.L.begin() + static_cast<std::ptrdiff_t>(stat0));
  });
  return out;
}

template <typename T>
Gradients<T> tiled_backward(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V,
                            const FlashOutputs<T>& outputs, const Tensor4<T>& dO, const TileMask& mask,
                            const TileSchedule& schedule, double tau, const BlockSpec& blocks) {
  const Extents e = check_inputs(Q, K, V, mask, schedule, blocks);
  tau = resolve_scale(tau, Q.shape().dim);
  if (outputs.O.shape() != Q.shape() || dO.shape() != Q.shape() || dO.layout() != Layout::kHeadMajor ||
      outputs.O.layout() != Layout::kHeadMajor) {
    throw ShapeError("O and dO must be head-major with Q's shape");
  }
  if (outputs.M.size() != e.batch * e.heads * e.t_q || outputs.L.size() != outputs.M.size()) {
    throw ShapeError("softmax statistics M/L have the wrong length");
  }
  const T scale = static_cast<T>(tau);

  // delta_i = sum_d dO_id * O_id
  std::vector<T> delta(e.batch * e.heads * e.t_q, T(0));
  {
    auto o = outputs.O.values();
    auto g = dO.values();
    for (std::size_t row = 0; row < delta.size(); ++row) {
      T acc = T(0);
      for (std::size_t d = 0; d < e.dim; ++d) acc += g[row * e.dim + d] * o[row * e.dim + d];
      delta[row] = acc;
    }
  }

  Gradients<T> grads{Tensor4<T>(Q.shape()), Tensor4<T>(K.shape()), Tensor4<T>(V.shape())};

  // dQ, one task per (b, h, query block).
  parallel_for(e.batch * e.heads * e.m_blocks, [&](std::size_t task) {
    const std::size_t i = task % e.m_blocks;
    const std::size_t bh = task / e.m_blocks;
    const std::size_t b = bh / e.heads;
    const std::size_t h = bh % e.heads;
    const std::size_t r0 = i * blocks.block_m;
    const std::size_t rows = std::min(blocks.block_m, e.t_q - r0);
    const std::size_t stat0 = bh * e.t_q + r0;

    auto k_head = std::as_const(K).head(b, h);
    TileScratch<T> scratch(rows, blocks.block_n, e.dim);
    std::vector<T> v_t(e.dim * blocks.block_n);
    std::vector<T> ds(rows * blocks.block_n);
    T* dq = grads.dQ.head(b, h).data() + r0 * e.dim;

    const TileRange range = schedule.at(b, h, i);
    for (std::size_t j = range.j_start; j < range.j_stop; ++j) {
      const std::size_t c0 = j * blocks.block_n;
      const std::size_t cols = std::min(blocks.block_n, e.t_kv - c0);
      tile_gradients(std::as_const(Q).head(b, h), k_head, std::as_const(V).head(b, h), dO.head(b, h),
                     outputs.M.data() + stat0, outputs.L.data() + stat0, delta.data() + stat0, mask, b, h, r0,
                     rows, c0, cols, e.dim, scale, scratch, v_t, ds);
      for (std::size_t r = 0; r < rows; ++r) {
        T* dqr = dq + r * e.dim;
        for (std::size_t c = 0; c < cols; ++c) {
          const T w = ds[r * cols + c] * scale;
          if (w == T(0)) continue;
          const T* kc = k_head.data() + (c0 + c) * e.dim;
          for (std::size_t d = 0; d < e.dim; ++d) dqr[d] += w * kc[d];
        }
      }
    }
  });

  // dK and dV, one task per (b, h, key block), over the query blocks whose
  // range contains it.
  parallel_for(e.batch * e.heads * e.n_blocks, [&](std::size_t task) {
    const std::size_t j = task % e.n_blocks;
    const std::size_t bh = task / e.n_blocks;
    const std::size_t b = bh / e.heads;
    const std::size_t h = bh % e.heads;
    const std::size_t c0 = j * blocks.block_n;
    const std::size_t cols = std::min(blocks.block_n, e.t_kv - c0);

    auto q_head = std::as_const(Q).head(b, h);
    auto do_head = dO.head(b, h);
    TileScratch<T> scratch(blocks.block_m, blocks.block_n, e.dim);
    std::vector<T> v_t(e.dim * blocks.block_n);
    std::vector<T> ds(blocks.block_m * blocks.block_n);
    T* dk = grads.dK.head(b, h).data() + c0 * e.dim;
    T* dv = grads.dV.head(b, h).data() + c0 * e.dim;

    for (std::size_t i = 0; i < e.m_blocks; ++i) {
      if (!schedule.at(b, h, i).contains(j)) continue;
      const std::size_t r0 = i * blocks.block_m;
      const std::size_t rows = std::min(blocks.block_m, e.t_q - r0);
      const std::size_t stat0 = bh * e.t_q + r0;
      tile_gradients(q_head, std::as_const(K).head(b, h), std::as_const(V).head(b, h), do_head,
                     outputs.M.data() + stat0, outputs.L.data() + stat0, delta.data() + stat0, mask, b, h, r0,
                     rows, c0, cols, e.dim, scale, scratch, v_t, ds);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* qr = q_head.data() + (r0 + r) * e.dim;
        const T* gr = do_head.data() + (r0 + r) * e.dim;
        for (std::size_t c = 0; c < cols; ++c) {
          const T p = scratch.s[r * cols + c];
          if (p == T(0)) continue;
          const T w = ds[r * cols + c] * scale;
          T* dkc = dk + c * e.dim;
          T* dvc = dv + c * e.dim;
          for (std::size_t d = 0; d < e.dim; ++d) {
            dvc[d] += p * gr[d];
            dkc[d] += w * qr[d];
          }
        }
      }
    }
  });

  return grads;
}

template FlashOutputs<float> tiled_forward(const Tensor4<float>&, const Tensor4<float>&, const Tensor4<float>&,
                                           const TileMask&, const TileSchedule&, double, const BlockSpec&);
template FlashOutputs<double> tiled_forward(const Tensor4<double>&, const Tensor4<double>&, const Tensor4<double>&,
                                            const TileMask&, const TileSchedule&, double, const BlockSpec&);
template Gradients<float> tiled_backward(const Tensor4<float>&, const Tensor4<float>&, const Tensor4<float>&,
                                         const FlashOutputs<float>&, const Tensor4<float>&, const TileMask&,
                                         const TileSchedule&, double, const BlockSpec&);
template Gradients<double> tiled_backward(const Tensor4<double>&, const Tensor4<double>&, const Tensor4<double>&,
                                          const FlashOutputs<double>&, const Tensor4<double>&, const TileMask&,
                                          const TileSchedule&, double, const BlockSpec&);

}  // namespace scfa
