#include "scfa/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "scfa/error.hpp"

namespace scfa {
namespace {

void check_grid_pair(const IndexTensor& q, const IndexTensor& k) {
  if (q.layout() != Layout::kHeadMajor || k.layout() != Layout::kHeadMajor) {
    throw ShapeError("index grids must be head-major");
  }
  if (q.batch() != k.batch() || q.heads() != k.heads()) {
    throw ShapeError("query and key indices disagree on (B, H)");
  }
}

template <typename T>
void check_operands(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V, const MaskSpec& mask) {
  const Shape4& q = Q.shape();
  const Shape4& k = K.shape();
  if (k != V.shape()) throw ShapeError("K and V shapes differ");
  if (q.batch != k.batch || q.heads != k.heads || q.dim != k.dim) {
    throw ShapeError("Q " + q.to_string() + " incompatible with K " + k.to_string());
  }
  if (Q.layout() != K.layout() || K.layout() != V.layout()) throw ShapeError("Q, K, V layouts differ");
  if (mask.batch() != q.batch || mask.heads() != q.heads || mask.t_q() != q.length || mask.t_kv() != k.length) {
    throw ShapeError("mask does not match attention operands");
  }
}

// Exact masked attention for one (b, h); returns <O, dO> when `upstream` is
// non-empty and writes O when `out` is non-empty.
template <typename T>
double slice_attention(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V, const MaskSpec& mask,
                       double tau, std::size_t b, std::size_t h, std::span<T> out_rows,
                       const Tensor4<double>* upstream) {
  const std::size_t t_q = Q.shape().length;
  const std::size_t t_kv = K.shape().length;
  const std::size_t dim = Q.shape().dim;
  std::vector<double> logits(t_kv);
  std::vector<double> acc(dim);
  double loss = 0.0;

  for (std::size_t i = 0; i < t_q; ++i) {
    auto q = Q.row(b, h, i);
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < t_kv; ++j) {
      if (!mask.allowed(b, h, i, j)) continue;
      auto k = K.row(b, h, j);
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += static_cast<double>(q[d]) * static_cast<double>(k[d]);
      logits[j] = tau * dot;
      row_max = std::max(row_max, logits[j]);
    }

    std::fill(acc.begin(), acc.end(), 0.0);
    if (row_max != -std::numeric_limits<double>::infinity()) {
      double denom = 0.0;
      for (std::size_t j = 0; j < t_kv; ++j) {
        if (!mask.allowed(b, h, i, j)) continue;
        const double w = std::exp(logits[j] - row_max);
        denom += w;
        auto v = V.row(b, h, j);
        for (std::size_t d = 0; d < dim; ++d) acc[d] += w * static_cast<double>(v[d]);
      }
      for (double& a : acc) a /= denom;
    }

    if (!out_rows.empty()) {
      for (std::size_t d = 0; d < dim; ++d) out_rows[i * dim + d] = static_cast<T>(acc[d]);
    }
    if (upstream != nullptr) {
      auto g = upstream->row(b, h, i);
      for (std::size_t d = 0; d < dim; ++d) loss += acc[d] * g[d];
    }
  }
  return loss;
}

}  // namespace

MaskSpec::MaskSpec(std::size_t batch, std::size_t heads, std::size_t t_q, std::size_t t_kv, bool fill)
    : batch_(batch), heads_(heads), t_q_(t_q), t_kv_(t_kv), bits_(batch * heads * t_q * t_kv, fill ? 1 : 0) {
  if (batch == 0 || heads == 0 || t_q == 0 || t_kv == 0) throw ShapeError("mask with a zero extent");
}

MaskSpec MaskSpec::causal(std::size_t batch, std::size_t heads, std::size_t t, bool exclude_self) {
  const IndexTensor idx = iota_index(batch, heads, t);
  return build_mask(idx, idx, exclude_self);
}

MaskSpec build_mask(const IndexTensor& q_idx, const IndexTensor& k_idx, bool exclude_self) {
  check_grid_pair(q_idx, k_idx);
  MaskSpec mask(q_idx.batch(), q_idx.heads(), q_idx.length(), k_idx.length());
  for (std::size_t b = 0; b < q_idx.batch(); ++b)
    for (std::size_t h = 0; h < q_idx.heads(); ++h)
      for (std::size_t i = 0; i < q_idx.length(); ++i)
        for (std::size_t j = 0; j < k_idx.length(); ++j) {
          const auto qi = q_idx.at(b, h, i);
          const auto kj = k_idx.at(b, h, j);
          mask.set(b, h, i, j, exclude_self ? qi > kj : qi >= kj);
        }
  return mask;
}

MaskSpec build_mask(const IndexTensor& q_idx, const IndexTensor& k_idx, const Grid3<std::int32_t>& q_hash,
                    const Grid3<std::int32_t>& k_hash, bool exclude_self) {
  MaskSpec mask = build_mask(q_idx, k_idx, exclude_self);
  if (q_hash.layout() != Layout::kHeadMajor || k_hash.layout() != Layout::kHeadMajor) {
    throw ShapeError("hash grids must be head-major");
  }
  if (q_hash.batch() != q_idx.batch() || q_hash.heads() != q_idx.heads() || q_hash.length() != q_idx.length() ||
      k_hash.batch() != k_idx.batch() || k_hash.heads() != k_idx.heads() || k_hash.length() != k_idx.length()) {
    throw ShapeError("hash grids do not match index grids");
  }
  for (std::size_t b = 0; b < q_idx.batch(); ++b)
    for (std::size_t h = 0; h < q_idx.heads(); ++h)
      for (std::size_t i = 0; i < q_idx.length(); ++i)
        for (std::size_t j = 0; j < k_idx.length(); ++j) {
          if (q_hash.at(b, h, i) != k_hash.at(b, h, j)) mask.set(b, h, i, j, false);
        }
  return mask;
}

template <typename T>
Tensor4<T> naive_attention(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V, const MaskSpec& mask,
                           double tau) {
  check_operands(Q, K, V, mask);
  tau = resolve_scale(tau, Q.shape().dim);
  const Shape4& s = Q.shape();
  Tensor4<T> out(s, Layout::kHeadMajor);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h) slice_attention(Q, K, V, mask, tau, b, h, out.head(b, h), nullptr);
  return to_layout(out, Q.layout());
}

template Tensor4<float> naive_attention(const Tensor4<float>&, const Tensor4<float>&, const Tensor4<float>&,
                                        const MaskSpec&, double);
template Tensor4<double> naive_attention(const Tensor4<double>&, const Tensor4<double>&, const Tensor4<double>&,
                                         const MaskSpec&, double);

std::vector<double> naive_weights(const Tensor4<double>& Q, const Tensor4<double>& K, const MaskSpec& mask,
                                  double tau, std::size_t b, std::size_t h) {
  check_operands(Q, K, K, mask);
  tau = resolve_scale(tau, Q.shape().dim);
  const std::size_t t_q = Q.shape().length;
  const std::size_t t_kv = K.shape().length;
  std::vector<double> w(t_q * t_kv, 0.0);
  for (std::size_t i = 0; i < t_q; ++i) {
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < t_kv; ++j) {
      if (!mask.allowed(b, h, i, j)) continue;
      double dot = 0.0;
      auto q = Q.row(b, h, i);
      auto k = K.row(b, h, j);
      for (std::size_t d = 0; d < q.size(); ++d) dot += q[d] * k[d];
      w[i * t_kv + j] = tau * dot;
      row_max = std::max(row_max, tau * dot);
    }
    if (row_max == -std::numeric_limits<double>::infinity()) continue;
    double denom = 0.0;
    for (std::size_t j = 0; j < t_kv; ++j) {
      if (!mask.allowed(b, h, i, j)) continue;
      w[i * t_kv + j] = std::exp(w[i * t_kv + j] - row_max);
      denom += w[i * t_kv + j];
    }
    for (std::size_t j = 0; j < t_kv; ++j) w[i * t_kv + j] /= denom;
  }
  return w;
}

Gradients<double> finite_diff_gradient(const Tensor4<double>& Q, const Tensor4<double>& K,
                                       const Tensor4<double>& V, const MaskSpec& mask, const Tensor4<double>& dO,
                                       double tau, double eps) {
  check_operands(Q, K, V, mask);
  if (dO.shape() != Q.shape() || dO.layout() != Q.layout()) throw ShapeError("dO must match Q");
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw ParameterError("finite-difference step must lie in [1e-6, 1e-3]");
  tau = resolve_scale(tau, Q.shape().dim);

  Tensor4<double> q = Q;
  Tensor4<double> k = K;
  Tensor4<double> v = V;
  Gradients<double> g{Tensor4<double>(Q.shape(), Q.layout()), Tensor4<double>(K.shape(), K.layout()),
                      Tensor4<double>(V.shape(), V.layout())};

  const Shape4& s = Q.shape();
  auto probe = [&](Tensor4<double>& x, Tensor4<double>& grad, std::size_t b, std::size_t h) {
    for (std::size_t t = 0; t < x.shape().length; ++t) {
      for (std::size_t d = 0; d < s.dim; ++d) {
        double& entry = x.at(b, h, t, d);
        const double saved = entry;
        entry = saved + eps;
        const double up = slice_attention<double>(q, k, v, mask, tau, b, h, {}, &dO);
        entry = saved - eps;
        const double down = slice_attention<double>(q, k, v, mask, tau, b, h, {}, &dO);
        entry = saved;
        const double slope = (up - down) / (2.0 * eps);
        if (!std::isfinite(slope)) throw NumericError("non-finite finite-difference slope");
        grad.at(b, h, t, d) = slope;
      }
    }
  };

  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < s.heads; ++h) {
      probe(q, g.dQ, b, h);
      probe(k, g.dK, b, h);
      probe(v, g.dV, b, h);
    }
  }
  return g;
}

template <typename A, typename R>
double max_rel_error(const Tensor4<A>& a, const Tensor4<R>& ref) {
  if (a.shape() != ref.shape()) throw ShapeError("error metric needs equal shapes");
  const Shape4& s = a.shape();
  double worst = 0.0;
  double scale = 0.0;
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h)
      for (std::size_t t = 0; t < s.length; ++t)
        for (std::size_t d = 0; d < s.dim; ++d) {
          const double x = static_cast<double>(a.at(b, h, t, d));
          const double r = static_cast<double>(ref.at(b, h, t, d));
          if (!std::isfinite(x)) return std::numeric_limits<double>::infinity();
          worst = std::max(worst, std::abs(x - r));
          scale = std::max(scale, std::abs(r));
        }
  return scale > 0.0 ? worst / scale : worst;
}

template double max_rel_error(const Tensor4<float>&, const Tensor4<float>&);
template double max_rel_error(const Tensor4<float>&, const Tensor4<double>&);
template double max_rel_error(const Tensor4<double>&, const Tensor4<double>&);
template double max_rel_error(const Tensor4<double>&, const Tensor4<float>&);

}  // namespace scfa
