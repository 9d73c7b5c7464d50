#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "scfa/attention.hpp"
#include "scfa/tensor.hpp"

namespace scfa {

// allowed(b, h, i, j) == true when key j is visible to query i.
class MaskSpec {
 public:
  MaskSpec(std::size_t batch, std::size_t heads, std::size_t t_q, std::size_t t_kv, bool fill = false);

  std::size_t batch() const { return batch_; }
  std::size_t heads() const { return heads_; }
  std::size_t t_q() const { return t_q_; }
  std::size_t t_kv() const { return t_kv_; }

  bool allowed(std::size_t b, std::size_t h, std::size_t i, std::size_t j) const {
    return bits_[index(b, h, i, j)] != 0;
  }
  void set(std::size_t b, std::size_t h, std::size_t i, std::size_t j, bool v) {
    bits_[index(b, h, i, j)] = v ? 1 : 0;
  }
  // T_Q x T_KV row-major slice of one (b, h).
  std::span<const std::uint8_t> slice(std::size_t b, std::size_t h) const {
    return {bits_.data() + index(b, h, 0, 0), t_q_ * t_kv_};
  }

  static MaskSpec causal(std::size_t batch, std::size_t heads, std::size_t t, bool exclude_self = false);

 private:
  std::size_t index(std::size_t b, std::size_t h, std::size_t i, std::size_t j) const {
    return ((b * heads_ + h) * t_q_ + i) * t_kv_ + j;
  }

  std::size_t batch_, heads_, t_q_, t_kv_;
  std::vector<std::uint8_t> bits_;
};

// Head-major index grids. allowed[i][j] <=> q_idx[i] >= k_idx[j] (> when
// exclude_self), and q_hash[i] == k_hash[j] when hashes are given.
MaskSpec build_mask(const IndexTensor& q_idx, const IndexTensor& k_idx, bool exclude_self = false);
MaskSpec build_mask(const IndexTensor& q_idx, const IndexTensor& k_idx, const Grid3<std::int32_t>& q_hash,
                    const Grid3<std::int32_t>& k_hash, bool exclude_self = false);

// softmax(tau * Q K^T) V over allowed keys, accumulated in double. Rows with
// no allowed key are zero. Inputs must share a layout; output uses it too.
template <typename T>
Tensor4<T> naive_attention(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V, const MaskSpec& mask,
                           double tau);

// Row-softmax weights of one (b, h): T_Q x T_KV row-major, stranded rows zero.
std::vector<double> naive_weights(const Tensor4<double>& Q, const Tensor4<double>& K, const MaskSpec& mask,
                                  double tau, std::size_t b, std::size_t h);

// Central differences of <O, dO> with respect to every entry of Q, K and V.
Gradients<double> finite_diff_gradient(const Tensor4<double>& Q, const Tensor4<double>& K,
                                       const Tensor4<double>& V, const MaskSpec& mask, const Tensor4<double>& dO,
                                       double tau, double eps = 1e-5);

// max |a - ref| / max |ref|, falling back to the absolute error when ref is
// identically zero. Both tensors must have the same shape.
template <typename A, typename R>
double max_rel_error(const Tensor4<A>& a, const Tensor4<R>& ref);

}  // namespace scfa
