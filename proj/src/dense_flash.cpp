#include "scfa/dense_flash.hpp"

#include <algorithm>

#include "scfa/error.hpp"
#include "scfa/tiled_kernel.hpp"

namespace scfa {
namespace {

std::size_t causal_stop(std::size_t i, std::size_t length, const BlockSpec& blocks) {
  const std::size_t last_query = std::min((i + 1) * blocks.block_m, length) - 1;
  return std::min(last_query / blocks.block_n + 1, blocks.key_blocks(length));
}

template <typename T>
void check_square(const Tensor4<T>& Q, const Tensor4<T>& K) {
  if (Q.shape() != K.shape()) {
    throw ShapeError("causal attention needs T_Q == T_KV; got Q " + Q.shape().to_string() + ", K " +
                     K.shape().to_string());
  }
}

}  // namespace

TileSchedule dense_schedule(std::size_t batch, std::size_t heads, std::size_t length, const BlockSpec& blocks) {
  blocks.validate();
  if (length == 0) throw ShapeError("sequence length must be >= 1");
  TileSchedule s{batch, heads, blocks.query_blocks(length), blocks.key_blocks(length), {}};
  s.ranges.resize(batch * heads * s.query_blocks);
  for (std::size_t bh = 0; bh < batch * heads; ++bh)
    for (std::size_t i = 0; i < s.query_blocks; ++i)
      s.ranges[bh * s.query_blocks + i] = TileRange{0, causal_stop(i, length, blocks)};
  return s;
}

std::uint64_t dense_tile_count(std::size_t length, const BlockSpec& blocks) {
  blocks.validate();
  if (length == 0) throw ShapeError("sequence length must be >= 1");
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < blocks.query_blocks(length); ++i) n += causal_stop(i, length, blocks);
  return n;
}

template <typename T>
FlashOutputs<T> flash_forward(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V, double tau,
                              const BlockSpec& blocks) {
  check_square(Q, K);
  const Shape4& s = Q.shape();
  const IndexTensor idx = iota_index(s.batch, s.heads, s.length);
  const TileMask mask{&idx, &idx};
  return tiled_forward(Q, K, V, mask, dense_schedule(s.batch, s.heads, s.length, blocks), tau, blocks);
}

template <typename T>
Gradients<T> flash_backward(const Tensor4<T>& Q, const Tensor4<T>& K, const Tensor4<T>& V,
                            const FlashOutputs<T>& outputs, const Tensor4<T>& dO, double tau,
                            const BlockSpec& blocks) {
  check_square(Q, K);
  const Shape4& s = Q.shape();
  const IndexTensor idx = iota_index(s.batch, s.heads, s.length);
  const TileMask mask{&idx, &idx};
  return tiled_backward(Q, K, V, outputs, dO, mask, dense_schedule(s.batch, s.heads, s.length, blocks), tau,
                        blocks);
}

template FlashOutputs<float> flash_forward(const Tensor4<float>&, const Tensor4<float>&, const Tensor4<float>&,
                                           double, const BlockSpec&);
template FlashOutputs<double> flash_forward(const Tensor4<double>&, const Tensor4<double>&, const Tensor4<double>&,
                                            double, const BlockSpec&);
template Gradients<float> flash_backward(const Tensor4<float>&, const Tensor4<float>&, const Tensor4<float>&,
                                         const FlashOutputs<float>&, const Tensor4<float>&, double,
                                         const BlockSpec&);
template Gradients<double> flash_backward(const Tensor4<double>&, const Tensor4<double>&, const Tensor4<double>&,
                                          const FlashOutputs<double>&, const Tensor4<double>&, double,
                                          const BlockSpec&);

}  // namespace scfa
