#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace scfa {

// Running statistics for one block of queries while key blocks stream past.
//   m: row max seen so far (-inf until a key is visible)
//   l: softmax denominator relative to max(m, 0 if m == -inf)
//   o: output rows, kept normalized after every update
template <typename T>
struct SoftmaxState {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<T> m;
  std::vector<T> l;
  std::vector<T> o;  // rows x dim

  std::span<const T> output_row(std::size_t r) const { return {o.data() + r * dim, dim}; }
};

template <typename T>
SoftmaxState<T> init_state(std::size_t rows, std::size_t dim);

// Folds one masked logit tile into the state.
//
// `qk` is rows x cols (row-major); masked entries must be exactly -inf. It is
// overwritten with the unnormalized probabilities. `v` is cols x dim.
//
// NaN avoidance: a running max of -inf is replaced by 0 before it is used as
// an exponent offset, and a reciprocal denominator of +inf (nothing visible
// yet) is replaced by 1, so fully masked rows stay exactly zero and can still
// pick up keys from later tiles.
template <typename T>
void update_stats(SoftmaxState<T>& state, std::span<T> qk, std::size_t cols, std::span<const T> v);

}  // namespace scfa
