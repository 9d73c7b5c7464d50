#include "scfa/online_softmax.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "scfa/error.hpp"

namespace scfa {

template <typename T>
SoftmaxState<T> init_state(std::size_t rows, std::size_t dim) {
  if (rows == 0 || dim == 0) throw ParameterError("softmax state needs rows >= 1 and dim >= 1");
  SoftmaxState<T> s;
  s.rows = rows;
  s.dim = dim;
  s.m.assign(rows, -std::numeric_limits<T>::infinity());
  s.l.assign(rows, T(0));
  s.o.assign(rows * dim, T(0));
  return s;
}

template <typename T>
void update_stats(SoftmaxState<T>& state, std::span<T> qk, std::size_t cols, std::span<const T> v) {
  const std::size_t rows = state.rows;
  const std::size_t dim = state.dim;
  if (qk.size() != rows * cols) throw ShapeError("logit tile does not match state rows");
  if (v.size() != cols * dim) throw ShapeError("value block does not match tile columns");
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();

  for (std::size_t r = 0; r < rows; ++r) {
    T* p = qk.data() + r * cols;

    T row_max = kNegInf;
    for (std::size_t c = 0; c < cols; ++c) {
      if (std::isnan(p[c]) || p[c] == std::numeric_limits<T>::infinity()) {
        throw NumericError("logit tile holds NaN or +inf");
      }
      row_max = std::max(row_max, p[c]);
    }

    const T m_old = state.m[r];
    const T m_new = std::max(row_max, m_old);
    const T m_hat = m_new == kNegInf ? T(0) : m_new;

    T l_block = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      p[c] = std::exp(p[c] - m_hat);
      l_block += p[c];
    }

    // exp(-inf - m_hat) is exactly 0, so a fresh row carries nothing over.
    const T l_carried = std::exp(m_old - m_hat) * state.l[r];
    const T l_new = l_carried + l_block;
    if (!std::isfinite(l_new)) throw NumericError("softmax denominator overflowed");
    T z = T(1) / l_new;
    if (z == std::numeric_limits<T>::infinity()) z = T(1);

    T* o = state.o.data() + r * dim;
    const T keep = l_carried * z;
    for (std::size_t d = 0; d < dim; ++d) o[d] *= keep;
    for (std::size_t c = 0; c < cols; ++c) {
      const T w = p[c] * z;
      if (w == T(0)) continue;
      const T* vc = v.data() + c * dim;
      for (std::size_t d = 0; d < dim; ++d) o[d] += w * vc[d];
    }

    state.m[r] = m_new;
    state.l[r] = l_new;
  }
}

template SoftmaxState<float> init_state(std::size_t, std::size_t);
template SoftmaxState<double> init_state(std::size_t, std::size_t);
template void update_stats(SoftmaxState<float>&, std::span<float>, std::size_t, std::span<const float>);
template void update_stats(SoftmaxState<double>&, std::span<double>, std::size_t, std::span<const double>);

}  // namespace scfa
