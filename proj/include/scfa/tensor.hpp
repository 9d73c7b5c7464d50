#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scfa/error.hpp"

namespace scfa {

// Memory order of the (head, position) axes.
//   kHeadMajor: (B, H, T, D), the order every kernel works in.
//   kSeqMajor:  (B, T, H, D), the order end-to-end entry points accept.
enum class Layout : std::uint8_t { kHeadMajor, kSeqMajor };

struct Shape4 {
  std::size_t batch = 1;
  std::size_t heads = 1;
  std::size_t length = 1;
  std::size_t dim = 1;

  std::size_t numel() const { return batch * heads * length * dim; }
  std::size_t slices() const { return batch * heads; }

  void validate() const {
    if (batch == 0 || heads == 0 || length == 0 || dim == 0) {
      throw ShapeError("shape " + to_string() + " has a zero extent");
    }
  }

  std::string to_string() const {
    return "(" + std::to_string(batch) + "," + std::to_string(heads) + "," +
           std::to_string(length) + "," + std::to_string(dim) + ")";
  }

  friend bool operator==(const Shape4&, const Shape4&) = default;
};

// Query/key tiling. Block counts are ceil(T / block).
struct BlockSpec {
  std::size_t block_m = 64;
  std::size_t block_n = 64;

  void validate() const {
    if (block_m == 0 || block_n == 0) {
      throw ParameterError("block sizes must be >= 1");
    }
  }
  std::size_t query_blocks(std::size_t t_q) const { return (t_q + block_m - 1) / block_m; }
  std::size_t key_blocks(std::size_t t_kv) const { return (t_kv + block_n - 1) / block_n; }
};

// Softmax scale; zero requests the 1/sqrt(D) default. Every operation that
// takes tau resolves it through here.
inline double resolve_scale(double tau, std::size_t dim) {
  if (tau > 0.0) return tau;
  if (std::isnan(tau) || tau < 0.0) throw ParameterError("softmax scale must be > 0");
  return 1.0 / std::sqrt(static_cast<double>(dim));
}

// Dense 4-D floating point tensor with a contiguous buffer.
template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;

  explicit Tensor4(Shape4 shape, Layout layout = Layout::kHeadMajor)
      : shape_(shape), layout_(layout) {
    shape_.validate();
    data_.assign(shape_.numel(), T(0));
  }

  Tensor4(Shape4 shape, std::vector<T> data, Layout layout = Layout::kHeadMajor)
      : shape_(shape), layout_(layout), data_(std::move(data)) {
    shape_.validate();
    if (data_.size() != shape_.numel()) {
      throw ShapeError("buffer holds " + std::to_string(data_.size()) +
                       " values, shape " + shape_.to_string() + " needs " +
                       std::to_string(shape_.numel()));
    }
    for (T v : data_) {
      if (!std::isfinite(v)) throw NumericError("tensor constructed with a non-finite value");
    }
  }

  const Shape4& shape() const { return shape_; }
  Layout layout() const { return layout_; }
  bool empty() const { return data_.empty(); }

  std::size_t offset(std::size_t b, std::size_t h, std::size_t t, std::size_t d) const {
    if (layout_ == Layout::kHeadMajor) {
      return ((b * shape_.heads + h) * shape_.length + t) * shape_.dim + d;
    }
    return ((b * shape_.length + t) * shape_.heads + h) * shape_.dim + d;
  }

  T& at(std::size_t b, std::size_t h, std::size_t t, std::size_t d) { return data_[offset(b, h, t, d)]; }
  const T& at(std::size_t b, std::size_t h, std::size_t t, std::size_t d) const {
    return data_[offset(b, h, t, d)];
  }

  // One D-vector. Contiguous in either layout.
  std::span<T> row(std::size_t b, std::size_t h, std::size_t t) {
    return {data_.data() + offset(b, h, t, 0), shape_.dim};
  }
  std::span<const T> row(std::size_t b, std::size_t h, std::size_t t) const {
    return {data_.data() + offset(b, h, t, 0), shape_.dim};
  }

  // The T x D matrix of one (b, h) pair; head-major only.
  std::span<T> head(std::size_t b, std::size_t h) {
    require_head_major();
    return {data_.data() + offset(b, h, 0, 0), shape_.length * shape_.dim};
  }
  std::span<const T> head(std::size_t b, std::size_t h) const {
    require_head_major();
    return {data_.data() + offset(b, h, 0, 0), shape_.length * shape_.dim};
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  friend bool operator==(const Tensor4& a, const Tensor4& b) {
    return a.shape_ == b.shape_ && a.layout_ == b.layout_ && a.data_ == b.data_;
  }

 private:
  void require_head_major() const {
    if (layout_ != Layout::kHeadMajor) throw ShapeError("head slice requires head-major layout");
  }

  Shape4 shape_{};
  Layout layout_ = Layout::kHeadMajor;
  std::vector<T> data_;
};

// Per-position integer data (indices, buckets, keep flags) over (B, H, T).
template <typename T>
class Grid3 {
 public:
  Grid3() = default;

  Grid3(std::size_t batch, std::size_t heads, std::size_t length, Layout layout, T fill = T{})
      : batch_(batch), heads_(heads), length_(length), layout_(layout),
        data_(batch * heads * length, fill) {
    if (batch == 0 || heads == 0 || length == 0) throw ShapeError("grid with a zero extent");
  }

  std::size_t batch() const { return batch_; }
  std::size_t heads() const { return heads_; }
  std::size_t length() const { return length_; }
  Layout layout() const { return layout_; }

  std::size_t offset(std::size_t b, std::size_t h, std::size_t t) const {
    if (layout_ == Layout::kHeadMajor) return (b * heads_ + h) * length_ + t;
    return (b * length_ + t) * heads_ + h;
  }
  T& at(std::size_t b, std::size_t h, std::size_t t) { return data_[offset(b, h, t)]; }
  const T& at(std::size_t b, std::size_t h, std::size_t t) const { return data_[offset(b, h, t)]; }

  std::span<T> head(std::size_t b, std::size_t h) {
    require_head_major();
    return {data_.data() + offset(b, h, 0), length_};
  }
  std::span<const T> head(std::size_t b, std::size_t h) const {
    require_head_major();
    return {data_.data() + offset(b, h, 0), length_};
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  friend bool operator==(const Grid3&, const Grid3&) = default;

 private:
  void require_head_major() const {
    if (layout_ != Layout::kHeadMajor) throw ShapeError("head slice requires head-major layout");
  }

  std::size_t batch_ = 0;
  std::size_t heads_ = 0;
  std::size_t length_ = 0;
  Layout layout_ = Layout::kHeadMajor;
  std::vector<T> data_;
};

using IndexTensor = Grid3<std::int64_t>;
using KeepTensor = Grid3<std::uint8_t>;

struct BucketTensor {
  Grid3<std::int32_t> values;
  std::int32_t num_buckets = 1;
};

template <typename T>
Tensor4<T> to_layout(const Tensor4<T>& x, Layout target) {
  if (x.layout() == target) return x;
  const Shape4& s = x.shape();
  Tensor4<T> out(s, target);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h)
      for (std::size_t t = 0; t < s.length; ++t) {
        auto src = x.row(b, h, t);
        auto dst = out.row(b, h, t);
        std::copy(src.begin(), src.end(), dst.begin());
      }
  return out;
}

template <typename T>
Grid3<T> to_layout(const Grid3<T>& x, Layout target) {
  if (x.layout() == target) return x;
  Grid3<T> out(x.batch(), x.heads(), x.length(), target);
  for (std::size_t b = 0; b < x.batch(); ++b)
    for (std::size_t h = 0; h < x.heads(); ++h)
      for (std::size_t t = 0; t < x.length(); ++t) out.at(b, h, t) = x.at(b, h, t);
  return out;
}

template <typename To, typename From>
Tensor4<To> cast(const Tensor4<From>& x) {
  Tensor4<To> out(x.shape(), x.layout());
  auto src = x.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

// 0, 1, ..., T-1 for every (b, h), head-major.
inline IndexTensor iota_index(std::size_t batch, std::size_t heads, std::size_t length) {
  IndexTensor idx(batch, heads, length, Layout::kHeadMajor);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < length; ++t) idx.at(b, h, t) = static_cast<std::int64_t>(t);
  return idx;
}

}  // namespace scfa
