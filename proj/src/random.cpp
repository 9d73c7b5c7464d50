#include "scfa/random.hpp"

#include <cmath>
#include <numbers>

namespace scfa {

double CounterRng::normal(std::uint64_t counter) const {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform(2 * counter);
  const double u2 = uniform(2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename T>
Tensor4<T> random_tensor(const Shape4& shape, std::uint64_t seed, Normal dist, Layout layout) {
  shape.validate();
  if (!(dist.stddev >= 0.0) || !std::isfinite(dist.mean) || !std::isfinite(dist.stddev)) {
    throw ParameterError("normal distribution needs finite mean and stddev >= 0");
  }
  Tensor4<T> out(shape, layout);
  for (std::size_t b = 0; b < shape.batch; ++b) {
    for (std::size_t h = 0; h < shape.heads; ++h) {
      const CounterRng rng(seed, b * shape.heads + h);
      for (std::size_t t = 0; t < shape.length; ++t) {
        auto row = out.row(b, h, t);
        for (std::size_t d = 0; d < shape.dim; ++d) {
          row[d] = static_cast<T>(dist.mean + dist.stddev * rng.normal(t * shape.dim + d));
        }
      }
    }
  }
  return out;
}

template Tensor4<float> random_tensor(const Shape4&, std::uint64_t, Normal, Layout);
template Tensor4<double> random_tensor(const Shape4&, std::uint64_t, Normal, Layout);

KeepTensor random_keep(std::size_t batch, std::size_t length, std::size_t heads, double drop_prob,
                       std::uint64_t seed) {
  if (!(drop_prob >= 0.0 && drop_prob <= 1.0)) throw ParameterError("drop probability must lie in [0, 1]");
  KeepTensor keep(batch, heads, length, Layout::kSeqMajor, 1);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const CounterRng rng = CounterRng(seed, b * heads + h).split(1);
      for (std::size_t t = 0; t < length; ++t) {
        keep.at(b, h, t) = rng.uniform(t) < drop_prob ? 0 : 1;
      }
    }
  }
  return keep;
}

BucketTensor random_buckets(std::size_t batch, std::size_t length, std::size_t heads,
                            std::int32_t num_buckets, std::uint64_t seed) {
  if (num_buckets < 1) throw ParameterError("bucket count must be >= 1");
  BucketTensor out{Grid3<std::int32_t>(batch, heads, length, Layout::kSeqMajor), num_buckets};
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const CounterRng rng = CounterRng(seed, b * heads + h).split(2);
      for (std::size_t t = 0; t < length; ++t) {
        const auto v = static_cast<std::int32_t>(rng.uniform(t) * num_buckets);
        out.values.at(b, h, t) = v < num_buckets ? v : num_buckets - 1;
      }
    }
  }
  return out;
}

}  // namespace scfa
