#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scfa/attention.hpp"
#include "scfa/oracle.hpp"
#include "scfa/tensor.hpp"

namespace scfa {

enum class Method : std::uint8_t { kDense, kNaive, kQk, kHash, kReformer };

std::string_view method_name(Method m);
Method parse_method(std::string_view name);  // ParameterError on unknown names

struct BenchConfig {
  Method method = Method::kDense;
  std::size_t batch = 4;
  std::size_t heads = 48;
  std::size_t length = 1024;
  std::size_t dim = 64;
  BlockSpec blocks{};
  std::int32_t num_buckets = 16;
  double keep_prob = 0.0;  // probability that a (position, head) is dropped
  std::size_t chunk = 64;
  std::uint64_t seed = 0;
  int precision = 32;
  std::size_t reps = 3;
  bool exclude_self = true;

  Shape4 shape() const { return {batch, heads, length, dim}; }
  bool uses_buckets() const { return method == Method::kHash || method == Method::kReformer; }

  // Throws ParameterError naming the violated constraint.
  void validate() const;
};

// One CSV row. Cells that do not apply to the method are left empty.
struct BenchRecord {
  BenchConfig config;
  std::optional<double> pre_ms, fwd_ms, bwd_ms, post_ms;
  std::optional<std::uint64_t> tiles;
  std::optional<double> max_rel_err;
  std::optional<double> coverage;
};

std::string csv_header();
std::string csv_row(const BenchRecord& record);
void write_csv(std::ostream& out, const std::vector<BenchRecord>& records);
// Parses rows written by write_csv; throws FormatError on a bad header or row.
std::vector<BenchRecord> read_csv(std::istream& in);

// Inputs for one method, boundary layout (B, T, H, ...).
template <typename T>
struct MethodInputs {
  Tensor4<T> Q, K, V;
  KeepTensor q_keep, k_keep;
  BucketTensor q_hash, k_hash;
};

enum class HashSource : std::uint8_t {
  kUniform,  // independent uniform buckets for queries and keys
  kLsh,      // shared-QK: K = normalize(Q), one angular LSH code for both
};

template <typename T>
MethodInputs<T> make_inputs(const BenchConfig& config, HashSource hashes = HashSource::kUniform);

// Mask over original positions that the method is defined to compute,
// head-major. Used to drive the oracle.
template <typename T>
MaskSpec method_mask(const BenchConfig& config, const MethodInputs<T>& in);

// End-to-end forward, output in (B, T, H, D).
template <typename T>
Tensor4<T> method_forward(const BenchConfig& config, const MethodInputs<T>& in, RunStats* stats = nullptr);

// Gradients of <O, dO> with respect to the boundary Q, K, V, all (B, T, H, D).
// Not defined for the naive method.
template <typename T>
Gradients<T> method_gradients(const BenchConfig& config, const MethodInputs<T>& in, const Tensor4<T>& dO);

// Tiles per forward pass, from the schedule alone.
template <typename T>
std::uint64_t method_tiles(const BenchConfig& config, const MethodInputs<T>& in);

struct Check {
  std::string name;
  bool applicable = true;
  bool passed = true;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyReport {
  BenchConfig config;
  std::vector<Check> checks;

  bool passed() const;
  std::optional<double> oracle_error() const;
  std::optional<double> coverage() const;
};

// Oracle equivalence, gradient, NaN-safety and coverage suites.
VerifyReport run_verify(const BenchConfig& config);

// Timed forward + backward with medians over config.reps repetitions after
// one discarded warm-up repetition. Tensor generation is not timed.
BenchRecord run_bench(const BenchConfig& config);

// One row per seed in [config.seed, config.seed + seeds), uniform shared
// hashes, coverage column filled.
std::vector<BenchRecord> run_coverage(const BenchConfig& config, std::size_t seeds);

// ceil(T / chunk) rounded up to an even count, at least 2.
std::int32_t auto_buckets(std::size_t length, std::size_t chunk);

}  // namespace scfa
