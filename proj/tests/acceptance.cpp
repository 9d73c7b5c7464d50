// One pass/fail line per acceptance criterion; exit status 1 if any fails.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "scfa/bench.hpp"
#include "scfa/dense_flash.hpp"
#include "scfa/hash_sparse.hpp"
#include "scfa/oracle.hpp"
#include "scfa/parallel.hpp"
#include "scfa/qk_sparse.hpp"
#include "scfa/random.hpp"
#include "scfa/reformer.hpp"
#include "scfa/timer.hpp"
#include "support.hpp"

using namespace scfa;

namespace {

using Visible = testing::Visible;

struct Outcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

MaskSpec mask_from(std::size_t batch, std::size_t heads, std::size_t t, const Visible& visible) {
  MaskSpec m(batch, heads, t, t);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j <= i; ++j) m.set(b, h, i, j, visible(b, h, i, j));
  return m;
}

Visible causal() {
  return [](std::size_t, std::size_t, std::size_t i, std::size_t j) { return j <= i; };
}

Visible kept(const KeepTensor& q_keep, const KeepTensor& k_keep) {
  return [&q_keep, &k_keep](std::size_t b, std::size_t h, std::size_t i, std::size_t j) {
    return j <= i && q_keep.at(b, h, i) != 0 && k_keep.at(b, h, j) != 0;
  };
}

Visible same_bucket(const BucketTensor& q_hash, const BucketTensor& k_hash, bool exclude_self) {
  return [&q_hash, &k_hash, exclude_self](std::size_t b, std::size_t h, std::size_t i, std::size_t j) {
    return (exclude_self ? j < i : j <= i) && q_hash.values.at(b, h, i) == k_hash.values.at(b, h, j);
  };
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::uint64_t seed_of(std::uint64_t base, std::uint64_t n) { return CounterRng(base, n).bits(0); }

// ---------------------------------------------------------------------------

enum class Variant { kDense, kQk0, kQk3, kQk7, kHash1, kHash4, kHash16 };
constexpr Variant kVariants[] = {Variant::kDense, Variant::kQk0,   Variant::kQk3,  Variant::kQk7,
                                 Variant::kHash1, Variant::kHash4, Variant::kHash16};

// Forward error of one variant against the naive oracle on an independently
// built mask, computed at the precision of T.
template <typename T>
double oracle_error(Variant variant, std::size_t t, std::size_t dim, const BlockSpec& blocks, std::uint64_t seed) {
  const std::size_t batch = 1, heads = 2;
  const Shape4 s{batch, heads, t, dim};
  const auto q = random_tensor<T>(s, seed_of(seed, 0), {}, Layout::kSeqMajor);
  const auto k = random_tensor<T>(s, seed_of(seed, 1), {}, Layout::kSeqMajor);
  const auto v = random_tensor<T>(s, seed_of(seed, 2), {}, Layout::kSeqMajor);
  const auto qd = cast<double>(q), kd = cast<double>(k), vd = cast<double>(v);

  Tensor4<T> out;
  MaskSpec mask(batch, heads, t, t);
  switch (variant) {
    case Variant::kDense: {
      const auto y = flash_forward(to_layout(q, Layout::kHeadMajor), to_layout(k, Layout::kHeadMajor),
                                   to_layout(v, Layout::kHeadMajor), 0.0, blocks);
      out = to_layout(y.O, Layout::kSeqMajor);
      mask = mask_from(batch, heads, t, causal());
      break;
    }
    case Variant::kQk0:
    case Variant::kQk3:
    case Variant::kQk7: {
      const double drop = variant == Variant::kQk0 ? 0.0 : variant == Variant::kQk3 ? 0.3 : 0.7;
      const auto q_keep = random_keep(batch, t, heads, drop, seed_of(seed, 3));
      const auto k_keep = random_keep(batch, t, heads, drop, seed_of(seed, 4));
      out = qk_sparse_attention(q, k, v, q_keep, k_keep, 0.0, blocks);
      mask = mask_from(batch, heads, t, kept(q_keep, k_keep));
      break;
    }
    case Variant::kHash1:
    case Variant::kHash4:
    case Variant::kHash16: {
      const std::int32_t nb = variant == Variant::kHash1 ? 1 : variant == Variant::kHash4 ? 4 : 16;
      const bool exclude_self = seed % 2 == 0;
      const auto q_hash = random_buckets(batch, t, heads, nb, seed_of(seed, 5));
      const auto k_hash = random_buckets(batch, t, heads, nb, seed_of(seed, 6));
      out = hash_sparse_attention(q, k, v, q_hash, k_hash, 0.0, exclude_self, blocks);
      mask = mask_from(batch, heads, t, same_bucket(q_hash, k_hash, exclude_self));
      break;
    }
  }
  return max_rel_error(out, naive_attention(qd, kd, vd, mask, 0.0));
}

Outcome oracle_equivalence() {
  const std::size_t lengths[] = {17, 64, 128, 257, 512};
  const std::size_t dims[] = {4, 8, 64};
  const std::size_t sizes[] = {8, 16, 64};
  Stopwatch clock;
  std::size_t configs = 0, failures = 0;
  double worst64 = 0.0, worst32 = 0.0;
  std::uint64_t n = 0;
  for (std::size_t t : lengths)
    for (std::size_t dim : dims)
      for (std::size_t bm : sizes)
        for (std::size_t bn : sizes)
          for (std::size_t pick : {n % 7, (n + 3) % 7}) {
            const Variant variant = kVariants[pick];
            const BlockSpec blocks{bm, bn};
            const double e64 = oracle_error<double>(variant, t, dim, blocks, 1000 + n);
            const double e32 = oracle_error<float>(variant, t, dim, blocks, 1000 + n);
            worst64 = std::max(worst64, e64);
            worst32 = std::max(worst32, e32);
            failures += !(e64 < 1e-12) || !(e32 < 1e-5);
            ++configs;
            ++n;
          }
  const double seconds = clock.lap_ms() / 1000.0;
  return {"oracle equivalence", failures == 0 && configs >= 200 && seconds < 300.0,
          std::to_string(configs) + " configs x 2 precisions, worst 64-bit " + fmt("%.2e", worst64) +
              " (< 1e-12), worst 32-bit " + fmt("%.2e", worst32) + " (< 1e-5), " + fmt("%.1f", seconds) +
              " s (< 300 s)"};
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const Method methods[] = {Method::kDense, Method::kQk, Method::kHash};
  Stopwatch clock;
  std::size_t instances = 0, failures = 0;
  double worst = 0.0;
  const CounterRng rng(77, 0);
  std::uint64_t c = 0;
  for (std::size_t n = 0; n < 60; ++n) {
    BenchConfig config;
    config.method = methods[n % 3];
    config.batch = 1;
    config.heads = 2;
    config.length = 4 + static_cast<std::size_t>(rng.uniform(c++) * 45);  // 4..48
    config.dim = std::size_t{1} << static_cast<std::size_t>(rng.uniform(c++) * 4);  // 1..8
    config.blocks = BlockSpec{std::size_t{2} << static_cast<std::size_t>(rng.uniform(c++) * 4),
                              std::size_t{2} << static_cast<std::size_t>(rng.uniform(c++) * 4)};
    config.keep_prob = 0.5 * rng.uniform(c++);
    config.num_buckets = 2 + 2 * static_cast<std::int32_t>(rng.uniform(c++) * 3);
    config.exclude_self = n % 2 == 0;
    config.seed = 500 + n;
    config.precision = 64;
    const auto in = make_inputs<double>(config);
    const std::size_t t = config.length;
    MaskSpec mask = mask_from(1, 2, t, causal());
    if (config.method == Method::kQk) mask = mask_from(1, 2, t, kept(in.q_keep, in.k_keep));
    if (config.method == Method::kHash) mask = mask_from(1, 2, t, same_bucket(in.q_hash, in.k_hash, config.exclude_self));
    const auto dO = random_tensor<double>(config.shape(), seed_of(config.seed, 9), {}, Layout::kSeqMajor);
    const auto g = method_gradients(config, in, dO);
    const auto fd = finite_diff_gradient(in.Q, in.K, in.V, mask, dO, 0.0);
    const double e = std::max({max_rel_error(g.dQ, fd.dQ), max_rel_error(g.dK, fd.dK), max_rel_error(g.dV, fd.dV)});
    worst = std::max(worst, e);
    failures += !(e < 1e-6);
    ++instances;
  }
  const double seconds = clock.lap_ms() / 1000.0;
  return {"gradient correctness", failures == 0 && instances >= 50 && seconds < 600.0,
          std::to_string(instances) + " instances (dense, qk, hash), T <= 48, worst " + fmt("%.2e", worst) +
              " (< 1e-6), " + fmt("%.1f", seconds) + " s (< 600 s)"};
}

// ---------------------------------------------------------------------------

struct FuzzTally {
  std::size_t cases = 0, stranded_rows = 0, failures = 0;
  std::string first_failure;
};

template <typename T>
void fuzz_case(std::size_t n, const CounterRng& rng, std::uint64_t& c, FuzzTally& tally) {
  const Method methods[] = {Method::kDense, Method::kQk, Method::kHash, Method::kReformer};
  BenchConfig config;
  config.method = methods[n % 4];
  config.batch = 1 + static_cast<std::size_t>(rng.uniform(c++) * 2);
  config.heads = 1 + static_cast<std::size_t>(rng.uniform(c++) * 3);
  config.length = 1 + static_cast<std::size_t>(rng.uniform(c++) * 80);
  config.dim = 1 + static_cast<std::size_t>(rng.uniform(c++) * 8);
  config.blocks = BlockSpec{1 + static_cast<std::size_t>(rng.uniform(c++) * 24),
                            1 + static_cast<std::size_t>(rng.uniform(c++) * 24)};
  config.chunk = 1 + static_cast<std::size_t>(rng.uniform(c++) * 20);
  config.exclude_self = true;
  config.seed = 9000 + n;
  config.precision = sizeof(T) * 8;
  const std::size_t t = config.length;
  const double drops[] = {0.5, 0.9, 1.0};
  config.keep_prob = drops[static_cast<std::size_t>(rng.uniform(c++) * 3)];
  // bucket counts up to 4T leave many buckets empty
  config.num_buckets = 2 * (1 + static_cast<std::int32_t>(rng.uniform(c++) * static_cast<double>(2 * t)));

  auto in = make_inputs<T>(config);
  const T scale = static_cast<T>(std::pow(10.0, rng.uniform(c++) * 1.5));  // logits up to ~1000x
  for (T& e : in.Q.values()) e *= scale;
  for (T& e : in.K.values()) e *= scale;
  if (config.method == Method::kQk) {
    // whole heads stranded: every query of head 0 dropped, every key of the last head dropped
    for (std::size_t b = 0; b < config.batch; ++b)
      for (std::size_t i = 0; i < t; ++i) {
        in.q_keep.at(b, 0, i) = 0;
        in.k_keep.at(b, config.heads - 1, i) = 0;
      }
  }
  if (config.uses_buckets()) in.k_hash = in.q_hash;  // shared-QK: earliest member of each bucket is stranded

  Visible visible = causal();
  if (config.method == Method::kQk) visible = kept(in.q_keep, in.k_keep);
  if (config.uses_buckets()) visible = same_bucket(in.q_hash, in.k_hash, true);

  const auto out = method_forward(config, in);
  const auto dO = random_tensor<T>(config.shape(), seed_of(config.seed, 1), {}, Layout::kSeqMajor);
  const auto g = method_gradients(config, in, dO);

  bool ok = testing::all_finite(out) && testing::all_finite(g.dQ) && testing::all_finite(g.dK) &&
            testing::all_finite(g.dV);
  for (std::size_t b = 0; b < config.batch; ++b)
    for (std::size_t h = 0; h < config.heads; ++h)
      for (std::size_t i = 0; i < t; ++i) {
        bool any = false;
        for (std::size_t j = 0; j <= i && !any; ++j) any = visible(b, h, i, j);
        if (any) continue;
        ++tally.stranded_rows;
        ok = ok && testing::all_zero(out.row(b, h, i)) && testing::all_zero(g.dQ.row(b, h, i));
      }
  ++tally.cases;
  if (!ok) {
    ++tally.failures;
    if (tally.first_failure.empty())
      tally.first_failure = std::string(method_name(config.method)) + " T=" + std::to_string(t);
  }
}

Outcome nan_safety() {
  FuzzTally tally;
  const CounterRng rng(31, 0);
  std::uint64_t c = 0;
  for (std::size_t n = 0; n < 1200; ++n) {
    if (n % 2 == 0) fuzz_case<double>(n, rng, c, tally);
    else fuzz_case<float>(n, rng, c, tally);
  }
  std::string detail = std::to_string(tally.cases) + " fuzz cases (dense, qk, hash, reformer; 32/64-bit), " +
                       std::to_string(tally.stranded_rows) + " stranded rows, " + std::to_string(tally.failures) +
                       " with non-finite values or non-zero stranded rows";
  if (!tally.first_failure.empty()) detail += " (first: " + tally.first_failure + ")";
  return {"NaN safety", tally.failures == 0 && tally.cases >= 1000, detail};
}

// ---------------------------------------------------------------------------

// Same-bucket causal pairs and how many fall inside the brute-force tile
// ranges, counted over sorted slots.
CoverageReport brute_hash_coverage(const BucketTensor& hash, const BlockSpec& blocks) {
  const SortedHashes sh = sort_hashes(hash, hash);
  CoverageReport r;
  for (std::size_t b = 0; b < hash.values.batch(); ++b)
    for (std::size_t h = 0; h < hash.values.heads(); ++h) {
      const auto qh = sh.q_hash.head(b, h);
      const auto qi = sh.q_idx.head(b, h);
      const std::vector<std::int32_t> hv(qh.begin(), qh.end());
      const std::vector<std::int64_t> iv(qi.begin(), qi.end());
      const auto ranges = testing::brute_hash_ranges(hv, iv, hv, iv, blocks.block_m, blocks.block_n);
      for (std::size_t p = 0; p < hv.size(); ++p)
        for (std::size_t s = 0; s < hv.size(); ++s) {
          if (hv[s] != hv[p]) continue;
          if (!(iv[s] < iv[p])) continue;
          ++r.required_pairs;
          const auto& range = ranges[p / blocks.block_m];
          const std::size_t j = s / blocks.block_n;
          r.covered_pairs += j >= range.start && j < range.stop;
        }
    }
  return r;
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t m = xs.size() / 2;
  return xs.size() % 2 == 1 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

Outcome hash_coverage_criterion(std::string& info) {
  const BlockSpec blocks{64, 64};
  std::size_t runs = 0, exact = 0;
  double lowest = 1.0;
  for (std::size_t t : {256, 1024, 4096})
    for (std::int32_t nb : {4, 16, 64})
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto hash = random_buckets(1, t, 1, nb, seed_of(seed, t * 100 + static_cast<std::size_t>(nb)));
        const auto lib = hash_coverage(hash, hash, blocks, true);
        const auto brute = brute_hash_coverage(hash, blocks);
        const bool ok = lib.covered_pairs == lib.required_pairs && brute.covered_pairs == brute.required_pairs &&
                        lib.required_pairs == brute.required_pairs;
        exact += ok;
        lowest = std::min({lowest, lib.coverage(), brute.coverage()});
        ++runs;
      }

  // Reformer: chunk 64, nb fixed at 16 while T grows.
  const ChunkSpec chunk{64};
  std::vector<double> medians, literal;
  for (std::size_t t : {1024, 4096, 16384}) {
    std::vector<double> fixed_nb, scaled_nb;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto hash = random_buckets(1, t, 1, 16, seed_of(seed, t));
      fixed_nb.push_back(lsh_coverage(hash, hash, chunk, true).coverage());
      const auto scaled = random_buckets(1, t, 1, auto_buckets(t, chunk.length), seed_of(seed, t + 1));
      scaled_nb.push_back(lsh_coverage(scaled, scaled, chunk, true).coverage());
    }
    medians.push_back(median(fixed_nb));
    literal.push_back(median(scaled_nb));
  }
  const bool decreasing = medians[0] > medians[1] && medians[1] > medians[2];
  info = "reformer coverage with nb = ceil(T / 64): medians " + fmt("%.5f", literal[0]) + ", " +
         fmt("%.5f", literal[1]) + ", " + fmt("%.5f", literal[2]) + " at T = 1024, 4096, 16384 (not gating)";
  return {"hash coverage", exact == runs && decreasing,
          "hash-sparse exact in " + std::to_string(exact) + "/" + std::to_string(runs) +
              " runs (T 256/1024/4096, nb 4/16/64, 20 seeds; min " + fmt("%.6f", lowest) +
              "); reformer (c = 64, nb = 16) medians " + fmt("%.4f", medians[0]) + " > " + fmt("%.4f", medians[1]) +
              " > " + fmt("%.4f", medians[2]) + " at T = 1024, 4096, 16384"};
}

// ---------------------------------------------------------------------------

Outcome tile_reduction() {
  const std::size_t t = 8192, batch = 64;
  const BlockSpec blocks{64, 64};
  const double dense = static_cast<double>(dense_tile_count(t, blocks) * batch);

  BenchConfig qk;
  qk.method = Method::kQk;
  qk.batch = batch;
  qk.heads = 1;
  qk.length = t;
  qk.dim = 1;
  qk.blocks = blocks;
  qk.keep_prob = 0.5;
  qk.seed = 3;
  const auto qk_in = make_inputs<float>(qk);
  const std::uint64_t qk_tiles = method_tiles(qk, qk_in);

  // Brute-force simulator on the same compacted indices.
  std::uint64_t qk_brute = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<std::int64_t> q_idx, k_idx;
    for (std::size_t i = 0; i < t; ++i) {
      if (qk_in.q_keep.at(b, 0, i)) q_idx.push_back(static_cast<std::int64_t>(i));
      if (qk_in.k_keep.at(b, 0, i)) k_idx.push_back(static_cast<std::int64_t>(i));
    }
    std::size_t widest_q = 0, widest_k = 0;
    for (std::size_t bb = 0; bb < batch; ++bb) {
      std::size_t nq = 0, nk = 0;
      for (std::size_t i = 0; i < t; ++i) nq += qk_in.q_keep.at(bb, 0, i), nk += qk_in.k_keep.at(bb, 0, i);
      widest_q = std::max(widest_q, nq);
      widest_k = std::max(widest_k, nk);
    }
    const std::size_t width = std::max<std::size_t>({widest_q, widest_k, 1});
    q_idx.resize(width, kQueryPad);
    k_idx.resize(width, kKeyPad);
    for (const auto& row : testing::brute_causal_tiles(q_idx, k_idx, blocks.block_m, blocks.block_n))
      for (bool need : row) qk_brute += need;
  }

  BenchConfig hash = qk;
  hash.method = Method::kHash;
  hash.num_buckets = 16;
  const auto hash_in = make_inputs<float>(hash);
  const std::uint64_t hash_tiles = method_tiles(hash, hash_in);
  std::uint64_t hash_brute = 0;
  const SortedHashes sh = sort_hashes(hash_in.q_hash, hash_in.k_hash);
  for (std::size_t b = 0; b < batch; ++b) {
    auto vec = [&](const auto& g) {
      const auto xs = g.head(b, 0);
      return std::vector<std::remove_const_t<typename decltype(xs)::element_type>>(xs.begin(), xs.end());
    };
    for (const auto& r : testing::brute_hash_ranges(vec(sh.q_hash), vec(sh.q_idx), vec(sh.k_hash), vec(sh.k_idx),
                                                    blocks.block_m, blocks.block_n))
      hash_brute += r.stop - r.start;
  }

  const double qk_ratio = static_cast<double>(qk_tiles) / dense;
  const double hash_ratio = static_cast<double>(hash_tiles) / dense;
  const bool ok = qk_tiles == qk_brute && hash_tiles == hash_brute && qk_ratio >= 0.20 && qk_ratio <= 0.33 &&
                  hash_ratio <= 0.25;
  return {"tile reduction", ok,
          "T = 8192, B = 64, blocks 64: qk (drop 0.5) ratio " + fmt("%.4f", qk_ratio) + " in [0.20, 0.33], hash (nb = 16) ratio " +
              fmt("%.4f", hash_ratio) + " <= 0.25; simulator " + (qk_tiles == qk_brute ? "agrees" : "DISAGREES") +
              " on qk, " + (hash_tiles == hash_brute ? "agrees" : "DISAGREES") + " on hash"};
}

// ---------------------------------------------------------------------------

// Kernel forward of one method at one length; inputs are prepared
// (head-major, and bucket-sorted for hash) outside the timed call.
std::function<void()> kernel_run(std::size_t heads, std::size_t t, std::int32_t num_buckets) {
  const Shape4 s{1, heads, t, 64};
  const auto q = random_tensor<float>(s, 1, {}, Layout::kSeqMajor);
  const auto k = random_tensor<float>(s, 2, {}, Layout::kSeqMajor);
  const auto v = random_tensor<float>(s, 3, {}, Layout::kSeqMajor);
  const BlockSpec blocks{64, 64};
  if (num_buckets == 0) {
    const auto qh = to_layout(q, Layout::kHeadMajor), kh = to_layout(k, Layout::kHeadMajor),
               vh = to_layout(v, Layout::kHeadMajor);
    return [=] { flash_forward(qh, kh, vh, 0.0, blocks); };
  }
  const auto hash = random_buckets(1, t, heads, num_buckets, 4);
  const auto sorted = sort_by_bucket(q, k, v, hash, hash);
  return [=] { hash_forward_kernel(sorted, 0.0, blocks, true); };
}

struct Scaling {
  double small_ms = 0.0, large_ms = 0.0, ratio = 0.0;
};

// Small and large runs alternate so slow machine drift cancels; the ratio is
// the median of per-pair ratios after one warm-up pair.
Scaling measure_scaling(const std::function<void()>& small, const std::function<void()>& large, std::size_t pairs) {
  std::vector<double> a, b, r;
  for (std::size_t n = 0; n < pairs + 1; ++n) {
    Stopwatch clock;
    small();
    const double ms_small = clock.lap_ms();
    large();
    const double ms_large = clock.lap_ms();
    if (n == 0) continue;
    a.push_back(ms_small);
    b.push_back(ms_large);
    r.push_back(ms_large / ms_small);
  }
  return {median(a), median(b), median(r)};
}

Outcome quadratic_cost(std::string& info) {
  const std::size_t heads = 4;
  const Scaling dense = measure_scaling(kernel_run(heads, 2048, 0), kernel_run(heads, 8192, 0), 5);
  const Scaling hash = measure_scaling(kernel_run(heads, 2048, auto_buckets(2048, 64)),
                                       kernel_run(heads, 8192, auto_buckets(8192, 64)), 21);
  auto hash_tiles = [&](std::size_t t) {
    const auto h = random_buckets(1, t, heads, auto_buckets(t, 64), 4);
    const auto sh = sort_hashes(h, h);
    return hash_schedule(sh.q_idx, sh.k_idx, sh.q_hash, sh.k_hash, h.num_buckets, BlockSpec{64, 64}).cardinality();
  };
  info = "kernel forward wall clock (B = 1, H = 4, D = 64, blocks 64, 32-bit, medians): dense " +
         fmt("%.1f", dense.small_ms) + " -> " + fmt("%.1f", dense.large_ms) + " ms, hash " + fmt("%.1f", hash.small_ms) +
         " -> " + fmt("%.1f", hash.large_ms) + " ms; hash tiles " + std::to_string(hash_tiles(2048)) + " -> " +
         std::to_string(hash_tiles(8192));
  return {"quadratic cost", dense.ratio >= 8.0 && hash.ratio <= 4.0,
          "T 8192 vs 2048 kernel forward: dense ratio " + fmt("%.2f", dense.ratio) +
              " (>= 8), hash (nb = T / 64) ratio " + fmt("%.2f", hash.ratio) + " (<= 4)"};
}

// ---------------------------------------------------------------------------

template <typename T>
std::uint64_t digest_all(std::uint64_t seed) {
  testing::Fnv1a h;
  for (Method m : {Method::kDense, Method::kNaive, Method::kQk, Method::kHash, Method::kReformer}) {
    BenchConfig config;
    config.method = m;
    config.batch = 2;
    config.heads = 3;
    config.length = 200;
    config.dim = 16;
    config.blocks = BlockSpec{32, 16};
    config.num_buckets = 8;
    config.keep_prob = 0.4;
    config.chunk = 32;
    config.seed = seed;
    config.precision = sizeof(T) * 8;
    const auto in = make_inputs<T>(config, HashSource::kLsh);
    const auto out = method_forward(config, in);
    h.add(out.values());
    if (m != Method::kNaive) {
      const auto dO = random_tensor<T>(config.shape(), seed_of(seed, 1), {}, Layout::kSeqMajor);
      const auto g = method_gradients(config, in, dO);
      h.add(g.dQ.values());
      h.add(g.dK.values());
      h.add(g.dV.values());
    }
    if (config.uses_buckets()) h.add(in.q_hash.values.values());
  }
  const auto hash = random_buckets(2, 500, 3, 8, seed);
  const auto cov = lsh_coverage(hash, hash, ChunkSpec{32}, true);
  h.add(std::vector<std::uint64_t>{cov.required_pairs, cov.covered_pairs});
  return h.value();
}

Outcome determinism() {
  std::vector<std::uint64_t> digests;
  for (std::size_t workers : {1, 1, 3, 3, 0}) {
    set_worker_count(workers);
    digests.push_back(digest_all<double>(42) ^ (digest_all<float>(42) * 0x9e3779b97f4a7c15ULL));
  }
  set_worker_count(0);
  const bool same = std::all_of(digests.begin(), digests.end(), [&](std::uint64_t d) { return d == digests[0]; });
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digests[0]));
  return {"determinism", same,
          "all methods forward + backward, LSH codes and coverage, 32/64-bit; 5 runs at 1, 1, 3, 3 and default "
          "workers " +
              std::string(same ? "share digest " : "DIFFER, first ") + buf};
}

void report(const Outcome& o, bool& all) {
  std::printf("[%s] %s: %s\n", o.passed ? "PASS" : "FAIL", o.name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  all = all && o.passed;
}

}  // namespace

int main() {
  bool all = true;
  std::string coverage_info, timing_info;
  report(oracle_equivalence(), all);
  report(gradient_correctness(), all);
  report(nan_safety(), all);
  report(hash_coverage_criterion(coverage_info), all);
  report(tile_reduction(), all);
  report(quadratic_cost(timing_info), all);
  report(determinism(), all);
  std::printf("[INFO] %s\n[INFO] %s\n", coverage_info.c_str(), timing_info.c_str());
  return all ? 0 : 1;
}
