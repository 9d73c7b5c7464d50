#include "scfa/bench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "scfa/dense_flash.hpp"
#include "scfa/error.hpp"
#include "scfa/hash_sparse.hpp"
#include "scfa/qk_sparse.hpp"
#include "scfa/random.hpp"
#include "scfa/reformer.hpp"
#include "scfa/timer.hpp"

namespace scfa {
namespace {

constexpr std::string_view kMethodNames[] = {"dense", "naive", "qk", "hash", "reformer"};

// Independent seeds for the inputs drawn from one config seed.
enum SeedSlot : std::uint64_t { kSeedQ = 1, kSeedK, kSeedV, kSeedDo, kSeedQKeep, kSeedKKeep, kSeedQHash, kSeedKHash };

std::uint64_t derive(std::uint64_t seed, SeedSlot slot) { return CounterRng(seed, slot).bits(0); }

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

template <typename T>
Tensor4<T> head_major(const Tensor4<T>& x) {
  return to_layout(x, Layout::kHeadMajor);
}

template <typename T>
Tensor4<T> seq_major(const Tensor4<T>& x) {
  return to_layout(x, Layout::kSeqMajor);
}

Grid3<std::int32_t> head_major(const BucketTensor& h) { return to_layout(h.values, Layout::kHeadMajor); }

// Compact dO into the same slot order as the compacted queries.
template <typename T>
Tensor4<T> compact_rows(const KeepTensor& keep, const Tensor4<T>& x, const IndexTensor& index) {
  return head_major(compact(keep, x, &index).compact);
}

}  // namespace

std::string_view method_name(Method m) { return kMethodNames[static_cast<std::size_t>(m)]; }

Method parse_method(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kMethodNames); ++i) {
    if (kMethodNames[i] == name) return static_cast<Method>(i);
  }
  throw ParameterError("unknown method '" + std::string(name) + "' (expected dense, naive, qk, hash or reformer)");
}

void BenchConfig::validate() const {
  shape().validate();
  blocks.validate();
  if (reps < 1) throw ParameterError("--reps must be >= 1");
  if (precision != 32 && precision != 64) throw ParameterError("--precision must be 32 or 64");
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) throw ParameterError("--keep-prob must lie in [0, 1]");
  if (chunk < 1) throw ParameterError("--chunk must be >= 1");
  if (uses_buckets() && (num_buckets < 2 || num_buckets % 2 != 0)) {
    throw ParameterError("--nbuckets must be even and >= 2 for angular LSH, got " + std::to_string(num_buckets));
  }
  if (method == Method::kQk && length >= static_cast<std::size_t>(kKeyPad)) {
    throw ParameterError("--seq-len must stay below the key pad value 1e9");
  }
}

std::int32_t auto_buckets(std::size_t length, std::size_t chunk) {
  if (chunk == 0) throw ParameterError("chunk length must be >= 1");
  auto nb = static_cast<std::int32_t>((length + chunk - 1) / chunk);
  nb += nb % 2;
  return std::max<std::int32_t>(nb, 2);
}

// ---------------------------------------------------------------------------
// CSV

std::string csv_header() {
  return "method,B,H,T,D,block_m,block_n,nb,keep_prob,chunk,seed,precision,pre_ms,fwd_ms,bwd_ms,post_ms,tiles,"
         "max_rel_err,coverage";
}

namespace {

std::string fmt_double(double v, const char* spec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string cell(const std::optional<double>& v, const char* spec) { return v ? fmt_double(*v, spec) : ""; }

bool uses_blocks(Method m) { return m == Method::kDense || m == Method::kQk || m == Method::kHash; }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

template <typename N>
N parse_number(const std::string& s, std::size_t row, const char* column) {
  N v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw FormatError("row " + std::to_string(row) + ": bad " + column + " '" + s + "'", row);
  }
  return v;
}

template <typename N>
std::optional<N> parse_optional(const std::string& s, std::size_t row, const char* column) {
  if (s.empty()) return std::nullopt;
  return parse_number<N>(s, row, column);
}

}  // namespace

std::string csv_row(const BenchRecord& r) {
  const BenchConfig& c = r.config;
  std::ostringstream os;
  os << method_name(c.method) << ',' << c.batch << ',' << c.heads << ',' << c.length << ',' << c.dim << ',';
  if (uses_blocks(c.method)) os << c.blocks.block_m << ',' << c.blocks.block_n << ',';
  else os << ",,";
  if (c.uses_buckets()) os << c.num_buckets;
  os << ',';
  if (c.method == Method::kQk) os << fmt_double(c.keep_prob, "%.17g");
  os << ',';
  if (c.method == Method::kReformer) os << c.chunk;
  os << ',' << c.seed << ',' << c.precision << ',';
  os << cell(r.pre_ms, "%.6f") << ',' << cell(r.fwd_ms, "%.6f") << ',' << cell(r.bwd_ms, "%.6f") << ','
     << cell(r.post_ms, "%.6f") << ',';
  if (r.tiles) os << *r.tiles;
  os << ',' << cell(r.max_rel_err, "%.6e") << ',' << cell(r.coverage, "%.17g");
  return os.str();
}

void write_csv(std::ostream& out, const std::vector<BenchRecord>& records) {
  out << csv_header() << '\n';
  for (const auto& r : records) out << csv_row(r) << '\n';
}

std::vector<BenchRecord> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV", 0);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != csv_header()) throw FormatError("unexpected CSV header", 0);
  std::vector<BenchRecord> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 19) throw FormatError("row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                                          " columns, expected 19", row);
    BenchRecord r;
    BenchConfig& c = r.config;
    c.method = parse_method(f[0]);
    c.batch = parse_number<std::size_t>(f[1], row, "B");
    c.heads = parse_number<std::size_t>(f[2], row, "H");
    c.length = parse_number<std::size_t>(f[3], row, "T");
    c.dim = parse_number<std::size_t>(f[4], row, "D");
    c.blocks.block_m = parse_optional<std::size_t>(f[5], row, "block_m").value_or(c.blocks.block_m);
    c.blocks.block_n = parse_optional<std::size_t>(f[6], row, "block_n").value_or(c.blocks.block_n);
    c.num_buckets = parse_optional<std::int32_t>(f[7], row, "nb").value_or(c.num_buckets);
    c.keep_prob = parse_optional<double>(f[8], row, "keep_prob").value_or(c.keep_prob);
    c.chunk = parse_optional<std::size_t>(f[9], row, "chunk").value_or(c.chunk);
    c.seed = parse_number<std::uint64_t>(f[10], row, "seed");
    c.precision = parse_number<int>(f[11], row, "precision");
    r.pre_ms = parse_optional<double>(f[12], row, "pre_ms");
    r.fwd_ms = parse_optional<double>(f[13], row, "fwd_ms");
    r.bwd_ms = parse_optional<double>(f[14], row, "bwd_ms");
    r.post_ms = parse_optional<double>(f[15], row, "post_ms");
    r.tiles = parse_optional<std::uint64_t>(f[16], row, "tiles");
    r.max_rel_err = parse_optional<double>(f[17], row, "max_rel_err");
    r.coverage = parse_optional<double>(f[18], row, "coverage");
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Method dispatch

template <typename T>
MethodInputs<T> make_inputs(const BenchConfig& config, HashSource hashes) {
  config.validate();
  const Shape4 s = config.shape();
  MethodInputs<T> in;
  in.Q = random_tensor<T>(s, derive(config.seed, kSeedQ), {}, Layout::kSeqMajor);
  in.K = random_tensor<T>(s, derive(config.seed, kSeedK), {}, Layout::kSeqMajor);
  in.V = random_tensor<T>(s, derive(config.seed, kSeedV), {}, Layout::kSeqMajor);
  if (config.method == Method::kQk) {
    in.q_keep = random_keep(s.batch, s.length, s.heads, config.keep_prob, derive(config.seed, kSeedQKeep));
    in.k_keep = random_keep(s.batch, s.length, s.heads, config.keep_prob, derive(config.seed, kSeedKKeep));
  }
  if (config.uses_buckets()) {
    if (hashes == HashSource::kLsh) {
      in.K = normalize_keys(in.Q);
      in.q_hash = lsh_buckets(in.K, config.num_buckets, derive(config.seed, kSeedQHash));
      in.k_hash = in.q_hash;
    } else {
      in.q_hash = random_buckets(s.batch, s.length, s.heads, config.num_buckets, derive(config.seed, kSeedQHash));
      in.k_hash = random_buckets(s.batch, s.length, s.heads, config.num_buckets, derive(config.seed, kSeedKHash));
    }
  }
  return in;
}

template <typename T>
MaskSpec method_mask(const BenchConfig& config, const MethodInputs<T>& in) {
  const Shape4 s = config.shape();
  const std::size_t t = s.length;
  switch (config.method) {
    case Method::kDense:
    case Method::kNaive:
      return MaskSpec::causal(s.batch, s.heads, t, false);
    case Method::kQk: {
      MaskSpec mask(s.batch, s.heads, t, t, false);
      for (std::size_t b = 0; b < s.batch; ++b)
        for (std::size_t h = 0; h < s.heads; ++h)
          for (std::size_t i = 0; i < t; ++i) {
            if (!in.q_keep.at(b, h, i)) continue;
            for (std::size_t j = 0; j <= i; ++j) mask.set(b, h, i, j, in.k_keep.at(b, h, j) != 0);
          }
      return mask;
    }
    case Method::kHash:
    case Method::kReformer: {
      const IndexTensor idx = iota_index(s.batch, s.heads, t);
      MaskSpec mask = build_mask(idx, idx, head_major(in.q_hash), head_major(in.k_hash), config.exclude_self);
      if (config.method == Method::kHash) return mask;
      // Restrict to the two-chunk window in sorted order.
      const SortedHashes sorted = sort_hashes(in.q_hash, in.k_hash);
      std::vector<std::size_t> q_chunk(t), k_chunk(t);
      for (std::size_t b = 0; b < s.batch; ++b)
        for (std::size_t h = 0; h < s.heads; ++h) {
          for (std::size_t p = 0; p < t; ++p) {
            q_chunk[static_cast<std::size_t>(sorted.q_idx.at(b, h, p))] = p / config.chunk;
            k_chunk[static_cast<std::size_t>(sorted.k_idx.at(b, h, p))] = p / config.chunk;
          }
          for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < t; ++j)
              if (k_chunk[j] > q_chunk[i] || k_chunk[j] + 1 < q_chunk[i]) mask.set(b, h, i, j, false);
        }
      return mask;
    }
  }
  throw ParameterError("unknown method");
}

template <typename T>
Tensor4<T> method_forward(const BenchConfig& config, const MethodInputs<T>& in, RunStats* stats) {
  switch (config.method) {
    case Method::kDense: {
      Stopwatch clock;
      const Tensor4<T> q = head_major(in.Q), k = head_major(in.K), v = head_major(in.V);
      const double pre = clock.lap_ms();
      const FlashOutputs<T> y = flash_forward(q, k, v, resolve_scale(0.0, config.dim), config.blocks);
      const double fwd = clock.lap_ms();
      Tensor4<T> out = seq_major(y.O);
      if (stats != nullptr) *stats = RunStats{pre, fwd, clock.lap_ms(), y.tiles_computed};
      return out;
    }
    case Method::kNaive: {
      Stopwatch clock;
      Tensor4<T> out = naive_attention(in.Q, in.K, in.V, method_mask(config, in), resolve_scale(0.0, config.dim));
      if (stats != nullptr) *stats = RunStats{0.0, clock.lap_ms(), 0.0, 0};
      return out;
    }
    case Method::kQk:
      return qk_sparse_attention(in.Q, in.K, in.V, in.q_keep, in.k_keep, 0.0, config.blocks, stats);
    case Method::kHash:
      return hash_sparse_attention(in.Q, in.K, in.V, in.q_hash, in.k_hash, 0.0, config.exclude_self, config.blocks,
                                   stats);
    case Method::kReformer:
      return reformer_attention(in.Q, in.K, in.V, in.q_hash, in.k_hash, ChunkSpec{config.chunk}, 0.0,
                                config.exclude_self, stats);
  }
  throw ParameterError("unknown method");
}

namespace {

// Forward and backward with the pre/post phases separated, shared by
// method_gradients and the timed benchmark.
template <typename T>
struct Pass {
  Tensor4<T> O;
  Gradients<T> grads;
  std::uint64_t tiles = 0;
  double pre_ms = 0, fwd_ms = 0, bwd_ms = 0, post_ms = 0;
};

template <typename T>
Gradients<T> to_boundary(const Gradients<T>& g) {
  return {seq_major(g.dQ), seq_major(g.dK), seq_major(g.dV)};
}

template <typename T>
Pass<T> sorted_pass(const BenchConfig& config, const MethodInputs<T>& in, const Tensor4<T>& dO, bool backward) {
  const double tau = resolve_scale(0.0, config.dim);
  const ChunkSpec chunk{config.chunk};
  const bool reformer = config.method == Method::kReformer;
  Pass<T> p;
  Stopwatch clock;
  const SortedBatch<T> sorted = sort_by_bucket(in.Q, in.K, in.V, in.q_hash, in.k_hash);
  const Tensor4<T> dO_sorted = backward ? gather_rows(dO, sorted.q_idx) : Tensor4<T>();
  p.pre_ms = clock.lap_ms();
  const FlashOutputs<T> y = reformer ? reformer_forward_kernel(sorted, chunk, tau, config.exclude_self)
                                     : hash_forward_kernel(sorted, tau, config.blocks, config.exclude_self);
  p.fwd_ms = clock.lap_ms();
  Gradients<T> g;
  if (backward) {
    g = reformer ? reformer_backward_kernel(sorted, y, dO_sorted, chunk, tau, config.exclude_self)
                 : hash_backward_kernel(sorted, y, dO_sorted, tau, config.blocks, config.exclude_self);
  }
  p.bwd_ms = clock.lap_ms();
  p.O = unsort_rows(y.O, sorted.q_idx);
  if (backward) {
    p.grads = {unsort_rows(g.dQ, sorted.q_idx), unsort_rows(g.dK, sorted.k_idx), unsort_rows(g.dV, sorted.k_idx)};
  }
  p.post_ms = clock.lap_ms();
  p.tiles = y.tiles_computed;
  return p;
}

template <typename T>
Pass<T> full_pass(const BenchConfig& config, const MethodInputs<T>& in, const Tensor4<T>& dO, bool backward) {
  const double tau = resolve_scale(0.0, config.dim);
  const std::size_t length = config.length;
  Pass<T> p;
  switch (config.method) {
    case Method::kDense: {
      Stopwatch clock;
      const Tensor4<T> q = head_major(in.Q), k = head_major(in.K), v = head_major(in.V);
      const Tensor4<T> dOh = backward ? head_major(dO) : Tensor4<T>();
      p.pre_ms = clock.lap_ms();
      const FlashOutputs<T> y = flash_forward(q, k, v, tau, config.blocks);
      p.fwd_ms = clock.lap_ms();
      Gradients<T> g;
      if (backward) g = flash_backward(q, k, v, y, dOh, tau, config.blocks);
      p.bwd_ms = clock.lap_ms();
      p.O = seq_major(y.O);
      if (backward) p.grads = to_boundary(g);
      p.post_ms = clock.lap_ms();
      p.tiles = y.tiles_computed;
      return p;
    }
    case Method::kNaive: {
      Stopwatch clock;
      p.O = naive_attention(in.Q, in.K, in.V, method_mask(config, in), tau);
      p.fwd_ms = clock.lap_ms();
      return p;
    }
    case Method::kQk: {
      Stopwatch clock;
      const QkPrepared<T> prep = qk_prepare(in.Q, in.K, in.V, in.q_keep, in.k_keep);
      const Tensor4<T> dOc = backward ? compact_rows(in.q_keep, dO, prep.q_index) : Tensor4<T>();
      p.pre_ms = clock.lap_ms();
      const FlashOutputs<T> y = qk_forward_kernel(prep.Qc, prep.Kc, prep.Vc, prep.q_idx, prep.k_idx, tau, config.blocks);
      p.fwd_ms = clock.lap_ms();
      Gradients<T> g;
      if (backward) {
        g = qk_backward_kernel(prep.Qc, prep.Kc, prep.Vc, y, dOc, prep.q_idx, prep.k_idx, tau, config.blocks);
      }
      p.bwd_ms = clock.lap_ms();
      p.O = qk_scatter(y.O, prep.q_index, length);
      if (backward) {
        p.grads = {qk_scatter(g.dQ, prep.q_index, length), qk_scatter(g.dK, prep.k_index, length),
                   qk_scatter(g.dV, prep.k_index, length)};
      }
      p.post_ms = clock.lap_ms();
      p.tiles = y.tiles_computed;
      return p;
    }
    case Method::kHash:
    case Method::kReformer:
      return sorted_pass(config, in, dO, backward);
  }
  throw ParameterError("unknown method");
}

}  // namespace

template <typename T>
Gradients<T> method_gradients(const BenchConfig& config, const MethodInputs<T>& in, const Tensor4<T>& dO) {
  if (config.method == Method::kNaive) throw ParameterError("the naive method has no analytic backward");
  if (dO.shape() != in.Q.shape() || dO.layout() != Layout::kSeqMajor) {
    throw ShapeError("dO must match Q in (B, T, H, D) layout");
  }
  return full_pass(config, in, dO, true).grads;
}

template <typename T>
std::uint64_t method_tiles(const BenchConfig& config, const MethodInputs<T>& in) {
  const Shape4 s = config.shape();
  switch (config.method) {
    case Method::kDense:
      return dense_tile_count(s.length, config.blocks) * s.slices();
    case Method::kNaive:
      return 0;
    case Method::kQk: {
      // Compacting a D = 1 placeholder yields the same index order.
      const Tensor4<T> probe(Shape4{s.batch, s.heads, s.length, 1}, Layout::kSeqMajor);
      const CompactResult<T> cq = compact(in.q_keep, probe);
      const CompactResult<T> ck = compact(in.k_keep, probe);
      const IndexTensor q_idx =
          to_layout(pad_index(cq.index, cq.indices_per_head, kQueryPad), Layout::kHeadMajor);
      const IndexTensor k_idx = to_layout(pad_index(ck.index, ck.indices_per_head, kKeyPad), Layout::kHeadMajor);
      return qk_schedule(q_idx, k_idx, config.blocks).cardinality();
    }
    case Method::kHash: {
      const SortedHashes sorted = sort_hashes(in.q_hash, in.k_hash);
      return hash_schedule(sorted.q_idx, sorted.k_idx, sorted.q_hash, sorted.k_hash, in.q_hash.num_buckets,
                           config.blocks)
          .cardinality();
    }
    case Method::kReformer:
      return reformer_schedule(s.batch, s.heads, s.length, ChunkSpec{config.chunk}).cardinality();
  }
  throw ParameterError("unknown method");
}

// ---------------------------------------------------------------------------
// Verification

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return !c.applicable || c.passed; });
}

std::optional<double> VerifyReport::oracle_error() const {
  for (const auto& c : checks)
    if (c.name == "oracle" && c.applicable) return c.measured;
  return std::nullopt;
}

std::optional<double> VerifyReport::coverage() const {
  for (const auto& c : checks)
    if (c.name == "coverage" && c.applicable) return c.measured;
  return std::nullopt;
}

namespace {

template <typename T>
std::size_t count_nonfinite(const Tensor4<T>& x) {
  return static_cast<std::size_t>(
      std::count_if(x.values().begin(), x.values().end(), [](T v) { return !std::isfinite(v); }));
}

template <typename T>
Check oracle_check(const BenchConfig& config) {
  const MethodInputs<T> in = make_inputs<T>(config, HashSource::kLsh);
  const Tensor4<T> out = method_forward(config, in);
  const Tensor4<double> q = cast<double>(in.Q), k = cast<double>(in.K), v = cast<double>(in.V);
  Tensor4<double> ref;
  std::string against = "naive oracle";
  if (config.method == Method::kNaive) {
    // The oracle cannot check itself; compare with the dense kernel at 64-bit.
    ref = seq_major(flash_forward(head_major(q), head_major(k), head_major(v), resolve_scale(0.0, config.dim),
                                  config.blocks)
                        .O);
    against = "dense kernel";
  } else {
    ref = naive_attention(q, k, v, method_mask(config, in), resolve_scale(0.0, config.dim));
  }
  Check c;
  c.name = "oracle";
  c.measured = max_rel_error(out, ref);
  c.tolerance = config.precision == 64 ? 1e-12 : 1e-5;
  c.passed = c.measured < c.tolerance;
  c.detail = "forward vs " + against;
  return c;
}

BenchConfig reduced(const BenchConfig& config) {
  BenchConfig g = config;
  g.batch = 1;
  g.heads = std::min<std::size_t>(config.heads, 2);
  g.length = std::min<std::size_t>(config.length, 24);
  g.dim = std::min<std::size_t>(config.dim, 8);
  g.blocks = {std::min<std::size_t>(config.blocks.block_m, 8), std::min<std::size_t>(config.blocks.block_n, 8)};
  g.chunk = std::min<std::size_t>(config.chunk, 8);
  g.precision = 64;
  return g;
}

Check gradient_check(const BenchConfig& config) {
  Check c;
  c.name = "gradient";
  c.tolerance = 1e-6;
  if (config.method == Method::kNaive) {
    c.applicable = false;
    c.detail = "no analytic backward";
    return c;
  }
  const BenchConfig g = reduced(config);
  const MethodInputs<double> in = make_inputs<double>(g, HashSource::kLsh);
  const Tensor4<double> dO = random_tensor<double>(g.shape(), derive(g.seed, kSeedDo), {}, Layout::kSeqMajor);
  const Gradients<double> analytic = method_gradients(g, in, dO);
  const Gradients<double> fd =
      finite_diff_gradient(in.Q, in.K, in.V, method_mask(g, in), dO, resolve_scale(0.0, g.dim), 1e-5);
  c.measured = std::max({max_rel_error(analytic.dQ, fd.dQ), max_rel_error(analytic.dK, fd.dK),
                         max_rel_error(analytic.dV, fd.dV)});
  c.passed = c.measured < c.tolerance;
  c.detail = "64-bit, shape " + g.shape().to_string() + " vs central differences";
  return c;
}

// Stranded rows (no visible key) must be exactly zero in O and dQ, and
// nothing anywhere may be NaN or infinite.
template <typename T>
Check nan_check(const BenchConfig& config) {
  BenchConfig n = config;
  n.batch = 1;
  n.heads = std::min<std::size_t>(config.heads, 2);
  n.exclude_self = true;
  MethodInputs<T> in = make_inputs<T>(n, HashSource::kUniform);
  if (n.method == Method::kQk) {
    // Head 0 drops every query, the last head drops every key.
    for (std::size_t t = 0; t < n.length; ++t) {
      in.q_keep.at(0, 0, t) = 0;
      in.k_keep.at(0, n.heads - 1, t) = 0;
    }
  }
  if (n.uses_buckets()) in.k_hash = in.q_hash;  // shared codes: each bucket's first query sees nothing
  const Tensor4<T> dO = random_tensor<T>(n.shape(), derive(n.seed, kSeedDo), {}, Layout::kSeqMajor);
  const Tensor4<T> out = method_forward(n, in);
  std::size_t bad = count_nonfinite(out);
  std::size_t stranded = 0;
  const MaskSpec mask = method_mask(n, in);
  Gradients<T> g;
  const bool has_grad = n.method != Method::kNaive;
  if (has_grad) {
    g = method_gradients(n, in, dO);
    bad += count_nonfinite(g.dQ) + count_nonfinite(g.dK) + count_nonfinite(g.dV);
  }
  for (std::size_t h = 0; h < n.heads; ++h)
    for (std::size_t i = 0; i < n.length; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < n.length && !any; ++j) any = mask.allowed(0, h, i, j);
      if (any) continue;
      ++stranded;
      for (std::size_t d = 0; d < n.dim; ++d) {
        if (out.at(0, h, i, d) != T(0)) ++bad;
        if (has_grad && g.dQ.at(0, h, i, d) != T(0)) ++bad;
      }
    }
  Check c;
  c.name = "nan-safety";
  c.measured = static_cast<double>(bad);
  c.tolerance = 0.0;
  c.passed = bad == 0;
  c.detail = std::to_string(stranded) + " stranded rows checked";
  return c;
}

Check coverage_check(const BenchConfig& config) {
  Check c;
  c.name = "coverage";
  if (!config.uses_buckets()) {
    c.applicable = false;
    c.detail = "method has no buckets";
    return c;
  }
  const MethodInputs<double> in = make_inputs<double>(config, HashSource::kLsh);
  c.tolerance = 1.0;
  if (config.method == Method::kHash) {
    c.measured = hash_coverage(in.q_hash, in.k_hash, config.blocks, config.exclude_self).coverage();
    c.passed = c.measured == 1.0;
    c.detail = "hash schedule must cover every same-bucket causal pair";
  } else {
    const double full = lsh_coverage(in.q_hash, in.k_hash, ChunkSpec{config.length}, config.exclude_self).coverage();
    c.measured = lsh_coverage(in.q_hash, in.k_hash, ChunkSpec{config.chunk}, config.exclude_self).coverage();
    c.passed = full == 1.0 && c.measured >= 0.0 && c.measured <= 1.0;
    c.detail = "chunk = T gives " + fmt_double(full, "%.6f") + "; configured chunk value is informational";
  }
  return c;
}

template <typename T>
VerifyReport verify_impl(const BenchConfig& config) {
  VerifyReport report{config, {}};
  report.checks.push_back(oracle_check<T>(config));
  report.checks.push_back(gradient_check(config));
  report.checks.push_back(nan_check<T>(config));
  report.checks.push_back(coverage_check(config));
  return report;
}

template <typename T>
BenchRecord bench_impl(const BenchConfig& config) {
  const MethodInputs<T> in = make_inputs<T>(config, HashSource::kUniform);
  const Tensor4<T> dO = random_tensor<T>(config.shape(), derive(config.seed, kSeedDo), {}, Layout::kSeqMajor);
  const bool backward = config.method != Method::kNaive;
  std::vector<double> pre, fwd, bwd, post;
  std::uint64_t tiles = 0;
  for (std::size_t r = 0; r <= config.reps; ++r) {
    const Pass<T> p = full_pass(config, in, dO, backward);
    tiles = p.tiles;
    if (r == 0) continue;  // warm-up
    pre.push_back(p.pre_ms);
    fwd.push_back(p.fwd_ms);
    bwd.push_back(p.bwd_ms);
    post.push_back(p.post_ms);
  }
  BenchRecord rec;
  rec.config = config;
  rec.fwd_ms = median(fwd);
  if (config.method != Method::kNaive) {
    rec.pre_ms = median(pre);
    rec.bwd_ms = median(bwd);
    rec.post_ms = median(post);
    const std::uint64_t expected = method_tiles(config, in);
    if (tiles != expected) {
      throw std::logic_error("kernel computed " + std::to_string(tiles) + " tiles, schedule has " +
                             std::to_string(expected));
    }
    rec.tiles = tiles;
  }
  return rec;
}

}  // namespace

VerifyReport run_verify(const BenchConfig& config) {
  config.validate();
  return config.precision == 64 ? verify_impl<double>(config) : verify_impl<float>(config);
}

BenchRecord run_bench(const BenchConfig& config) {
  config.validate();
  return config.precision == 64 ? bench_impl<double>(config) : bench_impl<float>(config);
}

std::vector<BenchRecord> run_coverage(const BenchConfig& config, std::size_t seeds) {
  config.validate();
  if (!config.uses_buckets()) throw ParameterError("coverage needs --method hash or reformer");
  if (seeds < 1) throw ParameterError("--num-seeds must be >= 1");
  std::vector<BenchRecord> rows;
  for (std::size_t k = 0; k < seeds; ++k) {
    BenchRecord r;
    r.config = config;
    r.config.seed = config.seed + k;
    const BucketTensor h = random_buckets(config.batch, config.length, config.heads, config.num_buckets,
                                          derive(r.config.seed, kSeedQHash));
    r.coverage = config.method == Method::kHash
                     ? hash_coverage(h, h, config.blocks, config.exclude_self).coverage()
                     : lsh_coverage(h, h, ChunkSpec{config.chunk}, config.exclude_self).coverage();
    rows.push_back(std::move(r));
  }
  return rows;
}

#define SCFA_INSTANTIATE_BENCH(T)                                                                  \
  template MethodInputs<T> make_inputs(const BenchConfig&, HashSource);                            \
  template MaskSpec method_mask(const BenchConfig&, const MethodInputs<T>&);                       \
  template Tensor4<T> method_forward(const BenchConfig&, const MethodInputs<T>&, RunStats*);       \
  template Gradients<T> method_gradients(const BenchConfig&, const MethodInputs<T>&, const Tensor4<T>&); \
  template std::uint64_t method_tiles(const BenchConfig&, const MethodInputs<T>&);

SCFA_INSTANTIATE_BENCH(float)
SCFA_INSTANTIATE_BENCH(double)
#undef SCFA_INSTANTIATE_BENCH

}  // namespace scfa
