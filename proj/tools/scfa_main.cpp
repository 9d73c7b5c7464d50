// scfa: verification suites, tile/runtime benchmarks and coverage runs.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "scfa/bench.hpp"
#include "scfa/error.hpp"
#include "scfa/parallel.hpp"

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

struct Options {
  std::string command;
  std::string method = "dense";
  std::size_t batch = 4;
  std::size_t heads = 48;
  std::vector<std::size_t> lengths{1024};
  std::size_t dim = 64;
  std::size_t block_m = 64;
  std::size_t block_n = 64;
  std::int32_t nbuckets = 16;
  double keep_prob = 0.0;
  std::size_t chunk = 64;
  std::uint64_t seed = 0;
  std::optional<int> precision;
  std::size_t reps = 3;
  std::string exclude_self = "on";
  std::string out;
  std::size_t num_seeds = 20;
  std::size_t workers = 0;
};

scfa::BenchConfig make_config(const Options& o, std::size_t length) {
  scfa::BenchConfig c;
  c.method = scfa::parse_method(o.method);
  c.batch = o.batch;
  c.heads = o.heads;
  c.length = length;
  c.dim = o.dim;
  c.blocks = {o.block_m, o.block_n};
  c.num_buckets = o.nbuckets == 0 ? scfa::auto_buckets(length, o.chunk) : o.nbuckets;
  c.keep_prob = o.keep_prob;
  c.chunk = o.chunk;
  c.seed = o.seed;
  c.precision = o.precision.value_or(o.command == "verify" ? 64 : 32);
  c.reps = o.reps;
  c.exclude_self = o.exclude_self == "on";
  c.validate();
  return c;
}

void emit(const Options& o, const std::vector<scfa::BenchRecord>& rows) {
  if (o.out.empty()) {
    scfa::write_csv(std::cout, rows);
    return;
  }
  std::ofstream f(o.out);
  if (!f) throw std::invalid_argument("cannot open --out path '" + o.out + "' for writing");
  scfa::write_csv(f, rows);
  if (!f.flush()) throw std::invalid_argument("failed writing --out path '" + o.out + "'");
}

int verify(const Options& o) {
  std::vector<scfa::BenchRecord> rows;
  bool ok = true;
  for (std::size_t t : o.lengths) {
    const scfa::BenchConfig c = make_config(o, t);
    if (c.uses_buckets()) {
      std::fprintf(stderr, "[INFO] method=%s T=%zu lsh: one projection per (batch, head), nb=%d, seed=%llu\n",
                   o.method.c_str(), t, c.num_buckets, static_cast<unsigned long long>(c.seed));
    }
    const scfa::VerifyReport report = scfa::run_verify(c);
    for (const auto& check : report.checks) {
      const char* tag = !check.applicable ? "SKIP" : check.passed ? "PASS" : "FAIL";
      std::fprintf(stderr, "[%s] method=%s T=%zu precision=%d %-10s measured=%.3e tol=%.1e  %s\n", tag,
                   o.method.c_str(), t, c.precision, check.name.c_str(), check.measured, check.tolerance,
                   check.detail.c_str());
    }
    ok = ok && report.passed();
    scfa::BenchRecord r;
    r.config = c;
    r.max_rel_err = report.oracle_error();
    r.coverage = report.coverage();
    rows.push_back(r);
  }
  if (!o.out.empty()) emit(o, rows);
  std::fprintf(stderr, "%s\n", ok ? "verify: all checks passed" : "verify: FAILED");
  return ok ? kExitPass : kExitFail;
}

int bench(const Options& o) {
  std::vector<scfa::BenchRecord> rows;
  for (std::size_t t : o.lengths) {
    const scfa::BenchRecord r = scfa::run_bench(make_config(o, t));
    std::fprintf(stderr, "%s T=%zu fwd=%.3f ms bwd=%.3f ms tiles=%llu\n", o.method.c_str(), t, r.fwd_ms.value_or(0),
                 r.bwd_ms.value_or(0), static_cast<unsigned long long>(r.tiles.value_or(0)));
    rows.push_back(r);
  }
  emit(o, rows);
  return kExitPass;
}

int coverage(const Options& o) {
  std::vector<scfa::BenchRecord> rows;
  for (std::size_t t : o.lengths) {
    const scfa::BenchConfig c = make_config(o, t);
    auto part = scfa::run_coverage(c, o.num_seeds);
    std::vector<double> cov;
    for (const auto& r : part) cov.push_back(*r.coverage);
    std::sort(cov.begin(), cov.end());
    const double med = cov.size() % 2 ? cov[cov.size() / 2] : 0.5 * (cov[cov.size() / 2 - 1] + cov[cov.size() / 2]);
    std::fprintf(stderr, "%s T=%zu nb=%d median coverage=%.6f over %zu seeds\n", o.method.c_str(), t,
                 c.num_buckets, med, cov.size());
    rows.insert(rows.end(), part.begin(), part.end());
  }
  emit(o, rows);
  return kExitPass;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Sparse causal flash attention: verification, benchmarks and coverage"};
  app.add_option("command", o.command, "verify | bench | coverage")
      ->required()
      ->check(CLI::IsMember({"verify", "bench", "coverage"}));
  app.add_option("--method", o.method, "dense | naive | qk | hash | reformer")->capture_default_str();
  app.add_option("--batch", o.batch, "batch size B")->capture_default_str();
  app.add_option("--heads", o.heads, "heads H")->capture_default_str();
  app.add_option("--seq-len", o.lengths, "sequence lengths, comma separated")->delimiter(',')->capture_default_str();
  app.add_option("--dim", o.dim, "head dimension D")->capture_default_str();
  app.add_option("--block-m", o.block_m, "query block size")->capture_default_str();
  app.add_option("--block-n", o.block_n, "key block size")->capture_default_str();
  app.add_option("--nbuckets", o.nbuckets, "bucket count; 0 picks ceil(T / chunk) rounded to even")
      ->capture_default_str();
  app.add_option("--keep-prob", o.keep_prob, "per (position, head) drop probability for qk")->capture_default_str();
  app.add_option("--chunk", o.chunk, "chunk length for reformer")->capture_default_str();
  app.add_option("--seed", o.seed, "base seed")->capture_default_str();
  app.add_option("--precision", o.precision, "32 or 64 (default 64 for verify, 32 otherwise)");
  app.add_option("--reps", o.reps, "timed repetitions after one warm-up")->capture_default_str();
  app.add_option("--exclude-self", o.exclude_self, "on | off")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  app.add_option("--out", o.out, "CSV output path (stdout when omitted)");
  app.add_option("--num-seeds", o.num_seeds, "seeds per point for coverage")->capture_default_str();
  app.add_option("--workers", o.workers, "worker threads (0: SCFA_WORKERS or hardware)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (o.workers > 0) scfa::set_worker_count(o.workers);
    if (o.command == "verify") return verify(o);
    if (o.command == "bench") return bench(o);
    return coverage(o);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFail;
  }
}
