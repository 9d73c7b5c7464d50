#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "scfa/bench.hpp"
#include "scfa/dense_flash.hpp"
#include "scfa/error.hpp"
#include "scfa/oracle.hpp"

using namespace scfa;

namespace {

constexpr Method kAll[] = {Method::kDense, Method::kNaive, Method::kQk, Method::kHash, Method::kReformer};

BenchConfig small(Method m) {
  BenchConfig c;
  c.method = m;
  c.batch = 1;
  c.heads = 2;
  c.length = 96;
  c.dim = 8;
  c.blocks = BlockSpec{16, 32};
  c.num_buckets = 4;
  c.keep_prob = 0.3;
  c.chunk = 16;
  c.seed = 5;
  c.precision = 64;
  c.reps = 1;
  return c;
}

std::size_t count_fields(const std::string& line) { return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1; }

}  // namespace

TEST_CASE("method names round-trip") {
  for (Method m : kAll) CHECK(parse_method(method_name(m)) == m);
  CHECK(method_name(Method::kQk) == "qk");
  CHECK_THROWS_AS(parse_method("sparse"), ParameterError);
}

TEST_CASE("config defaults: B=4, H=48, D=64") {
  const BenchConfig c;
  CHECK(c.batch == 4);
  CHECK(c.heads == 48);
  CHECK(c.dim == 64);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("validate names the violated constraint") {
  auto message = [](const BenchConfig& c) {
    try {
      c.validate();
    } catch (const ParameterError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  BenchConfig c = small(Method::kHash);
  c.num_buckets = 7;
  CHECK(message(c).find("even and >= 2") != std::string::npos);
  c.method = Method::kDense;
  CHECK(message(c).empty());
  c = small(Method::kReformer);
  c.num_buckets = 0;
  CHECK(message(c).find("--nbuckets") != std::string::npos);
  c = small(Method::kQk);
  c.reps = 0;
  CHECK(message(c).find("--reps") != std::string::npos);
  c = small(Method::kQk);
  c.precision = 16;
  CHECK(message(c).find("--precision") != std::string::npos);
  c = small(Method::kQk);
  c.keep_prob = 1.5;
  CHECK(message(c).find("--keep-prob") != std::string::npos);
  c = small(Method::kReformer);
  c.chunk = 0;
  CHECK(message(c).find("--chunk") != std::string::npos);
  c = small(Method::kDense);
  c.length = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("auto_buckets equalizes the average bucket size with the chunk") {
  CHECK(auto_buckets(1024, 64) == 16);
  CHECK(auto_buckets(4096, 64) == 64);
  CHECK(auto_buckets(960, 64) == 16);
  CHECK(auto_buckets(1000, 64) == 16);
  CHECK(auto_buckets(10, 64) == 2);
  CHECK_THROWS_AS(auto_buckets(10, 0), ParameterError);
}

TEST_CASE("CSV schema and round trip") {
  const std::string header = csv_header();
  CHECK(count_fields(header) == 19);
  CHECK(header.rfind("method,B,H,T,D", 0) == 0);

  BenchRecord dense;
  dense.config = small(Method::kDense);
  dense.pre_ms = 0.25;
  dense.fwd_ms = 12.5;
  dense.bwd_ms = 40.125;
  dense.post_ms = 0.0;
  dense.tiles = 123456789;
  BenchRecord qk;
  qk.config = small(Method::kQk);
  qk.config.keep_prob = 0.1 + 0.2;  // not representable in few digits
  qk.max_rel_err = 2.5e-13;
  BenchRecord reformer;
  reformer.config = small(Method::kReformer);
  reformer.coverage = 1.0 / 3.0;

  const std::string row = csv_row(dense);
  CHECK(count_fields(row) == 19);
  // bucket, keep and chunk cells are empty for the dense method
  CHECK(row.find(",,,,") != std::string::npos);

  std::stringstream io;
  write_csv(io, {dense, qk, reformer});
  const auto back = read_csv(io);
  REQUIRE(back.size() == 3);
  CHECK(back[0].config.method == Method::kDense);
  CHECK(back[0].config.length == 96);
  CHECK(back[0].config.blocks.block_n == 32);
  CHECK(back[0].fwd_ms == 12.5);
  CHECK(back[0].bwd_ms == 40.125);
  CHECK(back[0].tiles == std::optional<std::uint64_t>(123456789));
  CHECK_FALSE(back[0].max_rel_err.has_value());
  CHECK_FALSE(back[0].coverage.has_value());
  CHECK(back[1].config.keep_prob == qk.config.keep_prob);
  CHECK(*back[1].max_rel_err == doctest::Approx(2.5e-13));
  CHECK_FALSE(back[1].fwd_ms.has_value());
  CHECK(back[2].config.num_buckets == 4);
  CHECK(back[2].config.chunk == 16);
  CHECK(*back[2].coverage == 1.0 / 3.0);
}

TEST_CASE("read_csv rejects malformed input") {
  std::stringstream bad_header("method,B\nqk,1\n");
  CHECK_THROWS_AS(read_csv(bad_header), FormatError);

  std::stringstream short_row(csv_header() + "\nqk,1,2\n");
  CHECK_THROWS_AS(read_csv(short_row), FormatError);

  BenchRecord r;
  r.config = small(Method::kDense);
  std::string row = csv_row(r);
  row.replace(row.find(",1,"), 3, ",x,");
  std::stringstream bad_number(csv_header() + "\n" + row + "\n");
  CHECK_THROWS_AS(read_csv(bad_number), FormatError);

  std::stringstream empty;
  CHECK_THROWS_AS(read_csv(empty), FormatError);
}

TEST_CASE("every method matches the oracle on its own mask") {
  for (Method m : kAll) {
    const auto config = small(m);
    const auto in = make_inputs<double>(config, HashSource::kLsh);
    RunStats stats;
    const auto out = method_forward(config, in, &stats);
    const auto mask = method_mask(config, in);
    const auto ref = naive_attention(to_layout(in.Q, Layout::kHeadMajor), to_layout(in.K, Layout::kHeadMajor),
                                     to_layout(in.V, Layout::kHeadMajor), mask, 0.0);
    CAPTURE(method_name(m));
    CHECK(out.layout() == Layout::kSeqMajor);
    CHECK(max_rel_error(to_layout(out, Layout::kHeadMajor), ref) < 1e-12);
    if (m != Method::kNaive) CHECK(stats.tiles_computed == method_tiles(config, in));
  }
}

TEST_CASE("tile counts: dense formula, and qk without drops equals dense") {
  auto config = small(Method::kDense);
  const auto dense = method_tiles(config, make_inputs<float>(config));
  CHECK(dense == config.batch * config.heads * dense_tile_count(config.length, config.blocks));
  config.method = Method::kQk;
  config.keep_prob = 0.0;
  CHECK(method_tiles(config, make_inputs<float>(config)) == dense);
  config.keep_prob = 0.5;
  CHECK(method_tiles(config, make_inputs<float>(config)) < dense);
}

TEST_CASE("verify passes on small configurations of every method") {
  for (Method m : kAll) {
    const auto report = run_verify(small(m));
    CAPTURE(method_name(m));
    CHECK(report.passed());
    REQUIRE(report.oracle_error().has_value());
    CHECK(*report.oracle_error() < 1e-12);
    std::size_t applicable = 0;
    for (const auto& c : report.checks) applicable += c.applicable;
    CHECK(applicable >= 2);
    if (m == Method::kHash) CHECK(report.coverage() == std::optional<double>(1.0));
  }
}

TEST_CASE("bench and coverage records") {
  auto config = small(Method::kHash);
  config.precision = 32;
  const auto r = run_bench(config);
  REQUIRE(r.tiles.has_value());
  CHECK(*r.tiles == method_tiles(config, make_inputs<float>(config)));
  for (const auto& ms : {r.pre_ms, r.fwd_ms, r.bwd_ms, r.post_ms}) {
    REQUIRE(ms.has_value());
    CHECK(*ms >= 0.0);
  }
  const auto rows = run_coverage(config, 4);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(rows[i].config.seed == config.seed + i);
    CHECK(rows[i].coverage == std::optional<double>(1.0));
  }
  config.method = Method::kReformer;
  config.length = 512;
  for (const auto& row : run_coverage(config, 3)) {
    REQUIRE(row.coverage.has_value());
    CHECK(*row.coverage < 1.0);
    CHECK(*row.coverage > 0.0);
  }
}
