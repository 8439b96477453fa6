#include <doctest.h>

#include <set>

#include "mempool/config_io.hpp"
#include "mempool/memsys.hpp"
#include "mempool/topology.hpp"

using namespace mempool;

TEST_SUITE("topology") {

TEST_CASE("default configurations") {
  const auto b = require_valid(default_config(Flavor::Baseline));
  CHECK(b.total_cores() == 256);
  CHECK(b.total_tiles() == 64);
  CHECK(b.total_banks() == 1024);
  CHECK(b.total_spm_bytes() == 1024 * 1024);

  const auto v = require_valid(default_config(Flavor::Vectorial));
  CHECK(v->cores_per_tile == 1);
  CHECK(v.compute_units() == 256);
  CHECK(v.total_cores() == 64);
}

TEST_CASE("validation reports every violated field") {
  ClusterConfig c;
  c.cores_per_tile = 3;
  c.banks_per_tile = 0;
  c.frequency_hz = -1;
  const auto r = validate_config(c);
  REQUIRE_FALSE(r.ok());
  std::set<std::string> fields;
  for (const auto &e : r.errors)
    fields.insert(e.field);
  CHECK(fields.count("cores_per_tile"));
  CHECK(fields.count("banks_per_tile"));
  CHECK(fields.count("frequency_hz"));
  CHECK_THROWS_AS(require_valid(c), std::invalid_argument);

  auto vec = default_config(Flavor::Vectorial);
  vec.cores_per_tile = 4;
  CHECK_FALSE(validate_config(vec).ok());
}

TEST_CASE("derived counts match enumeration") {
  for (std::uint32_t g : {1u, 2u, 4u})
    for (std::uint32_t t : {1u, 2u, 8u})
      for (std::uint32_t c : {1u, 2u, 4u}) {
        ClusterConfig cfg;
        cfg.groups = g;
        cfg.tiles_per_group = t;
        cfg.cores_per_tile = c;
        cfg.banks_per_tile = 4 * c;
        cfg.bank_words = 8;
        const auto v = require_valid(cfg);
        std::uint64_t cores = 0, banks = 0;
        for (std::uint32_t gi = 0; gi < g; ++gi)
          for (std::uint32_t ti = 0; ti < t; ++ti) {
            cores += c;
            banks += cfg.banks_per_tile;
          }
        CHECK(v.total_cores() == cores);
        CHECK(v.total_banks() == banks);
        CHECK(v.total_spm_bytes() == banks * 8 * 4);
        std::set<std::uint32_t> flat;
        for (std::uint32_t b = 0; b < v.total_banks(); ++b) {
          const auto id = v.bank_from_flat(b);
          CHECK(v.flat_bank(id) == b);
          flat.insert(b);
        }
        CHECK(flat.size() == banks);
      }
}

TEST_CASE("zero-load latency by hierarchy level") {
  const auto cfg = require_valid(default_config(Flavor::Baseline));
  // Core 0 sits in group 0, tile 0.
  CHECK(zero_load_latency(cfg, 0, TileCoord{0, 0}) == 1);
  CHECK(zero_load_latency(cfg, 0, TileCoord{0, 5}) == 3);
  CHECK(zero_load_latency(cfg, 0, TileCoord{2, 0}) == 5);
  CHECK(zero_load_latency(cfg, 0, BankId{3, 15, 15}) == 5);
  CHECK_THROWS_AS(zero_load_latency(cfg, 0, TileCoord{4, 0}), std::out_of_range);
  CHECK_THROWS_AS(zero_load_latency(cfg, 0, BankId{0, 0, 16}), std::out_of_range);

  std::set<Cycle> seen;
  for (CoreId c = 0; c < cfg.total_cores(); c += 7)
    for (std::uint32_t g = 0; g < 4; ++g)
      for (std::uint32_t t = 0; t < 16; ++t)
        seen.insert(zero_load_latency(cfg, c, TileCoord{g, t}));
  CHECK(seen == std::set<Cycle>{1, 3, 5});
}

TEST_CASE("latency depends only on the same-tile and same-group classification") {
  const auto cfg = require_valid(default_config(Flavor::Baseline));
  for (CoreId c = 0; c < cfg.total_cores(); c += 13) {
    const auto home = cfg.tile_of_core(c);
    for (std::uint32_t g = 0; g < cfg->groups; ++g)
      for (std::uint32_t t = 0; t < cfg->tiles_per_group; ++t) {
        const Cycle expect = g != home.group ? 5 : (t != home.tile ? 3 : 1);
        CHECK(zero_load_latency(cfg, c, TileCoord{g, t}) == expect);
      }
  }
}

TEST_CASE("peak throughput") {
  for (auto f : {Flavor::Baseline, Flavor::Systolic, Flavor::Vectorial})
    CHECK(peak_gflops(require_valid(default_config(f))) == doctest::Approx(204.8));
  auto c = default_config(Flavor::Baseline);
  c.frequency_hz = 0;
  CHECK(peak_gflops(require_valid(c)) == 0.0);
  c.frequency_hz = 1.6e9;
  CHECK(peak_gflops(require_valid(c)) == doctest::Approx(409.6));
  c.frequency_hz = 800e6;
  c.groups = 8;
  CHECK(peak_gflops(require_valid(c)) == doctest::Approx(409.6));
}

TEST_CASE("area ledger") {
  CHECK(area_ledger(require_valid(default_config(Flavor::Baseline))).flavor_tile_area == 1.0);
  CHECK(area_ledger(require_valid(default_config(Flavor::Systolic))).flavor_tile_area ==
        doctest::Approx(1.05));
  const auto v = area_ledger(require_valid(default_config(Flavor::Vectorial)));
  CHECK(v.flavor_tile_area == doctest::Approx(1.08));
  CHECK(v.cluster_area() == doctest::Approx(1.08 * 64));
}

TEST_CASE("address mapping") {
  const auto cfg = require_valid(default_config(Flavor::Baseline));
  CHECK(map_address(cfg, 0) == Location{BankId{0, 0, 0}, 0});
  CHECK(map_address(cfg, 1024) == Location{BankId{0, 0, 0}, 1});
  CHECK(map_address(cfg, 17) == Location{BankId{0, 1, 1}, 0});
  CHECK(map_address(cfg, 1023) == Location{BankId{3, 15, 15}, 0});
  CHECK_THROWS(map_address(cfg, WordAddr(cfg.total_spm_words())));
}

} // topology

TEST_SUITE("config_io") {

TEST_CASE("round trip through the text form") {
  auto c = default_config(Flavor::Systolic);
  c.queue_capacity = 6;
  c.frequency_hz = 1.25e9;
  CHECK(parse_config(dump_config(c)) == c);
}

TEST_CASE("omitted fields take the named flavor's defaults") {
  const auto v = parse_config("flavor: vectorial\nfpus_per_vector_unit: 8\n");
  CHECK(v.flavor == Flavor::Vectorial);
  CHECK(v.cores_per_tile == 1);
  CHECK(v.fpus_per_vector_unit == 8);
  CHECK(parse_config("") == default_config(Flavor::Baseline));
}

TEST_CASE("malformed documents") {
  CHECK_THROWS_AS(parse_config("no_such_key: 1\n"), ConfigParseError);
  CHECK_THROWS_AS(parse_config("groups: four\n"), ConfigParseError);
  CHECK_THROWS_AS(parse_config("groups: -1\n"), ConfigParseError);
  CHECK_THROWS_AS(parse_config("flavor: scalar\n"), ConfigParseError);
  CHECK_THROWS_AS(parse_config("groups:\n  nested: 1\n"), ConfigParseError);
  CHECK_THROWS_AS(load_config("/nonexistent/cluster.yaml"), ConfigParseError);
}

TEST_CASE("apply_setting covers every key") {
  for (const auto &k : config_keys()) {
    ClusterConfig c;
    const std::string v = k == "flavor" ? "systolic" : "2";
    CHECK_NOTHROW(apply_setting(c, k, v));
  }
  ClusterConfig c;
  CHECK_THROWS_AS(apply_setting(c, "bogus", "1"), ConfigParseError);
}

} // config_io
