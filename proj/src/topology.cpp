#include "mempool/topology.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace mempool {

std::string_view to_string(Flavor f) {
  switch (f) {
  case Flavor::Baseline:
    return "baseline";
  case Flavor::Systolic:
    return "systolic";
  case Flavor::Vectorial:
    return "vectorial";
  }
  return "unknown";
}

std::optional<Flavor> parse_flavor(std::string_view s) {
  if (s == "baseline" || s == "Baseline")
    return Flavor::Baseline;
  if (s == "systolic" || s == "Systolic")
    return Flavor::Systolic;
  if (s == "vectorial" || s == "Vectorial")
    return Flavor::Vectorial;
  return std::nullopt;
}

ClusterConfig default_config(Flavor f) {
  ClusterConfig cfg;
  cfg.flavor = f;
  if (f == Flavor::Vectorial)
    cfg.cores_per_tile = 1;
  return cfg;
}

namespace {

void require_count(std::vector<ConfigError> &errs, const char *field, std::uint32_t v,
                   bool pow2) {
  if (v < 1) {
    errs.push_back({field, fmt::format("{} must be ≥ 1", field)});
    return;
  }
  if (pow2 && !std::has_single_bit(v))
    errs.push_back({field, fmt::format("{} must be a power of two (got {})", field, v)});
}

} // namespace

ValidationResult validate_config(const ClusterConfig &cfg) {
  std::vector<ConfigError> errs;
  require_count(errs, "cores_per_tile", cfg.cores_per_tile, true);
  require_count(errs, "banks_per_tile", cfg.banks_per_tile, true);
  require_count(errs, "tiles_per_group", cfg.tiles_per_group, true);
  require_count(errs, "groups", cfg.groups, true);
  require_count(errs, "bank_words", cfg.bank_words, false);
  require_count(errs, "latency_local_cycles", cfg.latency_local_cycles, false);
  require_count(errs, "fpus_per_vector_unit", cfg.fpus_per_vector_unit, false);
  require_count(errs, "max_vector_length", cfg.max_vector_length, false);
  require_count(errs, "queue_capacity", cfg.queue_capacity, false);
  require_count(errs, "max_outstanding_loads", cfg.max_outstanding_loads, false);

  if (cfg.cores_per_tile >= 1 && cfg.banks_per_tile < cfg.cores_per_tile)
    errs.push_back({"banks_per_tile",
                    fmt::format("banks_per_tile must be ≥ cores_per_tile ({} < {})",
                                cfg.banks_per_tile, cfg.cores_per_tile)});
  if (cfg.flavor == Flavor::Vectorial && cfg.cores_per_tile != 1)
    errs.push_back({"cores_per_tile",
                    fmt::format("vectorial flavor requires cores_per_tile = 1 (got {})",
                                cfg.cores_per_tile)});
  if (!(cfg.frequency_hz >= 0.0) || !std::isfinite(cfg.frequency_hz))
    errs.push_back({"frequency_hz", "frequency_hz must be a finite value ≥ 0"});
  if (!(cfg.flops_per_fpu_cycle > 0.0) || !std::isfinite(cfg.flops_per_fpu_cycle))
    errs.push_back({"flops_per_fpu_cycle", "flops_per_fpu_cycle must be a finite value > 0"});

  // Word addresses and core ids are 32-bit throughout the simulator.
  if (errs.empty()) {
    const std::uint64_t tiles = std::uint64_t(cfg.tiles_per_group) * cfg.groups;
    const std::uint64_t words = tiles * cfg.banks_per_tile * cfg.bank_words;
    if (words > (std::uint64_t(1) << 32))
      errs.push_back({"bank_words", "total SPM exceeds the 32-bit word address space"});
    if (tiles * cfg.cores_per_tile > (std::uint64_t(1) << 20))
      errs.push_back({"groups", "more than 2^20 cores is not supported"});
  }

  ValidationResult r;
  r.errors = std::move(errs);
  if (r.errors.empty())
    r.config = ValidatedConfig(cfg);
  return r;
}

ValidatedConfig require_valid(const ClusterConfig &cfg) {
  auto r = validate_config(cfg);
  if (r.ok())
    return *r.config;
  std::string msg = "invalid cluster configuration:";
  for (const auto &e : r.errors)
    msg += fmt::format("\n  {}: {}", e.field, e.message);
  throw std::invalid_argument(msg);
}

std::uint32_t ValidatedConfig::compute_units() const {
  if (cfg_.flavor == Flavor::Vectorial)
    return total_tiles() * cfg_.fpus_per_vector_unit;
  return total_cores();
}

TileCoord ValidatedConfig::tile_of_core(CoreId core) const {
  if (core >= total_cores())
    throw std::out_of_range(fmt::format("core id {} out of range (cluster has {} cores)",
                                        core, total_cores()));
  const std::uint32_t flat = core / cfg_.cores_per_tile;
  return {flat / cfg_.tiles_per_group, flat % cfg_.tiles_per_group};
}

BankId ValidatedConfig::bank_from_flat(std::uint32_t flat) const {
  const std::uint32_t bank = flat % cfg_.banks_per_tile;
  const std::uint32_t tile_flat = flat / cfg_.banks_per_tile;
  return {tile_flat / cfg_.tiles_per_group, tile_flat % cfg_.tiles_per_group, bank};
}

std::uint32_t levels_crossed(const ValidatedConfig &cfg, CoreId origin, TileCoord target) {
  if (target.group >= cfg->groups || target.tile >= cfg->tiles_per_group)
    throw std::out_of_range(
        fmt::format("tile (g{}, t{}) out of range", target.group, target.tile));
  const TileCoord src = cfg.tile_of_core(origin);
  if (src.group != target.group)
    return 2;
  return src.tile == target.tile ? 0 : 1;
}

Cycle zero_load_latency(const ValidatedConfig &cfg, CoreId origin, TileCoord target) {
  return cfg->latency_local_cycles +
         Cycle(cfg->latency_per_level_cycles) * levels_crossed(cfg, origin, target);
}

Cycle zero_load_latency(const ValidatedConfig &cfg, CoreId origin, BankId target) {
  if (target.bank >= cfg->banks_per_tile)
    throw std::out_of_range(fmt::format("bank index {} out of range", target.bank));
  return zero_load_latency(cfg, origin, TileCoord{target.group, target.tile});
}

double peak_gflops(const ValidatedConfig &cfg) {
  return double(cfg.compute_units()) * cfg->frequency_hz * cfg->flops_per_fpu_cycle / 1e9;
}

AreaLedger area_ledger(const ValidatedConfig &cfg) {
  AreaLedger a;
  a.flavor = cfg->flavor;
  a.tiles = cfg.total_tiles();
  switch (cfg->flavor) {
  case Flavor::Baseline:
    a.flavor_tile_area = a.baseline_tile_area;
    break;
  case Flavor::Systolic:
    a.flavor_tile_area = a.baseline_tile_area * (1.0 + a.systolic_overhead_fraction);
    break;
  case Flavor::Vectorial:
    a.flavor_tile_area = a.baseline_tile_area * (1.0 + a.vectorial_overhead_fraction);
    break;
  }
  return a;
}

} // namespace mempool
