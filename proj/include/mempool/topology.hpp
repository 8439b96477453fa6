#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mempool {

using Cycle = std::uint64_t;
using CoreId = std::uint32_t;
using WordAddr = std::uint32_t;

enum class Flavor { Baseline, Systolic, Vectorial };

std::string_view to_string(Flavor f);
std::optional<Flavor> parse_flavor(std::string_view s);

// Architectural parameterization of one cluster. Defaults describe the
// 256-core baseline cluster; use default_config() to get per-flavor defaults.
struct ClusterConfig {
  std::uint32_t cores_per_tile = 4;
  std::uint32_t banks_per_tile = 16;
  std::uint32_t tiles_per_group = 16;
  std::uint32_t groups = 4;
  std::uint32_t bank_words = 256;
  std::uint32_t latency_local_cycles = 1;
  std::uint32_t latency_per_level_cycles = 2;
  Flavor flavor = Flavor::Baseline;
  std::uint32_t fpus_per_vector_unit = 4;
  std::uint32_t max_vector_length = 64;
  std::uint32_t queue_capacity = 4;
  std::uint32_t max_outstanding_loads = 8;
  double frequency_hz = 800e6;
  double flops_per_fpu_cycle = 1.0;

  bool operator==(const ClusterConfig &) const = default;
};

ClusterConfig default_config(Flavor f);

struct ConfigError {
  std::string field;
  std::string message;
};

struct TileCoord {
  std::uint32_t group = 0;
  std::uint32_t tile = 0;
  bool operator==(const TileCoord &) const = default;
};

struct BankId {
  std::uint32_t group = 0;
  std::uint32_t tile = 0;
  std::uint32_t bank = 0;
  bool operator==(const BankId &) const = default;
};

struct ValidationResult;
ValidationResult validate_config(const ClusterConfig &cfg);

/// A configuration that has passed validate_config(). Only constructible
/// through validation, so every consumer may rely on the invariants.
class ValidatedConfig {
public:
  const ClusterConfig &raw() const { return cfg_; }
  const ClusterConfig *operator->() const { return &cfg_; }

  std::uint32_t total_tiles() const { return cfg_.tiles_per_group * cfg_.groups; }
  std::uint32_t total_cores() const { return cfg_.cores_per_tile * total_tiles(); }
  std::uint32_t total_banks() const { return cfg_.banks_per_tile * total_tiles(); }
  std::uint64_t total_spm_words() const {
    return std::uint64_t(total_banks()) * cfg_.bank_words;
  }
  std::uint64_t total_spm_bytes() const { return total_spm_words() * 4; }

  /// Compute units counted by the utilization denominator: FPUs of the vector
  /// units for Vectorial, one FPU-equivalent per core otherwise.
  std::uint32_t compute_units() const;

  TileCoord tile_of_core(CoreId core) const;
  /// Flat tile index, group-major.
  std::uint32_t flat_tile(TileCoord t) const { return t.group * cfg_.tiles_per_group + t.tile; }
  std::uint32_t flat_bank(BankId b) const {
    return (b.group * cfg_.tiles_per_group + b.tile) * cfg_.banks_per_tile + b.bank;
  }
  BankId bank_from_flat(std::uint32_t flat) const;

private:
  explicit ValidatedConfig(ClusterConfig cfg) : cfg_(cfg) {}
  friend ValidationResult validate_config(const ClusterConfig &cfg);

  ClusterConfig cfg_;
};

struct ValidationResult {
  std::optional<ValidatedConfig> config;
  std::vector<ConfigError> errors;

  bool ok() const { return config.has_value(); }
};

ValidationResult validate_config(const ClusterConfig &cfg);

/// Validates or throws std::invalid_argument listing every violation.
ValidatedConfig require_valid(const ClusterConfig &cfg);

/// Hierarchy levels crossed between a core and a tile: 0 same tile,
/// 1 same group, 2 different group.
std::uint32_t levels_crossed(const ValidatedConfig &cfg, CoreId origin, TileCoord target);

Cycle zero_load_latency(const ValidatedConfig &cfg, CoreId origin, BankId target);
Cycle zero_load_latency(const ValidatedConfig &cfg, CoreId origin, TileCoord target);

double peak_gflops(const ValidatedConfig &cfg);

struct AreaLedger {
  double baseline_tile_area = 1.0;
  double systolic_overhead_fraction = 0.05;
  double vectorial_overhead_fraction = 0.08;
  Flavor flavor = Flavor::Baseline;
  double flavor_tile_area = 1.0;
  std::uint32_t tiles = 0;

  double cluster_area() const { return flavor_tile_area * tiles; }
  bool operator==(const AreaLedger &) const = default;
};

AreaLedger area_ledger(const ValidatedConfig &cfg);

} // namespace mempool
