#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mempool/engine.hpp"
#include "mempool/topology.hpp"

namespace mempool {

/// Cycle breakdown of one core (or the cluster aggregate) as fractions of
/// its accounted cycles.
struct CycleBreakdown {
  double busy = 0.0;
  std::array<double, kStallReasonCount> stalls{};
  double idle = 0.0;

  double stall_total() const;
  bool operator==(const CycleBreakdown &) const = default;
};

struct SimReport {
  ClusterConfig config;
  KernelMetadata kernel;
  RunOutcome outcome = RunOutcome::Completed;
  /// Set when the counters come from an aborted run.
  bool partial = false;
  std::string diagnostic;

  Cycle total_cycles = 0;
  std::uint32_t cores = 0;
  std::uint32_t compute_units = 0;
  std::uint64_t fma_slots_used = 0;
  std::uint64_t fma_slots_available = 0;
  double utilization = 0.0;
  double peak_gflops = 0.0;
  double achieved_gflops = 0.0;

  std::vector<CycleBreakdown> per_core;
  CycleBreakdown aggregate;

  /// Mean per-core instruction counts.
  double loads_per_core = 0.0;
  double stores_per_core = 0.0;
  double instructions_per_core = 0.0;
  std::uint64_t memory_requests = 0;
  std::uint64_t bank_conflict_cycles = 0;
  std::uint64_t queue_elements = 0;
  std::uint64_t checksum = 0;

  AreaLedger area;

  bool operator==(const SimReport &) const = default;
};

/// Aggregates raw counters. Utilization counts every compute unit on every
/// cycle of the run; achieved GFLOP/s is utilization × peak by definition.
SimReport build_report(const ValidatedConfig &cfg, const RawCounters &counters);

struct TradeoffRow {
  Flavor flavor = Flavor::Baseline;
  double tile_area = 0.0;
  double utilization = 0.0;
  double achieved_gflops = 0.0;
  /// (util − util_baseline) / util_baseline, and likewise for tile area.
  double perf_delta = 0.0;
  double area_delta = 0.0;
  bool operator==(const TradeoffRow &) const = default;
};

struct TradeoffTable {
  MatmulDims dims;
  std::vector<TradeoffRow> rows;
};

class ReportMismatch : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// One row per report, in input order. Deltas are relative to the first
/// Baseline report, or to the first report if there is none. Throws
/// ReportMismatch if the reports cover different problem dimensions.
TradeoffTable compare_flavors(const std::vector<SimReport> &reports);

/// Column names shared by the text table and the CSV output.
const std::vector<std::string> &report_columns();
const std::vector<std::string> &tradeoff_columns();

std::string render_table(const std::vector<SimReport> &reports);
std::string render_csv(const std::vector<SimReport> &reports);
std::string render_json(const std::vector<SimReport> &reports);

std::string render_table(const TradeoffTable &t);
std::string render_csv(const TradeoffTable &t);
std::string render_json(const TradeoffTable &t);

/// Writes reports as CSV (.csv) or JSON (anything else).
void write_reports(const std::filesystem::path &path, const std::vector<SimReport> &reports);
void write_tradeoff(const std::filesystem::path &path, const TradeoffTable &t,
                    const std::vector<SimReport> &reports);

} // namespace mempool
