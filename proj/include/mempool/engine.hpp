#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "mempool/core.hpp"
#include "mempool/kernel.hpp"
#include "mempool/topology.hpp"

namespace mempool {

struct RunLimits {
  Cycle max_cycles = 100'000'000;
  /// Consecutive cycles without any progress before the run is declared
  /// deadlocked.
  Cycle watchdog = 10'000;
};

enum class RunOutcome : std::uint8_t { Completed, DeadlockDetected, CycleLimitExceeded };

std::string_view to_string(RunOutcome o);

/// The program does not fit the configuration (see check_program).
class ProgramConfigMismatch : public std::invalid_argument {
public:
  explicit ProgramConfigMismatch(std::vector<std::string> problems);
  const std::vector<std::string> &problems() const { return problems_; }

private:
  std::vector<std::string> problems_;
};

struct CoreCounters {
  std::uint64_t busy = 0;
  std::array<std::uint64_t, kStallReasonCount> stalls{};
  std::uint64_t idle = 0;
  std::uint64_t fma_issued = 0;
  std::array<std::uint64_t, kOpcodeCount> issued{};

  std::uint64_t stall_total() const;
  std::uint64_t total() const { return busy + stall_total() + idle; }
  bool operator==(const CoreCounters &) const = default;
};

struct VectorCounters {
  std::uint32_t tile = 0;
  std::uint64_t active_element_slots = 0;
  std::uint64_t element_requests = 0;
  std::uint64_t busy_cycles = 0;
  bool operator==(const VectorCounters &) const = default;
};

struct QueueCounters {
  QueueId id = 0;
  std::uint64_t pushed = 0;
  std::uint64_t popped = 0;
  std::uint64_t push_digest = 0;
  std::uint64_t pop_digest = 0;
  bool operator==(const QueueCounters &) const = default;
};

/// One edge of the wait graph captured when a run aborts.
struct WaitEdge {
  CoreId core = 0;
  StallReason reason = StallReason::None;
  QueueId queue = kNoQueue;
  /// The core at the other end of the queue, if any.
  CoreId peer = 0;
  bool operator==(const WaitEdge &) const = default;
};

struct RawCounters {
  RunOutcome outcome = RunOutcome::Completed;
  std::string diagnostic;
  std::vector<WaitEdge> wait_graph;
  /// Queues whose consumer was blocked on them when the run aborted.
  std::vector<QueueId> starved_queues;

  Cycle total_cycles = 0;
  std::vector<CoreCounters> cores;
  std::vector<VectorCounters> vector_units;
  std::vector<QueueCounters> queues;
  std::uint64_t scalar_fma_slots = 0;
  std::uint64_t vector_fma_slots = 0;
  std::uint64_t memory_requests = 0;
  std::uint64_t bank_conflict_cycles = 0;
  std::uint64_t queue_elements = 0;
  /// Order-independent hash of all memory and queue traffic.
  std::uint64_t checksum = 0;
  KernelMetadata kernel;

  std::uint64_t fma_slots_used() const { return scalar_fma_slots + vector_fma_slots; }
  bool completed() const { return outcome == RunOutcome::Completed; }
  bool operator==(const RawCounters &) const = default;
};

/// Column header of the request trace.
inline constexpr std::string_view kTraceHeader =
    "req_id origin group tile bank kind issue grant complete";

/// Simulates `program` on `cfg`. Each cycle runs, in order: response
/// delivery, core issue, bank arbitration, vector unit advance, barrier and
/// watchdog bookkeeping. Throws ProgramConfigMismatch for programs that fail
/// check_program and SimulationFault for run-time contract violations;
/// deadlock and cycle-limit aborts are reported through the outcome.
/// If `trace` is given, one line per completed request is written to it.
RawCounters run(const ValidatedConfig &cfg, const KernelProgram &program,
                const RunLimits &limits = {}, std::ostream *trace = nullptr);

// --- sweeps ---

struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};

/// Parses `key=v1,v2,...`.
SweepAxis parse_axis(std::string_view spec);

/// Kernel-side axis keys (everything else must be a config key).
const std::vector<std::string> &kernel_axis_keys();

struct SweepPoint {
  std::vector<std::pair<std::string, std::string>> settings;
  ClusterConfig config;
  MatmulOptions kernel;
};

struct SweepResult {
  SweepPoint point;
  RawCounters counters;
};

using ProgramGenerator = std::function<KernelProgram(const ValidatedConfig &, const MatmulOptions &)>;

/// Expands the Cartesian product of `axes` over the templates, last axis
/// fastest. A `flavor` value also resets cores_per_tile to that flavor's
/// default. Throws std::invalid_argument for unknown keys or bad values.
std::vector<SweepPoint> expand_sweep(const ClusterConfig &cfg, const MatmulOptions &kernel,
                                     const std::vector<SweepAxis> &axes);

/// Runs every point, up to `threads` at a time. Results are in point order.
std::vector<SweepResult> run_sweep(const ClusterConfig &cfg, const MatmulOptions &kernel,
                                   const std::vector<SweepAxis> &axes,
                                   const ProgramGenerator &generate = gen_matmul,
                                   unsigned threads = 1, const RunLimits &limits = {});

/// Parses `MxNxK`.
MatmulDims parse_dims(std::string_view s);

} // namespace mempool
