#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "mempool/topology.hpp"

namespace mempool {

inline constexpr Cycle kUnsetCycle = std::numeric_limits<Cycle>::max();

enum class RequestKind : std::uint8_t { Read, Write, QueueOp };

std::string_view to_string(RequestKind k);

struct MemRequest {
  std::uint64_t req_id = 0;
  CoreId origin = 0;
  BankId target{};
  std::uint32_t offset = 0;
  RequestKind kind = RequestKind::Read;
  Cycle issue_cycle = 0;
  Cycle grant_cycle = kUnsetCycle;
  Cycle complete_cycle = kUnsetCycle;
  /// Write data, or the word read once the request is granted.
  std::uint32_t data = 0;
  /// Opaque cookie routed back to the requester with the response.
  std::uint64_t tag = 0;
};

struct Location {
  BankId bank;
  std::uint32_t offset = 0;
  bool operator==(const Location &) const = default;
};

/// Cluster-wide word interleaving: consecutive words go to consecutive banks,
/// banks are numbered row-major over (group, tile, bank).
Location map_address(const ValidatedConfig &cfg, WordAddr addr);

/// Zero-initialized word storage for every bank.
class Scratchpad {
public:
  explicit Scratchpad(const ValidatedConfig &cfg);

  std::uint32_t read_word(BankId bank, std::uint32_t offset) const;
  void write_word(BankId bank, std::uint32_t offset, std::uint32_t value);

private:
  std::size_t index(BankId bank, std::uint32_t offset) const;

  ValidatedConfig cfg_;
  std::vector<std::uint32_t> words_;
};

/// Round-robin state of one bank: the core granted last.
struct ArbitrationCursor {
  std::optional<CoreId> last_granted;
};

/// Picks the winner among requests contending for one bank in one cycle:
/// the first core after the last-granted one in circular core order (oldest
/// request first within a core). Updates the cursor and the winner's
/// grant_cycle. Returns the winner's index, or nothing for an empty set.
std::optional<std::size_t> arbitrate(std::span<MemRequest> contenders, Cycle cycle,
                                     ArbitrationCursor &cursor, std::uint32_t num_cores);

/// Banks with per-bank round-robin arbitration (one grant per bank per
/// cycle) and a non-blocking response network that delivers each response
/// zero_load_latency cycles after its grant.
class MemorySystem {
public:
  using CompletionHook = std::function<void(const MemRequest &)>;

  explicit MemorySystem(const ValidatedConfig &cfg);

  /// Queues a request for arbitration. Requests issued in a cycle contend in
  /// that same cycle's arbitration phase. Returns the assigned req_id.
  std::uint64_t issue(CoreId origin, WordAddr addr, RequestKind kind, Cycle cycle,
                      std::uint32_t data = 0, std::uint64_t tag = 0);

  /// Arbitration phase: every bank with waiting requests grants one, performs
  /// the access and schedules the response. Returns the number of grants.
  std::size_t arbitrate(Cycle cycle);

  /// Response phase: hands every response due at `cycle` to `sink`, in grant
  /// order.
  template <typename Sink> std::size_t deliver(Cycle cycle, Sink &&sink) {
    auto &bucket = wheel_[cycle & wheel_mask_];
    std::size_t n = 0;
    for (auto &r : bucket) {
      r.complete_cycle = cycle;
      if (hook_)
        hook_(r);
      sink(static_cast<const MemRequest &>(r));
      ++n;
    }
    in_flight_ -= n;
    bucket.clear();
    return n;
  }

  /// Called for every request when its response is delivered.
  void set_completion_hook(CompletionHook hook) { hook_ = std::move(hook); }

  std::uint64_t next_request_id() { return next_id_++; }
  std::size_t waiting() const { return waiting_; }
  std::size_t in_flight() const { return in_flight_; }
  bool idle() const { return waiting_ == 0 && in_flight_ == 0; }

  const Scratchpad &storage() const { return spm_; }
  Scratchpad &storage() { return spm_; }

  /// Grants per flat bank index since construction.
  std::span<const std::uint64_t> bank_grants() const { return grants_; }
  std::uint64_t conflict_cycles() const { return conflict_cycles_; }

private:
  ValidatedConfig cfg_;
  Scratchpad spm_;
  std::vector<std::vector<MemRequest>> pending_;
  std::vector<ArbitrationCursor> cursors_;
  std::vector<std::uint32_t> active_;
  std::vector<char> is_active_;
  std::vector<std::vector<MemRequest>> wheel_;
  Cycle wheel_mask_ = 0;
  std::vector<std::uint64_t> grants_;
  std::uint64_t conflict_cycles_ = 0;
  std::uint64_t next_id_ = 0;
  std::size_t waiting_ = 0;
  std::size_t in_flight_ = 0;
  CompletionHook hook_;
};

} // namespace mempool
