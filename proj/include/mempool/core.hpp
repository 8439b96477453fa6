#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mempool/kernel.hpp"
#include "mempool/memsys.hpp"
#include "mempool/topology.hpp"

namespace mempool {

enum class StallReason : std::uint8_t {
  None,
  RawHazard,
  ScoreboardFull,
  QueueFull,
  QueueEmpty,
  Barrier,
  /// Vector dispatch queue full: the scalar core cannot hand off the next
  /// vector instruction.
  VectorBusy,
};

inline constexpr std::size_t kStallReasonCount = 7;

std::string_view to_string(StallReason r);

/// Raised for programs that break the execution contract at run time
/// (wrong queue endpoint, vector op without a vector unit).
class SimulationFault : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Response routing: what a memory request's tag points back to.
enum class TagKind : std::uint8_t { ScalarLoad = 0, ScalarStore = 1, VectorElement = 2 };

struct DecodedTag {
  TagKind kind;
  CoreId core;
  std::uint64_t index; ///< scoreboard slot or vector instruction sequence
};

std::uint64_t make_tag(TagKind kind, CoreId core, std::uint64_t index);
DecodedTag decode_tag(std::uint64_t tag);

struct ScoreboardEntry {
  bool used = false;
  Reg reg = kNoReg;
  std::uint64_t req_id = 0;
  QueueId forward = kNoQueue;
  std::uint64_t forward_slot = 0;
};

struct CoreState {
  CoreId core_id = 0;
  std::size_t pc = 0;
  /// Register contents are opaque tokens; they only feed the traffic checksum.
  std::array<std::uint32_t, kNumRegisters> registers{};
  std::uint32_t pending_mask = 0;
  std::vector<ScoreboardEntry> scoreboard;
  std::uint32_t outstanding_loads = 0;
  std::uint32_t outstanding_stores = 0;
  bool at_barrier = false;
  bool finished = false;

  StallReason stall_reason = StallReason::None;
  /// Queue involved in the last QueueFull/QueueEmpty stall.
  QueueId stall_queue = kNoQueue;

  std::uint64_t compute_busy_cycles = 0;
  std::array<std::uint64_t, kStallReasonCount> stall_cycles{};
  std::uint64_t idle_cycles = 0;
  std::uint64_t fma_issued = 0;
  std::array<std::uint64_t, kOpcodeCount> issued{};

  CoreState(CoreId id, std::uint32_t max_outstanding_loads);

  bool pending(Reg r) const { return (pending_mask >> r) & 1u; }
  std::uint64_t stall_total() const;
  std::uint64_t accounted_cycles() const { return compute_busy_cycles + stall_total() + idle_cycles; }
};

/// One L1-mapped systolic queue. Elements become visible to the consumer
/// after the producer-to-home latency; slots are counted from the moment
/// they are reserved, so a forwarded load holds its slot while in flight.
class SystolicQueue {
public:
  /// Observes every element entering the queue: value, push cycle, and the
  /// cycle it becomes visible to the consumer.
  using PushHook = std::function<void(const SystolicQueue &, std::uint32_t, Cycle, Cycle)>;

  SystolicQueue(const QueueEdge &edge, std::uint32_t capacity, TileCoord home);

  QueueId id() const { return edge_.id; }
  CoreId producer() const { return edge_.producer; }
  CoreId consumer() const { return edge_.consumer; }
  TileCoord home() const { return home_; }
  std::uint32_t capacity() const { return capacity_; }
  std::uint32_t occupancy() const { return std::uint32_t(slots_.size()); }
  bool full() const { return slots_.size() >= capacity_; }

  /// Enqueues `value`, visible from `visible_at`. False if full.
  bool push(CoreId producer, std::uint32_t value, Cycle now, Cycle visible_at);
  /// Claims a slot whose value is filled in later. Returns its sequence number.
  std::optional<std::uint64_t> reserve(CoreId producer);
  void fill(std::uint64_t slot, std::uint32_t value, Cycle now, Cycle visible_at);
  /// Dequeues the head if it is visible at `cycle`.
  std::optional<std::uint32_t> pop(CoreId consumer, Cycle cycle);

  std::uint64_t pushed() const { return tail_seq_; }
  std::uint64_t popped() const { return head_seq_; }
  /// Order-sensitive hashes of the element sequence as enqueued (in slot
  /// order, once each slot is filled) and as dequeued. Equal after a drain
  /// iff nothing was lost, duplicated or reordered (up to hash collisions).
  std::uint64_t push_digest() const { return push_digest_; }
  std::uint64_t pop_digest() const { return pop_digest_; }

  void set_push_hook(PushHook hook) { hook_ = std::move(hook); }

private:
  struct Slot {
    std::uint32_t value = 0;
    Cycle visible_at = kUnsetCycle;
  };

  void check_producer(CoreId c) const;
  void fold_filled();

  QueueEdge edge_;
  std::uint32_t capacity_;
  TileCoord home_;
  std::deque<Slot> slots_;
  std::uint64_t head_seq_ = 0;
  std::uint64_t tail_seq_ = 0;
  std::uint64_t digest_seq_ = 0;
  std::uint64_t push_digest_ = 0;
  std::uint64_t pop_digest_ = 0;
  PushHook hook_;
};

/// Per-tile vector unit: an in-order arithmetic pipe (VFU) and an in-order
/// load/store pipe (VLSU) fed from a dispatch queue. Register dependences
/// (RAW, WAR, WAW) are resolved at dispatch and enforced before an
/// instruction starts.
class VectorUnit {
public:
  static constexpr std::size_t kDispatchDepth = 8;

  VectorUnit(std::uint32_t tile_id, CoreId owner, std::uint32_t fpus);

  /// Accepts a vector instruction unless kDispatchDepth instructions are
  /// still waiting to start.
  bool dispatch(const Instruction &in, Cycle cycle);

  /// Phase 4: retire finished arithmetic, start ready instructions and
  /// inject element requests. Returns true if anything progressed.
  bool advance(Cycle cycle, MemorySystem &mem);

  /// Response for an element request of instruction `seq`.
  void on_response(std::uint64_t seq, Cycle cycle);

  bool idle() const { return window_.empty(); }
  std::uint32_t tile_id() const { return tile_id_; }
  std::uint32_t fpus() const { return fpus_; }
  Cycle busy_until() const { return vfu_busy_until_; }
  std::uint64_t active_element_slots() const { return active_element_slots_; }
  std::uint64_t element_requests() const { return element_requests_; }
  std::uint64_t vfu_busy_cycles() const { return vfu_busy_cycles_; }

private:
  enum class State : std::uint8_t { Waiting, Running, Done };

  struct Op {
    Instruction in;
    std::uint64_t seq = 0;
    State state = State::Waiting;
    std::vector<std::uint64_t> deps;
    std::uint32_t injected = 0;
    std::uint32_t outstanding = 0;
    std::uint32_t requests = 0;
  };

  Op *find(std::uint64_t seq);
  bool done(std::uint64_t seq) const;
  bool ready(const Op &op) const;
  void retire();

  std::uint32_t tile_id_;
  CoreId owner_;
  std::uint32_t fpus_;
  std::deque<Op> window_;
  std::uint64_t next_seq_ = 0;
  std::size_t waiting_ = 0;

  std::array<std::optional<std::uint64_t>, kNumVectorRegisters> last_writer_{};
  std::array<std::vector<std::uint64_t>, kNumVectorRegisters> readers_{};

  std::optional<std::uint64_t> vfu_op_;
  Cycle vfu_busy_until_ = 0;
  std::optional<std::uint64_t> vlsu_op_;

  std::uint64_t active_element_slots_ = 0;
  std::uint64_t element_requests_ = 0;
  std::uint64_t vfu_busy_cycles_ = 0;
};

/// Centralized barrier counter; release is decided by the engine after all
/// cores have issued for the cycle.
struct BarrierState {
  std::uint32_t participants = 0;
  std::uint32_t arrived = 0;
  std::uint64_t generation = 0;
};

struct StepContext {
  const ValidatedConfig &cfg;
  MemorySystem &mem;
  std::span<SystolicQueue *const> queues; ///< indexed by QueueId, null for unused ids
  VectorUnit *vector = nullptr;           ///< the core's tile vector unit, if any
  BarrierState &barrier;
  Cycle cycle = 0;
};

enum class StepResult : std::uint8_t { Issued, Stalled, Idle };

struct IssuedEffect {
  StepResult result = StepResult::Idle;
  Opcode op = Opcode::Nop;
  StallReason stall = StallReason::None;
};

/// Advances one core by one cycle: issues at most one instruction or records
/// the stall reason, and updates the core's cycle counters.
IssuedEffect step_core(CoreState &core, std::span<const Instruction> stream, StepContext &ctx);

/// Delivers a scalar load response: clears the pending register, stores the
/// token, and completes a forwarded queue slot.
void complete_load(CoreState &core, const MemRequest &r, const ValidatedConfig &cfg,
                   std::span<SystolicQueue *const> queues, Cycle cycle);

/// Ordered hash chain step used by the queue digests.
std::uint64_t chain_digest(std::uint64_t digest, std::uint32_t value);

/// Token mixing for the modeled datapath.
std::uint32_t mix_tokens(std::uint32_t a, std::uint32_t b, std::uint32_t c, std::uint32_t salt);

} // namespace mempool
