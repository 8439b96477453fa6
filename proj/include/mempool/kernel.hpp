#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mempool/topology.hpp"

namespace mempool {

enum class Opcode : std::uint8_t {
  ComputeFMA,
  ComputeALU,
  Load,
  Store,
  QPush,
  QPop,
  VLoad,
  VStore,
  VFMA,
  Barrier,
  Nop,
};

inline constexpr std::size_t kOpcodeCount = 11;

std::string_view mnemonic(Opcode op);

using Reg = std::uint8_t;
using QueueId = std::uint16_t;

inline constexpr Reg kNoReg = 0xFF;
inline constexpr QueueId kNoQueue = 0xFFFF;
inline constexpr std::uint32_t kNumRegisters = 32;
inline constexpr std::uint32_t kNumVectorRegisters = 32;
inline constexpr std::size_t kMaxSources = 3;

/// One abstract instruction. Scalar opcodes name integer/FP registers,
/// vector opcodes name vector registers. 16 bytes so that full-size
/// programs (tens of millions of instructions) stay in memory.
struct Instruction {
  Opcode op = Opcode::Nop;
  Reg dst = kNoReg;
  std::uint8_t num_src = 0;
  std::uint8_t flags = 0;
  std::array<Reg, kMaxSources> src{kNoReg, kNoReg, kNoReg};
  std::uint8_t reserved = 0;
  std::uint16_t vector_length = 0;
  /// Load/QPop only: also push the obtained element into this queue.
  QueueId forward = kNoQueue;
  /// Word address for memory ops, queue id for QPush/QPop.
  std::uint32_t operand = 0;

  /// VLoad only: read one word and replicate it over all elements.
  static constexpr std::uint8_t kBroadcast = 0x1;

  std::span<const Reg> sources() const { return {src.data(), num_src}; }
  WordAddr address() const { return operand; }
  QueueId queue() const { return QueueId(operand); }
  bool broadcast() const { return (flags & kBroadcast) != 0; }
  bool has_forward() const { return forward != kNoQueue; }

  bool operator==(const Instruction &) const = default;

  static Instruction fma(Reg acc, Reg a, Reg b);
  static Instruction alu(Reg dst, std::initializer_list<Reg> srcs = {});
  static Instruction load(Reg dst, WordAddr addr, std::initializer_list<Reg> srcs = {},
                          QueueId forward = kNoQueue);
  static Instruction store(Reg value, WordAddr addr, std::initializer_list<Reg> srcs = {});
  static Instruction qpush(Reg value, QueueId q);
  static Instruction qpop(Reg dst, QueueId q, QueueId forward = kNoQueue);
  static Instruction vload(Reg vdst, WordAddr addr, std::uint16_t vl, bool broadcast = false);
  static Instruction vstore(Reg vsrc, WordAddr addr, std::uint16_t vl);
  static Instruction vfma(Reg vacc, Reg va, Reg vb, std::uint16_t vl);
  static Instruction barrier();
  static Instruction nop();
};

static_assert(sizeof(Instruction) == 16);

bool is_memory_op(Opcode op);
bool is_queue_op(Opcode op);
bool is_vector_op(Opcode op);

struct QueueEdge {
  QueueId id = 0;
  CoreId producer = 0;
  CoreId consumer = 0;
  bool operator==(const QueueEdge &) const = default;
};

struct MatmulDims {
  std::uint32_t M = 0, N = 0, K = 0;
  bool operator==(const MatmulDims &) const = default;
};

struct KernelMetadata {
  std::string name;
  MatmulDims dims;
  /// Generator parameters in emission order (unroll, grid, vl, blocking...).
  std::vector<std::pair<std::string, std::int64_t>> params;
  bool operator==(const KernelMetadata &) const = default;
};

struct KernelProgram {
  /// Indexed by core id.
  std::vector<std::vector<Instruction>> streams;
  std::vector<QueueEdge> queues;
  KernelMetadata meta;

  bool operator==(const KernelProgram &) const = default;
};

/// Thrown by the generators for unsupported problem shapes or parameters.
class KernelError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major operands placed back to back from word 0: A (M×K), B (K×N), C (M×N).
struct MatmulLayout {
  WordAddr a_base = 0, b_base = 0, c_base = 0;
  std::uint32_t M = 0, N = 0, K = 0;

  explicit MatmulLayout(MatmulDims d);
  WordAddr a(std::uint32_t i, std::uint32_t k) const { return a_base + i * K + k; }
  WordAddr b(std::uint32_t k, std::uint32_t j) const { return b_base + k * N + j; }
  WordAddr c(std::uint32_t i, std::uint32_t j) const { return c_base + i * N + j; }
  std::uint64_t total_words() const { return std::uint64_t(M) * K + std::uint64_t(K) * N + std::uint64_t(M) * N; }
};

/// Loop-overhead calibration of the scalar kernels. These defaults are the
/// calibration point for the baseline flavor's matmul utilization.
struct BaselineParams {
  std::uint32_t unroll = 4;
  std::uint32_t block_rows = 4;
  std::uint32_t block_cols = 4;
  /// Induction/branch ALU ops per inner-loop iteration (one iteration covers
  /// `unroll` k-steps).
  std::uint32_t loop_alu_ops = 2;
  /// Start each core's k-loop at k = core_id mod K to spread bank accesses.
  bool stagger_k = true;
};

struct SystolicParams {
  std::uint32_t rows = 0; ///< 0: choose the squarest grid for the core count
  std::uint32_t cols = 0;
  std::uint32_t unroll = 4;
  std::uint32_t block_rows = 4;
  std::uint32_t block_cols = 4;
  /// ALU ops per iteration for PEs that load from memory (pointer + branch)
  /// and for pure queue-fed PEs (branch only).
  std::uint32_t loader_alu_ops = 2;
  std::uint32_t interior_alu_ops = 1;
};

struct VectorialParams {
  std::uint32_t vl = 64;
  std::uint32_t block_rows = 4;
  std::uint32_t block_vectors = 4;
  std::uint32_t unroll = 4;
  std::uint32_t loop_alu_ops = 2;
};

KernelProgram gen_matmul_baseline(const ValidatedConfig &cfg, MatmulDims dims,
                                  const BaselineParams &params = {});
KernelProgram gen_matmul_systolic(const ValidatedConfig &cfg, MatmulDims dims,
                                  const SystolicParams &params = {});
KernelProgram gen_matmul_vectorial(const ValidatedConfig &cfg, MatmulDims dims,
                                   const VectorialParams &params = {});

/// Flavor-independent matmul request; unset fields keep the generator
/// defaults. Fields that do not apply to the config's flavor are ignored.
struct MatmulOptions {
  MatmulDims dims{256, 256, 256};
  std::optional<std::uint32_t> unroll;
  std::optional<std::uint32_t> vl;
  std::optional<std::uint32_t> grid_rows;
  std::optional<std::uint32_t> grid_cols;
};

/// Picks the generator matching cfg's flavor.
KernelProgram gen_matmul(const ValidatedConfig &cfg, const MatmulOptions &opts);

struct RandomQueueParams {
  std::uint64_t seed = 1;
  std::uint32_t queues = 8;
  /// Push/pop operations emitted before the final drain.
  std::uint32_t operations = 400;
  /// Chance (percent) of an ALU or Load filler instruction between operations.
  std::uint32_t filler_percent = 30;
};

/// Random single-producer/single-consumer traffic over systolic queues. The
/// streams are cut from one sequential schedule that never overfills or
/// underflows a queue, so any in-order execution of them is deadlock-free.
KernelProgram gen_random_queue_program(const ValidatedConfig &cfg, const RandomQueueParams &params);

/// Squarest rows×cols factorization of n with rows ≤ cols.
std::pair<std::uint32_t, std::uint32_t> squarest_grid(std::uint32_t n);

struct InstructionMix {
  std::array<std::uint64_t, kOpcodeCount> counts{};

  std::uint64_t operator[](Opcode op) const { return counts[std::size_t(op)]; }
  std::uint64_t total() const;
  std::uint64_t vector_ops() const;
  /// Fraction of instructions that are ComputeFMA (utilization upper bound
  /// of a single-issue scalar core).
  double fma_fraction() const;
  double alu_fraction() const;
  double vector_fraction() const;
  InstructionMix &operator+=(const InstructionMix &o);
};

InstructionMix count_mix(std::span<const Instruction> stream);
InstructionMix count_mix(const KernelProgram &p);

/// FMA slots of work: a scalar FMA is one slot, a VFMA is vector_length slots.
std::uint64_t fma_slots(const KernelProgram &p);

/// Structural checks against a configuration: stream count, register and
/// vector-length bounds, address range, single-producer/single-consumer
/// queues, flavor-legal opcodes, trailing Barrier. Empty result means valid.
std::vector<std::string> check_program(const ValidatedConfig &cfg, const KernelProgram &p);

/// Per-edge element counts, pushes (explicit or forwarded) vs pops.
struct QueueFlow {
  QueueId id = 0;
  std::uint64_t pushed = 0;
  std::uint64_t popped = 0;
};
std::vector<QueueFlow> queue_flows(const KernelProgram &p);

/// Deadlock-freedom under unbounded queues: builds the dependence graph of
/// program order plus the n-th push → n-th pop edges of every queue and
/// topologically sorts it. Returns false if a cycle (or an unmatched pop)
/// exists.
bool queue_dependences_acyclic(const KernelProgram &p);

class ProgramParseError : public std::runtime_error {
public:
  ProgramParseError(std::size_t line, const std::string &what);
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

std::string serialize_program(const KernelProgram &p);
KernelProgram parse_program(std::string_view text);

} // namespace mempool
