#include "mempool/core.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace mempool {

std::string_view to_string(StallReason r) {
  switch (r) {
  case StallReason::None:
    return "none";
  case StallReason::RawHazard:
    return "raw_hazard";
  case StallReason::ScoreboardFull:
    return "scoreboard_full";
  case StallReason::QueueFull:
    return "queue_full";
  case StallReason::QueueEmpty:
    return "queue_empty";
  case StallReason::Barrier:
    return "barrier";
  case StallReason::VectorBusy:
    return "vector_busy";
  }
  return "?";
}

namespace {

constexpr unsigned kTagKindShift = 62;
constexpr unsigned kTagIndexShift = 20;
constexpr std::uint64_t kTagCoreMask = (1ull << kTagIndexShift) - 1;
constexpr std::uint64_t kTagIndexMask = (1ull << (kTagKindShift - kTagIndexShift)) - 1;

} // namespace

std::uint64_t make_tag(TagKind kind, CoreId core, std::uint64_t index) {
  return (std::uint64_t(kind) << kTagKindShift) | ((index & kTagIndexMask) << kTagIndexShift) |
         (core & kTagCoreMask);
}

DecodedTag decode_tag(std::uint64_t tag) {
  return {TagKind(tag >> kTagKindShift), CoreId(tag & kTagCoreMask),
          (tag >> kTagIndexShift) & kTagIndexMask};
}

std::uint32_t mix_tokens(std::uint32_t a, std::uint32_t b, std::uint32_t c, std::uint32_t salt) {
  std::uint64_t x = (std::uint64_t(a) << 32 | b) ^ (std::uint64_t(c) * 0x9E3779B97F4A7C15ull) ^ salt;
  x ^= x >> 33;
  x *= 0xFF51AFD7ED558CCDull;
  x ^= x >> 33;
  x *= 0xC4CEB9FE1A85EC53ull;
  x ^= x >> 33;
  return std::uint32_t(x);
}

std::uint64_t chain_digest(std::uint64_t digest, std::uint32_t value) {
  std::uint64_t x = digest * 0x100000001B3ull ^ (std::uint64_t(value) + 0x9E3779B97F4A7C15ull);
  x ^= x >> 31;
  x *= 0xBF58476D1CE4E5B9ull;
  return x ^ (x >> 29);
}

CoreState::CoreState(CoreId id, std::uint32_t max_outstanding_loads)
    : core_id(id), scoreboard(max_outstanding_loads) {
  for (std::uint32_t r = 0; r < kNumRegisters; ++r)
    registers[r] = mix_tokens(id, r, 0, 0x5eed);
}

std::uint64_t CoreState::stall_total() const {
  std::uint64_t s = 0;
  for (auto v : stall_cycles)
    s += v;
  return s;
}

// --- queues ---

SystolicQueue::SystolicQueue(const QueueEdge &edge, std::uint32_t capacity, TileCoord home)
    : edge_(edge), capacity_(capacity), home_(home) {}

void SystolicQueue::check_producer(CoreId c) const {
  if (c != edge_.producer)
    throw SimulationFault(fmt::format("core {} pushed to queue {} owned by producer {}", c,
                                      edge_.id, edge_.producer));
}

bool SystolicQueue::push(CoreId producer, std::uint32_t value, Cycle now, Cycle visible_at) {
  check_producer(producer);
  if (full())
    return false;
  slots_.push_back({value, visible_at});
  ++tail_seq_;
  fold_filled();
  if (hook_)
    hook_(*this, value, now, visible_at);
  return true;
}

std::optional<std::uint64_t> SystolicQueue::reserve(CoreId producer) {
  check_producer(producer);
  if (full())
    return std::nullopt;
  slots_.push_back({});
  return tail_seq_++;
}

void SystolicQueue::fill(std::uint64_t slot, std::uint32_t value, Cycle now,
                         Cycle visible_at) {
  if (slot < head_seq_ || slot >= tail_seq_)
    throw SimulationFault(fmt::format("queue {}: fill of retired slot {}", edge_.id, slot));
  auto &s = slots_[slot - head_seq_];
  s.value = value;
  s.visible_at = visible_at;
  fold_filled();
  if (hook_)
    hook_(*this, value, now, visible_at);
}

void SystolicQueue::fold_filled() {
  // Unfilled slots are never visible, so every slot from digest_seq_ on is
  // still queued.
  while (digest_seq_ < tail_seq_ && slots_[digest_seq_ - head_seq_].visible_at != kUnsetCycle)
    push_digest_ = chain_digest(push_digest_, slots_[digest_seq_++ - head_seq_].value);
}

std::optional<std::uint32_t> SystolicQueue::pop(CoreId consumer, Cycle cycle) {
  if (consumer != edge_.consumer)
    throw SimulationFault(fmt::format("core {} popped from queue {} owned by consumer {}",
                                      consumer, edge_.id, edge_.consumer));
  if (slots_.empty() || slots_.front().visible_at > cycle)
    return std::nullopt;
  const std::uint32_t v = slots_.front().value;
  slots_.pop_front();
  ++head_seq_;
  pop_digest_ = chain_digest(pop_digest_, v);
  return v;
}

// --- vector unit ---

VectorUnit::VectorUnit(std::uint32_t tile_id, CoreId owner, std::uint32_t fpus)
    : tile_id_(tile_id), owner_(owner), fpus_(fpus) {}

VectorUnit::Op *VectorUnit::find(std::uint64_t seq) {
  if (window_.empty() || seq < window_.front().seq)
    return nullptr;
  const std::uint64_t i = seq - window_.front().seq;
  return i < window_.size() ? &window_[i] : nullptr;
}

bool VectorUnit::done(std::uint64_t seq) const {
  if (window_.empty() || seq < window_.front().seq)
    return true;
  return window_[seq - window_.front().seq].state == State::Done;
}

bool VectorUnit::ready(const Op &op) const {
  return std::all_of(op.deps.begin(), op.deps.end(), [&](std::uint64_t d) { return done(d); });
}

bool VectorUnit::dispatch(const Instruction &in, Cycle) {
  if (!is_vector_op(in.op))
    throw SimulationFault(fmt::format("'{}' is not a vector instruction", mnemonic(in.op)));
  if (waiting_ >= kDispatchDepth)
    return false;
  Op op;
  op.in = in;
  op.seq = next_seq_++;
  for (Reg s : in.sources())
    if (last_writer_[s])
      op.deps.push_back(*last_writer_[s]);
  if (in.dst != kNoReg) {
    if (last_writer_[in.dst])
      op.deps.push_back(*last_writer_[in.dst]);
    for (auto r : readers_[in.dst])
      op.deps.push_back(r);
  }
  std::sort(op.deps.begin(), op.deps.end());
  op.deps.erase(std::unique(op.deps.begin(), op.deps.end()), op.deps.end());
  std::erase(op.deps, op.seq);

  for (Reg s : in.sources())
    readers_[s].push_back(op.seq);
  if (in.dst != kNoReg) {
    last_writer_[in.dst] = op.seq;
    readers_[in.dst].clear();
  }
  window_.push_back(std::move(op));
  ++waiting_;
  return true;
}

void VectorUnit::retire() {
  while (!window_.empty() && window_.front().state == State::Done)
    window_.pop_front();
}

void VectorUnit::on_response(std::uint64_t seq, Cycle) {
  Op *op = find(seq);
  if (!op || op->outstanding == 0)
    throw SimulationFault(fmt::format("vector unit {}: stray response for instruction {}",
                                      tile_id_, seq));
  --op->outstanding;
  if (op->outstanding == 0 && op->injected == op->requests)
    op->state = State::Done;
}

bool VectorUnit::advance(Cycle cycle, MemorySystem &mem) {
  bool progress = false;
  if (vfu_op_ && cycle >= vfu_busy_until_) {
    if (Op *op = find(*vfu_op_))
      op->state = State::Done;
    vfu_op_.reset();
    progress = true;
  }
  if (vlsu_op_) {
    Op *op = find(*vlsu_op_);
    if (!op || op->injected == op->requests)
      vlsu_op_.reset();
  }

  // Oldest waiting instruction of each pipe, in program order.
  Op *next_mem = nullptr;
  Op *next_fma = nullptr;
  for (auto &op : window_) {
    if (op.state != State::Waiting)
      continue;
    if (op.in.op == Opcode::VFMA) {
      if (!next_fma)
        next_fma = &op;
    } else if (!next_mem) {
      next_mem = &op;
    }
    if (next_fma && next_mem)
      break;
  }

  if (!vlsu_op_ && next_mem && ready(*next_mem)) {
    next_mem->state = State::Running;
    next_mem->requests = next_mem->in.broadcast() ? 1u : next_mem->in.vector_length;
    vlsu_op_ = next_mem->seq;
    --waiting_;
  }
  if (vlsu_op_) {
    Op *op = find(*vlsu_op_);
    const std::uint32_t n = std::min(fpus_, op->requests - op->injected);
    const bool is_store = op->in.op == Opcode::VStore;
    for (std::uint32_t e = 0; e < n; ++e) {
      const std::uint32_t idx = op->injected + e;
      const WordAddr addr = op->in.address() + (op->in.broadcast() ? 0 : idx);
      const std::uint32_t data =
          is_store ? mix_tokens(op->in.src[0], std::uint32_t(op->seq), idx, 0x7e) : 0;
      mem.issue(owner_, addr, is_store ? RequestKind::Write : RequestKind::Read, cycle, data,
                make_tag(TagKind::VectorElement, owner_, op->seq));
    }
    op->injected += n;
    op->outstanding += n;
    element_requests_ += n;
    progress = progress || n > 0;
  }

  if (!vfu_op_ && next_fma && ready(*next_fma)) {
    const std::uint32_t len = next_fma->in.vector_length;
    next_fma->state = State::Running;
    vfu_op_ = next_fma->seq;
    vfu_busy_until_ = cycle + (len + fpus_ - 1) / fpus_;
    active_element_slots_ += len;
    vfu_busy_cycles_ += vfu_busy_until_ - cycle;
    --waiting_;
    progress = true;
  }
  retire();
  return progress;
}

// --- scalar core ---

namespace {

SystolicQueue &lookup(std::span<SystolicQueue *const> queues, QueueId id, CoreId core) {
  if (id >= queues.size() || !queues[id])
    throw SimulationFault(fmt::format("core {} names undeclared queue {}", core, id));
  return *queues[id];
}

bool writes_scalar(Opcode op) {
  return op == Opcode::ComputeFMA || op == Opcode::ComputeALU || op == Opcode::Load ||
         op == Opcode::QPop;
}

} // namespace

IssuedEffect step_core(CoreState &core, std::span<const Instruction> stream, StepContext &ctx) {
  if (core.finished || core.pc >= stream.size()) {
    core.finished = true;
    core.stall_reason = StallReason::None;
    ++core.idle_cycles;
    return {StepResult::Idle, Opcode::Nop, StallReason::None};
  }
  const Instruction &in = stream[core.pc];

  auto stall = [&](StallReason r, QueueId q = kNoQueue) {
    core.stall_reason = r;
    core.stall_queue = q;
    ++core.stall_cycles[std::size_t(r)];
    return IssuedEffect{StepResult::Stalled, in.op, r};
  };
  auto issue = [&](bool advance = true) {
    core.stall_reason = StallReason::None;
    core.stall_queue = kNoQueue;
    ++core.compute_busy_cycles;
    ++core.issued[std::size_t(in.op)];
    if (advance)
      ++core.pc;
    return IssuedEffect{StepResult::Issued, in.op, StallReason::None};
  };

  if (in.op == Opcode::Barrier) {
    if (core.at_barrier)
      return stall(StallReason::Barrier);
    if (core.outstanding_loads || core.outstanding_stores || (ctx.vector && !ctx.vector->idle()))
      return stall(StallReason::Barrier);
    core.at_barrier = true;
    ++ctx.barrier.arrived;
    return issue(false);
  }

  if (is_vector_op(in.op)) {
    if (!ctx.vector)
      throw SimulationFault(fmt::format("core {} issued {} without a vector unit", core.core_id,
                                        mnemonic(in.op)));
    if (!ctx.vector->dispatch(in, ctx.cycle))
      return stall(StallReason::VectorBusy);
    return issue();
  }

  for (Reg s : in.sources())
    if (core.pending(s))
      return stall(StallReason::RawHazard);
  if (writes_scalar(in.op) && core.pending(in.dst))
    return stall(StallReason::RawHazard);

  auto value_of = [&](std::size_t i) {
    return i < in.num_src ? core.registers[in.src[i]] : 0u;
  };

  switch (in.op) {
  case Opcode::ComputeFMA:
    core.registers[in.dst] = mix_tokens(value_of(0), value_of(1), value_of(2), 0xF);
    ++core.fma_issued;
    return issue();
  case Opcode::ComputeALU:
    core.registers[in.dst] = mix_tokens(value_of(0), value_of(1), in.num_src, 0xA);
    return issue();
  case Opcode::Nop:
    return issue();
  case Opcode::Load: {
    if (core.outstanding_loads >= core.scoreboard.size())
      return stall(StallReason::ScoreboardFull);
    std::uint64_t slot = 0;
    if (in.has_forward()) {
      auto &fq = lookup(ctx.queues, in.forward, core.core_id);
      auto reserved = fq.reserve(core.core_id);
      if (!reserved)
        return stall(StallReason::QueueFull, in.forward);
      slot = *reserved;
    }
    const auto free = std::find_if(core.scoreboard.begin(), core.scoreboard.end(),
                                   [](const ScoreboardEntry &e) { return !e.used; });
    const std::size_t idx = std::size_t(free - core.scoreboard.begin());
    auto &e = *free;
    e.used = true;
    e.reg = in.dst;
    e.forward = in.forward;
    e.forward_slot = slot;
    e.req_id = ctx.mem.issue(core.core_id, in.address(), RequestKind::Read, ctx.cycle, 0,
                             make_tag(TagKind::ScalarLoad, core.core_id, idx));
    core.pending_mask |= 1u << in.dst;
    ++core.outstanding_loads;
    return issue();
  }
  case Opcode::Store:
    ctx.mem.issue(core.core_id, in.address(), RequestKind::Write, ctx.cycle, value_of(0),
                  make_tag(TagKind::ScalarStore, core.core_id, 0));
    ++core.outstanding_stores;
    return issue();
  case Opcode::QPush: {
    auto &q = lookup(ctx.queues, in.queue(), core.core_id);
    const Cycle visible = ctx.cycle + zero_load_latency(ctx.cfg, core.core_id, q.home());
    if (!q.push(core.core_id, value_of(0), ctx.cycle, visible))
      return stall(StallReason::QueueFull, q.id());
    return issue();
  }
  case Opcode::QPop: {
    auto &q = lookup(ctx.queues, in.queue(), core.core_id);
    SystolicQueue *fq = nullptr;
    if (in.has_forward()) {
      fq = &lookup(ctx.queues, in.forward, core.core_id);
      if (fq->producer() != core.core_id)
        throw SimulationFault(fmt::format("core {} forwards into queue {} owned by producer {}",
                                          core.core_id, fq->id(), fq->producer()));
      if (fq->full())
        return stall(StallReason::QueueFull, fq->id());
    }
    auto v = q.pop(core.core_id, ctx.cycle);
    if (!v)
      return stall(StallReason::QueueEmpty, q.id());
    core.registers[in.dst] = *v;
    if (fq)
      fq->push(core.core_id, *v, ctx.cycle,
               ctx.cycle + zero_load_latency(ctx.cfg, core.core_id, fq->home()));
    return issue();
  }
  default:
    break;
  }
  throw SimulationFault(fmt::format("core {}: malformed instruction '{}' at pc {}", core.core_id,
                                    mnemonic(in.op), core.pc));
}

void complete_load(CoreState &core, const MemRequest &r, const ValidatedConfig &cfg,
                   std::span<SystolicQueue *const> queues, Cycle cycle) {
  const auto tag = decode_tag(r.tag);
  if (tag.index >= core.scoreboard.size() || !core.scoreboard[tag.index].used ||
      core.scoreboard[tag.index].req_id != r.req_id)
    throw SimulationFault(fmt::format("core {}: response {} matches no scoreboard entry",
                                      core.core_id, r.req_id));
  auto &e = core.scoreboard[tag.index];
  core.registers[e.reg] = r.data ^ mix_tokens(r.target.bank, r.offset, r.target.tile, 0x1);
  core.pending_mask &= ~(1u << e.reg);
  --core.outstanding_loads;
  if (e.forward != kNoQueue) {
    auto &q = lookup(queues, e.forward, core.core_id);
    q.fill(e.forward_slot, core.registers[e.reg], cycle,
           cycle + zero_load_latency(cfg, core.core_id, q.home()));
  }
  e = {};
}

} // namespace mempool
