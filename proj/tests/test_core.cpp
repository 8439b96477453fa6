#include <doctest.h>

#include <deque>
#include <random>

#include "rig.hpp"

using namespace mempool;
using mptest::Rig;

namespace {

// Word address of a bank in group `g` of the default cluster.
WordAddr in_group(const ValidatedConfig &cfg, std::uint32_t g, std::uint32_t i = 0) {
  return g * cfg->tiles_per_group * cfg->banks_per_tile + i;
}

void park_others(Rig &rig, std::size_t except) {
  for (std::size_t c = 0; c < rig.streams.size(); ++c)
    if (c != except)
      rig.streams[c] = {Instruction::barrier()};
}

} // namespace

TEST_SUITE("core") {

TEST_CASE("two remote loads overlap and the FMA issues at cycle 7") {
  Rig rig(default_config(Flavor::Baseline));
  park_others(rig, 0);
  rig.streams[0] = {Instruction::load(1, in_group(rig.cfg, 2, 0)),
                    Instruction::load(2, in_group(rig.cfg, 2, 1)), Instruction::fma(3, 1, 2),
                    Instruction::barrier()};
  rig.run(12);
  CHECK(rig.issued_at[0][0] == 1);
  CHECK(rig.issued_at[0][1] == 2);
  CHECK(rig.issued_at[0][2] == 7);
  CHECK(rig.cores[0].stall_cycles[std::size_t(StallReason::RawHazard)] == 4);
}

TEST_CASE("independent ALU ops issue one per cycle") {
  Rig rig(default_config(Flavor::Baseline));
  park_others(rig, 0);
  for (int i = 0; i < 25; ++i)
    rig.streams[0].push_back(Instruction::alu(Reg(1 + i % 8)));
  rig.run(25);
  CHECK(rig.cores[0].pc == 25);
  CHECK(rig.cores[0].stall_total() == 0);
  CHECK(rig.cores[0].compute_busy_cycles == 25);
}

TEST_CASE("one more load than the scoreboard holds stalls exactly one cycle") {
  auto c = default_config(Flavor::Baseline);
  c.latency_per_level_cycles = 4; // remote group responses take 9 cycles
  Rig rig(c);
  park_others(rig, 0);
  const std::uint32_t n = c.max_outstanding_loads + 1;
  for (std::uint32_t i = 0; i < n; ++i)
    rig.streams[0].push_back(Instruction::load(Reg(1 + i), in_group(rig.cfg, 3, i)));
  rig.run(n + 1);
  // Loads issue on cycles 1..8; the first response arrives on cycle 10.
  CHECK(rig.cores[0].stall_cycles[std::size_t(StallReason::ScoreboardFull)] == 1);
  CHECK(rig.issued_at[0][n - 1] == n + 1);
}

TEST_CASE("conflict-free independent remote loads never stall with a deep scoreboard") {
  auto c = default_config(Flavor::Baseline);
  c.max_outstanding_loads = 64;
  Rig rig(c);
  park_others(rig, 0);
  for (std::uint32_t i = 0; i < 30; ++i)
    rig.streams[0].push_back(Instruction::load(Reg(1 + i), in_group(rig.cfg, 1 + i % 3, i)));
  for (int i = 0; i < 10; ++i)
    rig.streams[0].push_back(Instruction::alu(31));
  rig.run(45);
  CHECK(rig.cores[0].pc == 40);
  CHECK(rig.cores[0].stall_total() == 0);
}

TEST_CASE("a same-tile load is usable on the following cycle") {
  Rig rig(default_config(Flavor::Baseline));
  park_others(rig, 0);
  rig.streams[0] = {Instruction::load(1, 0), Instruction::alu(2, {1})};
  rig.run(4);
  CHECK(rig.issued_at[0][0] == 1);
  CHECK(rig.issued_at[0][1] == 2);
}

TEST_CASE("scoreboard soundness on random streams") {
  std::mt19937_64 rng(7);
  for (int round = 0; round < 10; ++round) {
    Rig rig(default_config(Flavor::Baseline));
    for (auto &s : rig.streams) {
      for (int i = 0; i < 60; ++i) {
        const Reg a = Reg(1 + rng() % 6), b = Reg(1 + rng() % 6);
        switch (rng() % 3) {
        case 0:
          s.push_back(Instruction::load(a, WordAddr(rng() % 4096)));
          break;
        case 1:
          s.push_back(Instruction::fma(a, b, Reg(1 + rng() % 6)));
          break;
        default:
          s.push_back(Instruction::alu(a, {b}));
        }
      }
      s.push_back(Instruction::barrier());
    }
    bool sound = true, bounded = true;
    rig.on_issue = [&](std::size_t, const Instruction &in, std::uint32_t pending) {
      for (Reg r : in.sources())
        sound &= !((pending >> r) & 1u);
      if (in.dst != kNoReg && in.op != Opcode::Store)
        sound &= !((pending >> in.dst) & 1u);
    };
    for (int cyc = 0; cyc < 1500; ++cyc) {
      rig.step();
      for (auto &core : rig.cores) {
        bounded &= core.outstanding_loads <= rig.cfg->max_outstanding_loads;
        std::uint32_t sb = 0;
        for (auto &e : core.scoreboard)
          if (e.used)
            sb |= 1u << e.reg;
        bounded &= sb == core.pending_mask;
      }
    }
    CHECK(sound);
    CHECK(bounded);
  }
}

TEST_CASE("queue push visible to a same-tile consumer one cycle later") {
  auto c = default_config(Flavor::Systolic);
  Rig rig(c);
  rig.add_queue(0, 0, 1);
  park_others(rig, 99999);
  rig.streams[0] = {Instruction::qpush(1, 0), Instruction::barrier()};
  rig.streams[1] = {Instruction::qpop(2, 0), Instruction::barrier()};
  rig.run(3);
  CHECK(rig.issued_at[0][0] == 1);
  CHECK(rig.issued_at[1][0] == 2);
  CHECK(rig.cores[1].stall_cycles[std::size_t(StallReason::QueueEmpty)] == 1);
}

TEST_CASE("fifth push into a capacity-4 queue stalls until a pop") {
  Rig rig(default_config(Flavor::Systolic));
  rig.add_queue(0, 0, 1);
  park_others(rig, 99999);
  rig.streams[0].clear();
  for (int i = 0; i < 5; ++i)
    rig.streams[0].push_back(Instruction::qpush(Reg(1 + i), 0));
  rig.streams[1] = {Instruction::alu(5), Instruction::alu(5), Instruction::alu(5),
                    Instruction::alu(5), Instruction::alu(5), Instruction::alu(5),
                    Instruction::alu(5), Instruction::alu(5), Instruction::qpop(2, 0)};
  rig.run(12);
  CHECK(rig.issued_at[0][3] == 4);
  // Core 1 pops on cycle 9 (after its 8 ALU ops); the push retries on cycle 9
  // before the pop in core order, so it lands on cycle 10.
  CHECK(rig.issued_at[1][8] == 9);
  CHECK(rig.issued_at[0][4] == 10);
  CHECK(rig.cores[0].stall_cycles[std::size_t(StallReason::QueueFull)] == 5);
}

TEST_CASE("steady-state local streaming sustains one element per cycle") {
  Rig rig(default_config(Flavor::Systolic));
  rig.add_queue(0, 0, 1);
  park_others(rig, 99999);
  const int n = 200;
  rig.streams[0].clear();
  rig.streams[1].clear();
  for (int i = 0; i < n; ++i) {
    rig.streams[0].push_back(Instruction::qpush(1, 0));
    rig.streams[1].push_back(Instruction::qpop(2, 0));
  }
  rig.run(n + 1);
  CHECK(rig.issued_at[1][n - 1] == Cycle(n + 1));
  CHECK(rig.cores[1].stall_total() == 1);
}

TEST_CASE("queue elements keep FIFO order against a plain model") {
  std::mt19937_64 rng(11);
  for (int round = 0; round < 200; ++round) {
    const std::uint32_t cap = 1 + rng() % 6;
    SystolicQueue q(QueueEdge{3, 0, 1}, cap, TileCoord{0, 0});
    // Model: value of every slot by sequence number; pops must follow it.
    std::vector<std::uint32_t> model;
    std::deque<std::uint64_t> reserved;
    std::vector<std::uint32_t> out;
    std::uint32_t next_value = 1;
    auto fill = [&](std::size_t i, Cycle t, Cycle vis) {
      const auto seq = reserved[i];
      q.fill(seq, next_value, t, vis);
      model[seq] = next_value++;
      reserved.erase(reserved.begin() + long(i));
    };
    for (Cycle t = 1; t < 400; ++t) {
      switch (rng() % 4) {
      case 0:
        if (q.push(0, next_value, t, t + rng() % 4)) {
          model.push_back(next_value++);
          REQUIRE(model.size() == q.pushed());
        }
        break;
      case 1:
        if (auto s = q.reserve(0)) {
          REQUIRE(*s == model.size());
          model.push_back(0);
          reserved.push_back(*s);
        }
        break;
      case 2:
        if (!reserved.empty())
          fill(rng() % reserved.size(), t, t + rng() % 4);
        break;
      default:
        if (auto v = q.pop(1, t))
          out.push_back(*v);
      }
      CHECK(q.occupancy() <= cap);
    }
    while (!reserved.empty())
      fill(0, 400, 400);
    for (Cycle t = 400; t < 500; ++t)
      while (auto v = q.pop(1, t))
        out.push_back(*v);
    CHECK(out == model);
    CHECK(q.pushed() == q.popped());
    CHECK(q.push_digest() == q.pop_digest());
  }
}

TEST_CASE("queue endpoints are enforced") {
  SystolicQueue q(QueueEdge{0, 2, 5}, 4, TileCoord{0, 1});
  CHECK_THROWS_AS(q.push(3, 1, 1, 1), SimulationFault);
  CHECK(q.push(2, 1, 1, 1));
  CHECK_THROWS_AS(q.pop(4, 2), SimulationFault);
  CHECK(q.pop(5, 2) == 1u);
}

TEST_CASE("tags round trip") {
  const auto t = decode_tag(make_tag(TagKind::VectorElement, 1023, 123456789));
  CHECK(t.kind == TagKind::VectorElement);
  CHECK(t.core == 1023);
  CHECK(t.index == 123456789);
}

} // core

TEST_SUITE("vector") {

namespace {

struct VecRig {
  ValidatedConfig cfg = require_valid(default_config(Flavor::Vectorial));
  MemorySystem mem{cfg};
  VectorUnit unit{0, 0, cfg->fpus_per_vector_unit};
  Cycle cycle = 0;

  void step() {
    ++cycle;
    mem.deliver(cycle, [&](const MemRequest &r) { unit.on_response(decode_tag(r.tag).index, cycle); });
    mem.arbitrate(cycle);
    unit.advance(cycle, mem);
  }
  Cycle run_until_idle(Cycle limit = 10000) {
    while (!unit.idle() && cycle < limit)
      step();
    return cycle;
  }
};

} // namespace

TEST_CASE("VFMA of 64 elements on 4 FPUs occupies 16 cycles") {
  VecRig r;
  REQUIRE(r.unit.dispatch(Instruction::vfma(0, 1, 2, 64), 0));
  r.run_until_idle();
  CHECK(r.unit.vfu_busy_cycles() == 16);
  CHECK(r.unit.active_element_slots() == 64);
}

TEST_CASE("VFMA of one element takes one cycle") {
  VecRig r;
  REQUIRE(r.unit.dispatch(Instruction::vfma(0, 1, 2, 1), 0));
  r.run_until_idle();
  CHECK(r.unit.vfu_busy_cycles() == 1);
  CHECK(r.unit.active_element_slots() == 1);
}

TEST_CASE("back-to-back VFMAs serialize on the arithmetic pipe") {
  VecRig r;
  REQUIRE(r.unit.dispatch(Instruction::vfma(0, 1, 2, 64), 0));
  REQUIRE(r.unit.dispatch(Instruction::vfma(3, 4, 5, 64), 0));
  const Cycle one_start = r.cycle;
  r.step();
  const Cycle first_started = r.cycle;
  r.run_until_idle();
  CHECK(r.unit.vfu_busy_cycles() == 32);
  CHECK(r.cycle - first_started >= 31);
  CHECK(one_start == 0);
}

TEST_CASE("dependent VFMA waits for the vector load it reads") {
  VecRig r;
  REQUIRE(r.unit.dispatch(Instruction::vload(1, 0, 64), 0));
  REQUIRE(r.unit.dispatch(Instruction::vfma(0, 1, 1, 64), 0));
  r.run_until_idle();
  CHECK(r.unit.element_requests() == 64);
  CHECK(r.unit.active_element_slots() == 64);
  // 16 injection cycles, then the 16 arithmetic cycles.
  CHECK(r.cycle >= 32);
}

TEST_CASE("broadcast load issues a single request") {
  VecRig r;
  REQUIRE(r.unit.dispatch(Instruction::vload(1, 5, 64, true), 0));
  r.run_until_idle();
  CHECK(r.unit.element_requests() == 1);
}

TEST_CASE("dispatch queue holds a bounded number of waiting instructions") {
  VecRig r;
  std::size_t accepted = 0;
  for (int i = 0; i < 20; ++i)
    accepted += r.unit.dispatch(Instruction::vfma(0, 0, 0, 64), 0);
  CHECK(accepted == VectorUnit::kDispatchDepth);
}

} // vector
