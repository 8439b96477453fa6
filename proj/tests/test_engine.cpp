#include <doctest.h>

#include <sstream>

#include "mempool/engine.hpp"

using namespace mempool;

namespace {

ValidatedConfig single_tile(Flavor f) {
  auto c = default_config(f);
  c.groups = 1;
  c.tiles_per_group = 1;
  return require_valid(c);
}

ValidatedConfig small_cluster(Flavor f) {
  auto c = default_config(f);
  c.groups = 2;
  c.tiles_per_group = 2;
  return require_valid(c);
}

KernelProgram barriers_only(std::size_t cores) {
  KernelProgram p;
  p.streams.assign(cores, {Instruction::barrier()});
  return p;
}

void check_accounting(const RawCounters &rc) {
  std::uint64_t sum = 0;
  for (const auto &c : rc.cores) {
    CHECK(c.total() == rc.total_cycles);
    sum += c.total();
  }
  CHECK(sum == rc.cores.size() * rc.total_cycles);
}

} // namespace

TEST_SUITE("engine") {

TEST_CASE("all-barrier program finishes on the first cycle") {
  const auto cfg = require_valid(default_config(Flavor::Baseline));
  const auto rc = run(cfg, barriers_only(cfg.total_cores()));
  CHECK(rc.completed());
  CHECK(rc.total_cycles == 1);
  CHECK(rc.fma_slots_used() == 0);
  check_accounting(rc);
}

TEST_CASE("N ALU ops on one core take N cycles plus the barrier") {
  const auto cfg = single_tile(Flavor::Baseline);
  for (std::uint32_t n : {1u, 10u, 333u}) {
    auto p = barriers_only(cfg.total_cores());
    p.streams[2].clear();
    for (std::uint32_t i = 0; i < n; ++i)
      p.streams[2].push_back(Instruction::alu(Reg(1 + i % 4)));
    p.streams[2].push_back(Instruction::barrier());
    const auto rc = run(cfg, p);
    CHECK(rc.total_cycles == n + 1);
    CHECK(rc.cores[2].busy == n + 1);
    CHECK(rc.cores[0].stalls[std::size_t(StallReason::Barrier)] == n);
    check_accounting(rc);
  }
}

TEST_CASE("local loads are consumable the cycle after issue") {
  const auto cfg = single_tile(Flavor::Baseline);
  auto p = barriers_only(cfg.total_cores());
  p.streams[0] = {Instruction::load(1, 0), Instruction::alu(2, {1}), Instruction::barrier()};
  const auto rc = run(cfg, p);
  CHECK(rc.cores[0].stalls[std::size_t(StallReason::RawHazard)] == 0);
  CHECK(rc.total_cycles == 3);
}

TEST_CASE("barrier waits for outstanding stores") {
  const auto cfg = require_valid(default_config(Flavor::Baseline));
  auto p = barriers_only(cfg.total_cores());
  // Word 1023 lives in group 3; the store's response takes 5 cycles.
  p.streams[0] = {Instruction::store(1, 1023), Instruction::barrier()};
  const auto rc = run(cfg, p);
  CHECK(rc.cores[0].stalls[std::size_t(StallReason::Barrier)] == 4);
  CHECK(rc.total_cycles == 6);
}

TEST_CASE("mismatched 2x2 ring is reported as a deadlock on the starved queue") {
  const auto cfg = single_tile(Flavor::Systolic);
  KernelProgram p;
  // Ring 0 -> 1 -> 3 -> 2 -> 0; core 0 expects two elements from core 2.
  p.queues = {{0, 0, 1}, {1, 1, 3}, {2, 3, 2}, {3, 2, 0}};
  p.streams = {
      {Instruction::qpush(1, 0), Instruction::qpop(2, 3), Instruction::qpop(2, 3),
       Instruction::barrier()},
      {Instruction::qpop(2, 0), Instruction::qpush(2, 1), Instruction::barrier()},
      {Instruction::qpop(2, 2), Instruction::qpush(2, 3), Instruction::barrier()},
      {Instruction::qpop(2, 1), Instruction::qpush(2, 2), Instruction::barrier()},
  };
  RunLimits lim;
  lim.watchdog = 200;
  const auto rc = run(cfg, p, lim);
  CHECK(rc.outcome == RunOutcome::DeadlockDetected);
  CHECK(rc.starved_queues == std::vector<QueueId>{3});
  CHECK(rc.diagnostic.find("queue 3") != std::string::npos);
  bool edge = false;
  for (const auto &e : rc.wait_graph)
    edge |= e.core == 0 && e.reason == StallReason::QueueEmpty && e.queue == 3 && e.peer == 2;
  CHECK(edge);
  check_accounting(rc);
}

TEST_CASE("cycle limit aborts long runs") {
  const auto cfg = single_tile(Flavor::Baseline);
  auto p = barriers_only(cfg.total_cores());
  p.streams[0].assign(1000, Instruction::alu(1));
  p.streams[0].push_back(Instruction::barrier());
  RunLimits lim;
  lim.max_cycles = 100;
  const auto rc = run(cfg, p, lim);
  CHECK(rc.outcome == RunOutcome::CycleLimitExceeded);
  CHECK(rc.total_cycles == 100);
  check_accounting(rc);
}

TEST_CASE("programs that do not fit the configuration are rejected") {
  const auto cfg = single_tile(Flavor::Baseline);
  CHECK_THROWS_AS(run(cfg, barriers_only(3)), ProgramConfigMismatch);
}

TEST_CASE("random queue programs complete without losing elements") {
  const auto cfg = small_cluster(Flavor::Systolic);
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    RandomQueueParams p;
    p.seed = seed;
    p.queues = 1 + std::uint32_t(seed % 10);
    p.operations = 300;
    const auto prog = gen_random_queue_program(cfg, p);
    const auto rc = run(cfg, prog);
    REQUIRE(rc.completed());
    for (const auto &q : rc.queues) {
      CHECK(q.pushed == q.popped);
      CHECK(q.push_digest == q.pop_digest);
    }
    check_accounting(rc);
  }
}

TEST_CASE("matmul runs conserve work and close the cycle accounting") {
  for (auto f : {Flavor::Baseline, Flavor::Systolic, Flavor::Vectorial}) {
    const auto cfg = small_cluster(f);
    MatmulOptions o;
    o.dims = {32, 32, 32};
    if (f == Flavor::Vectorial)
      o.vl = 16;
    const auto prog = gen_matmul(cfg, o);
    const auto rc = run(cfg, prog);
    REQUIRE(rc.completed());
    CHECK(rc.fma_slots_used() == 32 * 32 * 32);
    check_accounting(rc);
    if (f == Flavor::Vectorial) {
      std::uint64_t slots = 0;
      for (const auto &u : rc.vector_units)
        slots += u.active_element_slots;
      CHECK(slots == fma_slots(prog));
    }
  }
}

TEST_CASE("identical runs are bit-identical") {
  const auto cfg = small_cluster(Flavor::Systolic);
  MatmulOptions o;
  o.dims = {32, 32, 32};
  const auto prog = gen_matmul(cfg, o);
  std::ostringstream t1, t2;
  const auto a = run(cfg, prog, {}, &t1);
  const auto b = run(cfg, prog, {}, &t2);
  CHECK(a == b);
  CHECK(t1.str() == t2.str());
}

TEST_CASE("small runs reproduce their stored goldens") {
  const std::tuple<Flavor, Cycle, std::uint64_t> goldens[] = {
      {Flavor::Baseline, 3347, 0x6098599a2470a9a8ull},
      {Flavor::Systolic, 3366, 0xcced7fa3a1b75e68ull},
      {Flavor::Vectorial, 2093, 0x8ba2a895c47b4cd8ull},
  };
  for (const auto &[f, cycles, checksum] : goldens) {
    const auto cfg = small_cluster(f);
    MatmulOptions o;
    o.dims = {32, 32, 32};
    o.vl = 16;
    const auto rc = run(cfg, gen_matmul(cfg, o));
    CHECK(rc.total_cycles == cycles);
    CHECK(rc.checksum == checksum);
  }
}

TEST_CASE("trace lines respect the latency floor") {
  const auto cfg = small_cluster(Flavor::Baseline);
  MatmulOptions o;
  o.dims = {32, 32, 16};
  std::ostringstream t;
  const auto rc = run(cfg, gen_matmul(cfg, o), {}, &t);
  std::istringstream in(t.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == kTraceHeader);
  std::uint64_t n = 0;
  bool ok = true;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::uint64_t id, issue, grant, complete;
    CoreId origin;
    std::uint32_t g, tile, bank;
    std::string kind;
    ls >> id >> origin >> g >> tile >> bank >> kind >> issue >> grant >> complete;
    ok &= issue <= grant && grant <= complete;
    ok &= complete - issue >= zero_load_latency(cfg, origin, BankId{g, tile, bank});
    ++n;
  }
  CHECK(ok);
  CHECK(n == rc.memory_requests);
}

} // engine

TEST_SUITE("sweep") {

TEST_CASE("empty axes run the template once") {
  const auto base = small_cluster(Flavor::Baseline).raw();
  MatmulOptions o;
  o.dims = {32, 32, 32};
  const auto pts = expand_sweep(base, o, {});
  REQUIRE(pts.size() == 1);
  CHECK(pts[0].config == base);
  const auto res = run_sweep(base, o, {});
  REQUIRE(res.size() == 1);
  CHECK(res[0].counters.completed());
}

TEST_CASE("cartesian product with the last axis fastest") {
  const auto base = small_cluster(Flavor::Baseline).raw();
  MatmulOptions o;
  o.dims = {32, 32, 32};
  const auto pts =
      expand_sweep(base, o, {parse_axis("queue_capacity=2,4"), parse_axis("unroll=1,2,4")});
  REQUIRE(pts.size() == 6);
  CHECK(pts[0].config.queue_capacity == 2);
  CHECK(pts[1].kernel.unroll == 2u);
  CHECK(pts[3].config.queue_capacity == 4);
  CHECK(pts[5].kernel.unroll == 4u);
  CHECK_THROWS(expand_sweep(base, o, {parse_axis("warp_size=4")}));
  CHECK_THROWS(parse_axis("unroll"));
}

TEST_CASE("flavor sweep yields one counter set per flavor") {
  auto base = small_cluster(Flavor::Baseline).raw();
  MatmulOptions o;
  o.dims = {32, 32, 32};
  o.vl = 16;
  const auto res = run_sweep(base, o, {parse_axis("flavor=baseline,systolic,vectorial")}, gen_matmul, 3);
  REQUIRE(res.size() == 3);
  CHECK(res[0].point.config.flavor == Flavor::Baseline);
  CHECK(res[1].counters.kernel.name == "matmul_systolic");
  CHECK(res[2].point.config.cores_per_tile == 1);
  for (const auto &r : res)
    CHECK(r.counters.fma_slots_used() == 32 * 32 * 32);
}

TEST_CASE("threaded sweeps match sequential ones") {
  const auto base = small_cluster(Flavor::Baseline).raw();
  MatmulOptions o;
  o.dims = {32, 32, 32};
  const std::vector<SweepAxis> axes{parse_axis("unroll=1,2,4,8")};
  const auto a = run_sweep(base, o, axes, gen_matmul, 1);
  const auto b = run_sweep(base, o, axes, gen_matmul, 4);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a[i].counters == b[i].counters);
}

TEST_CASE("dims parsing") {
  CHECK(parse_dims("64x32x16") == MatmulDims{64, 32, 16});
  CHECK_THROWS(parse_dims("64x32"));
  CHECK_THROWS(parse_dims("axbxc"));
}

} // sweep
