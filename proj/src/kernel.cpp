#include "mempool/kernel.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>

namespace mempool {

std::string_view mnemonic(Opcode op) {
  switch (op) {
  case Opcode::ComputeFMA:
    return "fma";
  case Opcode::ComputeALU:
    return "alu";
  case Opcode::Load:
    return "load";
  case Opcode::Store:
    return "store";
  case Opcode::QPush:
    return "qpush";
  case Opcode::QPop:
    return "qpop";
  case Opcode::VLoad:
    return "vload";
  case Opcode::VStore:
    return "vstore";
  case Opcode::VFMA:
    return "vfma";
  case Opcode::Barrier:
    return "barrier";
  case Opcode::Nop:
    return "nop";
  }
  return "?";
}

bool is_memory_op(Opcode op) {
  return op == Opcode::Load || op == Opcode::Store || op == Opcode::VLoad ||
         op == Opcode::VStore;
}
bool is_queue_op(Opcode op) { return op == Opcode::QPush || op == Opcode::QPop; }
bool is_vector_op(Opcode op) {
  return op == Opcode::VLoad || op == Opcode::VStore || op == Opcode::VFMA;
}

namespace {

Instruction make(Opcode op, Reg dst, std::initializer_list<Reg> srcs) {
  Instruction in;
  in.op = op;
  in.dst = dst;
  if (srcs.size() > kMaxSources)
    throw std::invalid_argument("too many source registers");
  for (Reg r : srcs)
    in.src[in.num_src++] = r;
  return in;
}

} // namespace

Instruction Instruction::fma(Reg acc, Reg a, Reg b) {
  return make(Opcode::ComputeFMA, acc, {acc, a, b});
}
Instruction Instruction::alu(Reg dst, std::initializer_list<Reg> srcs) {
  return make(Opcode::ComputeALU, dst, srcs);
}
Instruction Instruction::load(Reg dst, WordAddr addr, std::initializer_list<Reg> srcs,
                              QueueId forward) {
  auto in = make(Opcode::Load, dst, srcs);
  in.operand = addr;
  in.forward = forward;
  return in;
}
Instruction Instruction::store(Reg value, WordAddr addr, std::initializer_list<Reg> srcs) {
  auto in = make(Opcode::Store, kNoReg, {});
  in.src[in.num_src++] = value;
  for (Reg r : srcs) {
    if (in.num_src == kMaxSources)
      throw std::invalid_argument("too many source registers");
    in.src[in.num_src++] = r;
  }
  in.operand = addr;
  return in;
}
Instruction Instruction::qpush(Reg value, QueueId q) {
  auto in = make(Opcode::QPush, kNoReg, {value});
  in.operand = q;
  return in;
}
Instruction Instruction::qpop(Reg dst, QueueId q, QueueId forward) {
  auto in = make(Opcode::QPop, dst, {});
  in.operand = q;
  in.forward = forward;
  return in;
}
Instruction Instruction::vload(Reg vdst, WordAddr addr, std::uint16_t vl, bool broadcast) {
  auto in = make(Opcode::VLoad, vdst, {});
  in.operand = addr;
  in.vector_length = vl;
  if (broadcast)
    in.flags |= kBroadcast;
  return in;
}
Instruction Instruction::vstore(Reg vsrc, WordAddr addr, std::uint16_t vl) {
  auto in = make(Opcode::VStore, kNoReg, {vsrc});
  in.operand = addr;
  in.vector_length = vl;
  return in;
}
Instruction Instruction::vfma(Reg vacc, Reg va, Reg vb, std::uint16_t vl) {
  auto in = make(Opcode::VFMA, vacc, {vacc, va, vb});
  in.vector_length = vl;
  return in;
}
Instruction Instruction::barrier() { return make(Opcode::Barrier, kNoReg, {}); }
Instruction Instruction::nop() { return make(Opcode::Nop, kNoReg, {}); }

MatmulLayout::MatmulLayout(MatmulDims d) : M(d.M), N(d.N), K(d.K) {
  a_base = 0;
  b_base = d.M * d.K;
  c_base = b_base + d.K * d.N;
}

std::pair<std::uint32_t, std::uint32_t> squarest_grid(std::uint32_t n) {
  std::uint32_t rows = 1;
  for (std::uint32_t r = 1; std::uint64_t(r) * r <= n; ++r)
    if (n % r == 0)
      rows = r;
  return {rows, n / rows};
}

namespace {

void check_dims(const ValidatedConfig &cfg, MatmulDims d) {
  if (d.M == 0 || d.N == 0 || d.K == 0)
    throw KernelError("matmul dimensions must be ≥ 1");
  MatmulLayout layout(d);
  if (layout.total_words() > cfg.total_spm_words())
    throw KernelError(fmt::format("operands need {} words but the SPM holds {}",
                                  layout.total_words(), cfg.total_spm_words()));
}

void check_unroll(std::uint32_t unroll, std::uint32_t K) {
  if (unroll < 1)
    throw KernelError("unroll must be ≥ 1");
  if (unroll > K)
    throw KernelError(fmt::format("unroll {} exceeds K = {}", unroll, K));
}

// Register file map shared by the scalar kernels: r0 is never used,
// accumulators first, then operand registers, then address/loop registers.
struct ScalarRegs {
  std::uint32_t br, bc;
  Reg acc(std::uint32_t i, std::uint32_t j) const { return Reg(1 + i * bc + j); }
  Reg a(std::uint32_t i) const { return Reg(1 + br * bc + i); }
  Reg b(std::uint32_t j) const { return Reg(1 + br * bc + br + j); }
  Reg ptr_a() const { return Reg(1 + br * bc + br + bc); }
  Reg ptr_b() const { return Reg(ptr_a() + 1); }
  Reg counter() const { return Reg(ptr_a() + 2); }
  Reg ptr_c() const { return Reg(ptr_a() + 3); }

  static ScalarRegs make(std::uint32_t br, std::uint32_t bc) {
    if (br < 1 || bc < 1)
      throw KernelError("register block dimensions must be ≥ 1");
    ScalarRegs r{br, bc};
    if (std::uint32_t(r.ptr_c()) >= kNumRegisters)
      throw KernelError(fmt::format("a {}x{} register block does not fit in {} registers",
                                    br, bc, kNumRegisters));
    return r;
  }
};

} // namespace

KernelProgram gen_matmul_baseline(const ValidatedConfig &cfg, MatmulDims d,
                                  const BaselineParams &prm) {
  check_dims(cfg, d);
  check_unroll(prm.unroll, d.K);
  const auto regs = ScalarRegs::make(prm.block_rows, prm.block_cols);
  const std::uint32_t br = prm.block_rows, bc = prm.block_cols;
  const std::uint32_t P = cfg.total_cores();
  if (d.M % br != 0 || d.N % bc != 0)
    throw KernelError(fmt::format("M = {} and N = {} must be multiples of the {}x{} block",
                                  d.M, d.N, br, bc));
  const std::uint64_t blocks = std::uint64_t(d.M / br) * (d.N / bc);
  if (blocks % P != 0)
    throw KernelError(fmt::format("{} output blocks of {}x{} cannot be divided evenly over "
                                  "{} cores",
                                  blocks, br, bc, P));

  const MatmulLayout L(d);
  const std::uint32_t block_cols_total = d.N / bc;

  KernelProgram prog;
  prog.meta.name = "matmul_baseline";
  prog.meta.dims = d;
  prog.meta.params = {{"unroll", prm.unroll},
                      {"block_rows", br},
                      {"block_cols", bc},
                      {"loop_alu_ops", prm.loop_alu_ops},
                      {"stagger_k", prm.stagger_k ? 1 : 0}};
  prog.streams.resize(P);

  const std::uint64_t per_core_blocks = blocks / P;
  const std::uint64_t iters = (d.K + prm.unroll - 1) / prm.unroll;
  const std::uint64_t per_block =
      3 + br * bc + std::uint64_t(d.K) * (br + bc + br * bc) + iters * prm.loop_alu_ops +
      br * bc;

  for (CoreId core = 0; core < P; ++core) {
    auto &s = prog.streams[core];
    s.reserve(per_core_blocks * per_block + 1);
    const std::uint32_t k0 = prm.stagger_k ? core % d.K : 0;
    for (std::uint64_t t = 0; t < per_core_blocks; ++t) {
      const std::uint64_t blk = core + t * P;
      const std::uint32_t i0 = std::uint32_t(blk / block_cols_total) * br;
      const std::uint32_t j0 = std::uint32_t(blk % block_cols_total) * bc;

      s.push_back(Instruction::alu(regs.ptr_a()));
      s.push_back(Instruction::alu(regs.ptr_b()));
      s.push_back(Instruction::alu(regs.ptr_c()));
      for (std::uint32_t i = 0; i < br; ++i)
        for (std::uint32_t j = 0; j < bc; ++j)
          s.push_back(Instruction::alu(regs.acc(i, j)));

      for (std::uint32_t step = 0; step < d.K; ++step) {
        const std::uint32_t k = (k0 + step) % d.K;
        for (std::uint32_t i = 0; i < br; ++i)
          s.push_back(Instruction::load(regs.a(i), L.a(i0 + i, k), {regs.ptr_a()}));
        for (std::uint32_t j = 0; j < bc; ++j)
          s.push_back(Instruction::load(regs.b(j), L.b(k, j0 + j), {regs.ptr_b()}));
        for (std::uint32_t i = 0; i < br; ++i)
          for (std::uint32_t j = 0; j < bc; ++j)
            s.push_back(Instruction::fma(regs.acc(i, j), regs.a(i), regs.b(j)));
        if ((step + 1) % prm.unroll == 0 || step + 1 == d.K) {
          // Pointer bump(s) then the counter/branch.
          for (std::uint32_t n = 0; n < prm.loop_alu_ops; ++n) {
            const Reg r = n + 1 == prm.loop_alu_ops ? regs.counter()
                                                    : (n % 2 == 0 ? regs.ptr_a() : regs.ptr_b());
            s.push_back(Instruction::alu(r, {r}));
          }
        }
      }

      for (std::uint32_t i = 0; i < br; ++i)
        for (std::uint32_t j = 0; j < bc; ++j)
          s.push_back(Instruction::store(regs.acc(i, j), L.c(i0 + i, j0 + j), {regs.ptr_c()}));
    }
    s.push_back(Instruction::barrier());
  }
  return prog;
}

namespace {

enum class Feed { Memory, Queue };

struct PeRole {
  Feed a_feed = Feed::Memory, b_feed = Feed::Memory;
  QueueId a_in = kNoQueue, a_out = kNoQueue, b_in = kNoQueue, b_out = kNoQueue;
};

} // namespace

KernelProgram gen_matmul_systolic(const ValidatedConfig &cfg, MatmulDims d,
                                  const SystolicParams &prm) {
  if (cfg->flavor != Flavor::Systolic)
    throw KernelError("systolic kernels need a systolic-flavor cluster");
  check_dims(cfg, d);
  check_unroll(prm.unroll, d.K);
  const auto regs = ScalarRegs::make(prm.block_rows, prm.block_cols);
  const std::uint32_t P = cfg.total_cores();
  auto [rows, cols] = std::pair{prm.rows, prm.cols};
  if (rows == 0 && cols == 0)
    std::tie(rows, cols) = squarest_grid(P);
  if (std::uint64_t(rows) * cols != P)
    throw KernelError(
        fmt::format("a {}x{} systolic grid does not match the {} cores", rows, cols, P));
  const std::uint32_t br = prm.block_rows, bc = prm.block_cols;
  if (d.M % (rows * br) != 0 || d.N % (cols * bc) != 0)
    throw KernelError(fmt::format("M = {} must be a multiple of {} and N = {} a multiple of {} "
                                  "for a {}x{} grid of {}x{} blocks",
                                  d.M, rows * br, d.N, cols * bc, rows, cols, br, bc));
  if (std::uint64_t(rows) * (cols - 1) + std::uint64_t(rows - 1) * cols >= kNoQueue)
    throw KernelError("systolic grid needs more queues than queue ids available");

  const MatmulLayout L(d);
  KernelProgram prog;
  prog.meta.name = "matmul_systolic";
  prog.meta.dims = d;
  prog.meta.params = {{"rows", rows},
                      {"cols", cols},
                      {"unroll", prm.unroll},
                      {"block_rows", br},
                      {"block_cols", bc},
                      {"loader_alu_ops", prm.loader_alu_ops},
                      {"interior_alu_ops", prm.interior_alu_ops}};
  prog.streams.resize(P);

  auto pe = [cols = cols](std::uint32_t r, std::uint32_t c) { return CoreId(r * cols + c); };

  // A streams east along every row and B south along every column, so PE
  // (r, c) trails the west and north edges by r + c hops and the queue
  // dependences form no cycle.
  std::vector<PeRole> role(P);
  QueueId next_q = 0;
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 1; c < cols; ++c) {
      const QueueId q = next_q++;
      prog.queues.push_back({q, pe(r, c - 1), pe(r, c)});
      role[pe(r, c - 1)].a_out = q;
      role[pe(r, c)].a_in = q;
      role[pe(r, c)].a_feed = Feed::Queue;
    }
  for (std::uint32_t c = 0; c < cols; ++c)
    for (std::uint32_t r = 1; r < rows; ++r) {
      const QueueId q = next_q++;
      prog.queues.push_back({q, pe(r - 1, c), pe(r, c)});
      role[pe(r - 1, c)].b_out = q;
      role[pe(r, c)].b_in = q;
      role[pe(r, c)].b_feed = Feed::Queue;
    }

  const std::uint32_t passes_i = d.M / (rows * br), passes_j = d.N / (cols * bc);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      const CoreId core = pe(r, c);
      const PeRole &ro = role[core];
      const bool loads_a = ro.a_feed == Feed::Memory, loads_b = ro.b_feed == Feed::Memory;
      const std::uint32_t alu_ops =
          (loads_a || loads_b) ? prm.loader_alu_ops : prm.interior_alu_ops;
      auto &s = prog.streams[core];

      auto acquire_a = [&](std::uint32_t i0, std::uint32_t k) {
        for (std::uint32_t i = 0; i < br; ++i)
          s.push_back(loads_a
                          ? Instruction::load(regs.a(i), L.a(i0 + i, k), {regs.ptr_a()}, ro.a_out)
                          : Instruction::qpop(regs.a(i), ro.a_in, ro.a_out));
      };
      auto acquire_b = [&](std::uint32_t j0, std::uint32_t k) {
        for (std::uint32_t j = 0; j < bc; ++j)
          s.push_back(loads_b
                          ? Instruction::load(regs.b(j), L.b(k, j0 + j), {regs.ptr_b()}, ro.b_out)
                          : Instruction::qpop(regs.b(j), ro.b_in, ro.b_out));
      };

      for (std::uint32_t pi = 0; pi < passes_i; ++pi) {
        for (std::uint32_t pj = 0; pj < passes_j; ++pj) {
          const std::uint32_t i0 = (pi * rows + r) * br;
          const std::uint32_t j0 = (pj * cols + c) * bc;

          s.push_back(Instruction::alu(regs.counter()));
          s.push_back(Instruction::alu(regs.ptr_c()));
          if (loads_a)
            s.push_back(Instruction::alu(regs.ptr_a()));
          if (loads_b)
            s.push_back(Instruction::alu(regs.ptr_b()));
          for (std::uint32_t i = 0; i < br; ++i)
            for (std::uint32_t j = 0; j < bc; ++j)
              s.push_back(Instruction::alu(regs.acc(i, j)));

          for (std::uint32_t k = 0; k < d.K; ++k) {
            // Memory-sourced operands first so their latency overlaps the pops.
            if (loads_b && !loads_a) {
              acquire_b(j0, k);
              acquire_a(i0, k);
            } else {
              acquire_a(i0, k);
              acquire_b(j0, k);
            }
            for (std::uint32_t i = 0; i < br; ++i)
              for (std::uint32_t j = 0; j < bc; ++j)
                s.push_back(Instruction::fma(regs.acc(i, j), regs.a(i), regs.b(j)));
            if ((k + 1) % prm.unroll == 0 || k + 1 == d.K) {
              std::uint32_t n = 0;
              if (alu_ops > 1 && loads_a && n + 1 < alu_ops) {
                s.push_back(Instruction::alu(regs.ptr_a(), {regs.ptr_a()}));
                ++n;
              }
              if (alu_ops > 1 && loads_b && n + 1 < alu_ops) {
                s.push_back(Instruction::alu(regs.ptr_b(), {regs.ptr_b()}));
                ++n;
              }
              for (; n < alu_ops; ++n)
                s.push_back(Instruction::alu(regs.counter(), {regs.counter()}));
            }
          }

          for (std::uint32_t i = 0; i < br; ++i)
            for (std::uint32_t j = 0; j < bc; ++j)
              s.push_back(
                  Instruction::store(regs.acc(i, j), L.c(i0 + i, j0 + j), {regs.ptr_c()}));
        }
      }
      s.push_back(Instruction::barrier());
    }
  }
  return prog;
}

KernelProgram gen_matmul_vectorial(const ValidatedConfig &cfg, MatmulDims d,
                                   const VectorialParams &prm) {
  if (cfg->flavor != Flavor::Vectorial)
    throw KernelError("vector kernels need a vectorial-flavor cluster");
  check_dims(cfg, d);
  check_unroll(prm.unroll, d.K);
  const std::uint32_t vl = prm.vl;
  if (vl < 1 || vl > cfg->max_vector_length)
    throw KernelError(
        fmt::format("vector length {} outside [1, {}]", vl, cfg->max_vector_length));
  if (d.N % vl != 0)
    throw KernelError(fmt::format("N = {} is not a multiple of the vector length {}", d.N, vl));
  const std::uint32_t br = prm.block_rows;
  if (br < 1 || prm.block_vectors < 1)
    throw KernelError("register block dimensions must be ≥ 1");
  if (d.M % br != 0)
    throw KernelError(fmt::format("M = {} is not a multiple of the block rows {}", d.M, br));
  // Narrow the block when N has fewer vector-wide chunks than requested.
  std::uint32_t bv = std::min(prm.block_vectors, d.N / vl);
  while ((d.N / vl) % bv != 0)
    --bv;
  // Accumulators plus double-buffered A (broadcast) and B operand registers.
  if (br * bv + 2 * (br + bv) > kNumVectorRegisters)
    throw KernelError(fmt::format("a {}x{} vector register block does not fit in {} vector "
                                  "registers",
                                  br, bv, kNumVectorRegisters));

  const std::uint32_t P = cfg.total_cores();
  const std::uint32_t chunk_cols = d.N / (bv * vl);
  const std::uint64_t blocks = std::uint64_t(d.M / br) * chunk_cols;
  if (blocks % P != 0)
    throw KernelError(fmt::format("{} output blocks of {}x{} cannot be divided evenly over "
                                  "{} tiles",
                                  blocks, br, bv * vl, P));

  auto acc = [&](std::uint32_t i, std::uint32_t v) { return Reg(i * bv + v); };
  auto va = [&](std::uint32_t buf, std::uint32_t i) { return Reg(br * bv + buf * br + i); };
  auto vb = [&](std::uint32_t buf, std::uint32_t v) {
    return Reg(br * bv + 2 * br + buf * bv + v);
  };

  const MatmulLayout L(d);
  KernelProgram prog;
  prog.meta.name = "matmul_vectorial";
  prog.meta.dims = d;
  prog.meta.params = {{"vl", vl},
                      {"block_rows", br},
                      {"block_vectors", bv},
                      {"unroll", prm.unroll},
                      {"loop_alu_ops", prm.loop_alu_ops}};
  prog.streams.resize(P);
  const auto v16 = std::uint16_t(vl);

  for (CoreId core = 0; core < P; ++core) {
    auto &s = prog.streams[core];
    for (std::uint64_t blk = core; blk < blocks; blk += P) {
      const std::uint32_t i0 = std::uint32_t(blk / chunk_cols) * br;
      const std::uint32_t j0 = std::uint32_t(blk % chunk_cols) * bv * vl;
      for (int n = 0; n < 3; ++n)
        s.push_back(Instruction::alu(Reg(1 + n)));
      for (std::uint32_t k = 0; k < d.K; ++k) {
        const std::uint32_t buf = k % 2;
        for (std::uint32_t i = 0; i < br; ++i)
          s.push_back(Instruction::vload(va(buf, i), L.a(i0 + i, k), v16, true));
        for (std::uint32_t v = 0; v < bv; ++v)
          s.push_back(Instruction::vload(vb(buf, v), L.b(k, j0 + v * vl), v16));
        for (std::uint32_t i = 0; i < br; ++i)
          for (std::uint32_t v = 0; v < bv; ++v)
            s.push_back(Instruction::vfma(acc(i, v), va(buf, i), vb(buf, v), v16));
        if ((k + 1) % prm.unroll == 0 || k + 1 == d.K)
          for (std::uint32_t n = 0; n < prm.loop_alu_ops; ++n) {
            const Reg r = Reg(1 + (n + 1 == prm.loop_alu_ops ? 2 : n % 2));
            s.push_back(Instruction::alu(r, {r}));
          }
      }
      for (std::uint32_t i = 0; i < br; ++i)
        for (std::uint32_t v = 0; v < bv; ++v)
          s.push_back(Instruction::vstore(acc(i, v), L.c(i0 + i, j0 + v * vl), v16));
    }
    s.push_back(Instruction::barrier());
  }
  return prog;
}

KernelProgram gen_matmul(const ValidatedConfig &cfg, const MatmulOptions &o) {
  switch (cfg->flavor) {
  case Flavor::Baseline: {
    BaselineParams p;
    if (o.unroll)
      p.unroll = *o.unroll;
    return gen_matmul_baseline(cfg, o.dims, p);
  }
  case Flavor::Systolic: {
    SystolicParams p;
    if (o.unroll)
      p.unroll = *o.unroll;
    if (o.grid_rows)
      p.rows = *o.grid_rows;
    if (o.grid_cols)
      p.cols = *o.grid_cols;
    return gen_matmul_systolic(cfg, o.dims, p);
  }
  case Flavor::Vectorial: {
    VectorialParams p;
    if (o.unroll)
      p.unroll = *o.unroll;
    if (o.vl)
      p.vl = *o.vl;
    return gen_matmul_vectorial(cfg, o.dims, p);
  }
  }
  throw KernelError("unknown flavor");
}

KernelProgram gen_random_queue_program(const ValidatedConfig &cfg, const RandomQueueParams &prm) {
  if (cfg->flavor != Flavor::Systolic)
    throw KernelError("queue programs need a systolic-flavor cluster");
  const std::uint32_t P = cfg.total_cores();
  if (P < 2)
    throw KernelError("queue programs need at least two cores");
  const std::uint64_t pairs = std::uint64_t(P) * (P - 1);
  if (prm.queues < 1 || prm.queues > std::min<std::uint64_t>(pairs, kNoQueue))
    throw KernelError(fmt::format("cannot place {} queues between {} cores", prm.queues, P));

  std::mt19937_64 rng(prm.seed);
  auto uniform = [&](std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng); };

  KernelProgram prog;
  prog.meta.name = "random_queues";
  prog.meta.params = {{"seed", std::int64_t(prm.seed)},
                      {"queues", prm.queues},
                      {"operations", prm.operations}};
  prog.streams.resize(P);
  std::set<std::pair<CoreId, CoreId>> used;
  while (prog.queues.size() < prm.queues) {
    const auto p = CoreId(uniform(P));
    const auto c = CoreId(uniform(P));
    if (p == c || !used.insert({p, c}).second)
      continue;
    prog.queues.push_back({QueueId(prog.queues.size()), p, c});
  }

  std::vector<std::uint32_t> occupancy(prm.queues, 0);
  const std::uint32_t cap = cfg->queue_capacity;
  auto filler = [&](CoreId core) {
    if (uniform(100) >= prm.filler_percent)
      return;
    auto &s = prog.streams[core];
    if (uniform(2))
      s.push_back(Instruction::alu(Reg(1 + uniform(8)), {Reg(1 + uniform(8))}));
    else
      s.push_back(Instruction::load(Reg(9 + uniform(8)), WordAddr(uniform(cfg.total_spm_words()))));
  };
  auto push = [&](const QueueEdge &q) {
    filler(q.producer);
    prog.streams[q.producer].push_back(Instruction::qpush(Reg(1 + uniform(8)), q.id));
    ++occupancy[q.id];
  };
  auto pop = [&](const QueueEdge &q) {
    prog.streams[q.consumer].push_back(Instruction::qpop(Reg(17 + uniform(8)), q.id));
    filler(q.consumer);
    --occupancy[q.id];
  };
  for (std::uint32_t n = 0; n < prm.operations; ++n) {
    const auto &q = prog.queues[uniform(prm.queues)];
    const bool can_push = occupancy[q.id] < cap;
    const bool can_pop = occupancy[q.id] > 0;
    if (can_push && (!can_pop || uniform(2)))
      push(q);
    else
      pop(q);
  }
  for (const auto &q : prog.queues)
    while (occupancy[q.id] > 0)
      pop(q);
  for (auto &s : prog.streams)
    s.push_back(Instruction::barrier());
  return prog;
}

std::uint64_t InstructionMix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t(0));
}
std::uint64_t InstructionMix::vector_ops() const {
  return (*this)[Opcode::VLoad] + (*this)[Opcode::VStore] + (*this)[Opcode::VFMA];
}
double InstructionMix::fma_fraction() const {
  const auto t = total();
  return t ? double((*this)[Opcode::ComputeFMA]) / double(t) : 0.0;
}
double InstructionMix::alu_fraction() const {
  const auto t = total();
  return t ? double((*this)[Opcode::ComputeALU]) / double(t) : 0.0;
}
double InstructionMix::vector_fraction() const {
  const auto t = total();
  return t ? double(vector_ops()) / double(t) : 0.0;
}
InstructionMix &InstructionMix::operator+=(const InstructionMix &o) {
  for (std::size_t i = 0; i < kOpcodeCount; ++i)
    counts[i] += o.counts[i];
  return *this;
}

InstructionMix count_mix(std::span<const Instruction> stream) {
  InstructionMix m;
  for (const auto &in : stream)
    ++m.counts[std::size_t(in.op)];
  return m;
}

InstructionMix count_mix(const KernelProgram &p) {
  InstructionMix m;
  for (const auto &s : p.streams)
    m += count_mix(s);
  return m;
}

std::uint64_t fma_slots(const KernelProgram &p) {
  std::uint64_t n = 0;
  for (const auto &s : p.streams)
    for (const auto &in : s) {
      if (in.op == Opcode::ComputeFMA)
        n += 1;
      else if (in.op == Opcode::VFMA)
        n += in.vector_length;
    }
  return n;
}

std::vector<std::string> check_program(const ValidatedConfig &cfg, const KernelProgram &p) {
  std::vector<std::string> errs;
  constexpr std::size_t kMaxReported = 32;
  auto report = [&](std::string msg) {
    if (errs.size() < kMaxReported)
      errs.push_back(std::move(msg));
  };

  if (p.streams.size() != cfg.total_cores())
    report(fmt::format("program has {} core streams but the cluster has {} cores",
                       p.streams.size(), cfg.total_cores()));

  std::vector<const QueueEdge *> by_id;
  for (const auto &q : p.queues) {
    if (q.id == kNoQueue) {
      report("queue id 65535 is reserved");
      continue;
    }
    if (q.id >= by_id.size())
      by_id.resize(q.id + 1, nullptr);
    if (by_id[q.id])
      report(fmt::format("queue {} declared twice", q.id));
    by_id[q.id] = &q;
    if (q.producer >= cfg.total_cores() || q.consumer >= cfg.total_cores())
      report(fmt::format("queue {} connects cores outside the cluster", q.id));
  }
  if (!p.queues.empty() && cfg->flavor != Flavor::Systolic)
    report(fmt::format("queues require the systolic flavor (config is {})",
                       to_string(cfg->flavor)));

  const std::uint64_t words = cfg.total_spm_words();
  for (std::size_t core = 0; core < p.streams.size(); ++core) {
    const auto &s = p.streams[core];
    if (s.empty() || s.back().op != Opcode::Barrier)
      report(fmt::format("core {}: stream must end with a barrier", core));
    for (std::size_t pc = 0; pc < s.size(); ++pc) {
      const Instruction &in = s[pc];
      auto where = [&] { return fmt::format("core {} pc {} ({})", core, pc, mnemonic(in.op)); };
      const bool vec = is_vector_op(in.op);
      const std::uint32_t nregs = vec ? kNumVectorRegisters : kNumRegisters;
      if (std::size_t(in.op) >= kOpcodeCount) {
        report(fmt::format("core {} pc {}: invalid opcode", core, pc));
        continue;
      }
      if (in.dst != kNoReg && in.dst >= nregs)
        report(fmt::format("{}: destination register {} out of range", where(), in.dst));
      if (in.num_src > kMaxSources)
        report(fmt::format("{}: too many sources", where()));
      for (Reg r : in.sources())
        if (r >= nregs)
          report(fmt::format("{}: source register {} out of range", where(), r));
      if (vec) {
        if (cfg->flavor != Flavor::Vectorial)
          report(fmt::format("{}: vector op in a {} cluster", where(), to_string(cfg->flavor)));
        if (in.vector_length < 1 || in.vector_length > cfg->max_vector_length)
          report(fmt::format("{}: vector length {} outside [1, {}]", where(), in.vector_length,
                             cfg->max_vector_length));
      }
      if (is_memory_op(in.op)) {
        const std::uint64_t span =
            (in.op == Opcode::VLoad || in.op == Opcode::VStore) && !in.broadcast()
                ? in.vector_length
                : 1;
        if (std::uint64_t(in.address()) + span > words)
          report(fmt::format("{}: address {} outside the {}-word SPM", where(), in.address(),
                             words));
      }
      auto check_queue = [&](QueueId q, bool as_producer) {
        if (q >= by_id.size() || !by_id[q]) {
          report(fmt::format("{}: unknown queue {}", where(), q));
          return;
        }
        const CoreId owner = as_producer ? by_id[q]->producer : by_id[q]->consumer;
        if (owner != core)
          report(fmt::format("{}: queue {} {} is core {}", where(), q,
                             as_producer ? "producer" : "consumer", owner));
      };
      if (in.op == Opcode::QPush)
        check_queue(in.queue(), true);
      if (in.op == Opcode::QPop)
        check_queue(in.queue(), false);
      if (in.has_forward()) {
        if (in.op != Opcode::Load && in.op != Opcode::QPop)
          report(fmt::format("{}: only load and qpop may forward", where()));
        else
          check_queue(in.forward, true);
      }
      if ((in.flags & ~Instruction::kBroadcast) != 0 ||
          (in.broadcast() && in.op != Opcode::VLoad))
        report(fmt::format("{}: invalid flags {:#x}", where(), in.flags));
    }
  }
  return errs;
}

std::vector<QueueFlow> queue_flows(const KernelProgram &p) {
  std::vector<QueueFlow> flows;
  std::vector<std::size_t> index;
  for (const auto &q : p.queues) {
    if (q.id >= index.size())
      index.resize(q.id + 1, SIZE_MAX);
    index[q.id] = flows.size();
    flows.push_back({q.id, 0, 0});
  }
  auto at = [&](QueueId q) -> QueueFlow * {
    return q < index.size() && index[q] != SIZE_MAX ? &flows[index[q]] : nullptr;
  };
  for (const auto &s : p.streams)
    for (const auto &in : s) {
      if (in.op == Opcode::QPush)
        if (auto *f = at(in.queue()))
          ++f->pushed;
      if (in.op == Opcode::QPop)
        if (auto *f = at(in.queue()))
          ++f->popped;
      if (in.has_forward())
        if (auto *f = at(in.forward))
          ++f->pushed;
    }
  return flows;
}

bool queue_dependences_acyclic(const KernelProgram &p) {
  // Kahn's algorithm specialised to chains: each stream is a chain in program
  // order, a pop waits for the matching push, and the n-th barrier waits for
  // every core to reach its n-th barrier.
  const std::size_t cores = p.streams.size();
  std::vector<std::size_t> pc(cores, 0);
  std::vector<std::uint64_t> barriers_reached(cores, 0);
  std::vector<std::uint64_t> pushed, popped;
  for (const auto &q : p.queues) {
    if (q.id >= pushed.size()) {
      pushed.resize(q.id + 1, 0);
      popped.resize(q.id + 1, 0);
    }
  }
  auto bump = [&](std::vector<std::uint64_t> &v, QueueId q) {
    if (q >= v.size()) {
      pushed.resize(q + 1, 0);
      popped.resize(q + 1, 0);
    }
    ++v[q];
  };

  bool progress = true;
  while (progress) {
    progress = false;
    for (std::size_t c = 0; c < cores; ++c) {
      const auto &s = p.streams[c];
      while (pc[c] < s.size()) {
        const Instruction &in = s[pc[c]];
        if (in.op == Opcode::QPop) {
          const QueueId q = in.queue();
          if (q >= pushed.size() || popped[q] >= pushed[q])
            break;
          ++popped[q];
        } else if (in.op == Opcode::Barrier) {
          const std::uint64_t gen = barriers_reached[c];
          bool all = true;
          for (std::size_t o = 0; o < cores && all; ++o) {
            // A core has arrived at barrier `gen` if it completed `gen`
            // barriers and is sitting on its next one, or is already past it.
            const bool waiting = barriers_reached[o] == gen && pc[o] < p.streams[o].size() &&
                                 p.streams[o][pc[o]].op == Opcode::Barrier;
            all = barriers_reached[o] > gen || waiting;
          }
          if (!all)
            break;
          ++barriers_reached[c];
        }
        if (in.op == Opcode::QPush)
          bump(pushed, in.queue());
        if (in.has_forward())
          bump(pushed, in.forward);
        ++pc[c];
        progress = true;
      }
    }
  }
  for (std::size_t c = 0; c < cores; ++c)
    if (pc[c] != p.streams[c].size())
      return false;
  return true;
}

} // namespace mempool
