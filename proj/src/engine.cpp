#include "mempool/engine.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <memory>
#include <ostream>
#include <thread>

#include <fmt/format.h>

#include "mempool/config_io.hpp"

namespace mempool {

std::string_view to_string(RunOutcome o) {
  switch (o) {
  case RunOutcome::Completed:
    return "completed";
  case RunOutcome::DeadlockDetected:
    return "deadlock";
  case RunOutcome::CycleLimitExceeded:
    return "cycle_limit";
  }
  return "?";
}

namespace {

std::string join_problems(const std::vector<std::string> &problems) {
  std::string s = "program does not match the configuration";
  for (const auto &p : problems)
    s += "\n  " + p;
  return s;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

class Engine {
public:
  Engine(const ValidatedConfig &cfg, const KernelProgram &program, std::ostream *trace)
      : cfg_(cfg), program_(program), mem_(cfg), trace_(trace) {
    const std::uint32_t P = cfg.total_cores();
    cores_.reserve(P);
    for (CoreId c = 0; c < P; ++c)
      cores_.emplace_back(c, cfg->max_outstanding_loads);
    barrier_.participants = P;

    QueueId max_id = 0;
    for (const auto &e : program.queues)
      max_id = std::max(max_id, e.id);
    queue_index_.assign(program.queues.empty() ? 0 : std::size_t(max_id) + 1, nullptr);
    queues_.reserve(program.queues.size());
    for (const auto &e : program.queues) {
      queues_.push_back(
          std::make_unique<SystolicQueue>(e, cfg->queue_capacity, cfg.tile_of_core(e.consumer)));
      queues_.back()->set_push_hook(
          [this](const SystolicQueue &q, std::uint32_t v, Cycle now, Cycle visible) {
            on_queue_push(q, v, now, visible);
          });
      queue_index_[e.id] = queues_.back().get();
    }

    vector_of_core_.assign(P, nullptr);
    if (cfg->flavor == Flavor::Vectorial) {
      units_.reserve(cfg.total_tiles());
      for (std::uint32_t t = 0; t < cfg.total_tiles(); ++t)
        units_.emplace_back(t, t * cfg->cores_per_tile, cfg->fpus_per_vector_unit);
      for (CoreId c = 0; c < P; ++c)
        vector_of_core_[c] = &units_[c / cfg->cores_per_tile];
    }

    if (trace_)
      *trace_ << kTraceHeader << '\n';
  }

  RawCounters run(const RunLimits &limits) {
    RawCounters out;
    StepContext ctx{cfg_, mem_, queue_index_, nullptr, barrier_, 0};
    Cycle quiet = 0;
    Cycle cycle = 0;
    std::size_t finished = 0;
    const std::size_t P = cores_.size();

    while (true) {
      ++cycle;
      if (cycle > limits.max_cycles) {
        cycle = limits.max_cycles;
        out.outcome = RunOutcome::CycleLimitExceeded;
        out.diagnostic = fmt::format("cycle limit of {} reached", limits.max_cycles);
        break;
      }
      bool progress = false;
      cycle_ = cycle;
      ctx.cycle = cycle;

      // (1) responses
      progress |= mem_.deliver(cycle, [this](const MemRequest &r) { on_response(r); }) > 0;

      // (2) issue
      for (std::size_t c = 0; c < P; ++c) {
        ctx.vector = vector_of_core_[c];
        if (step_core(cores_[c], program_.streams[c], ctx).result == StepResult::Issued)
          progress = true;
      }

      // (3) arbitration
      progress |= mem_.arbitrate(cycle) > 0;

      // (4) vector units
      for (auto &u : units_)
        progress |= u.advance(cycle, mem_);

      // (5) barrier release, termination, watchdog
      if (barrier_.arrived == barrier_.participants) {
        for (std::size_t c = 0; c < P; ++c) {
          auto &core = cores_[c];
          core.at_barrier = false;
          ++core.pc;
          if (core.pc >= program_.streams[c].size() && !core.finished) {
            core.finished = true;
            ++finished;
          }
        }
        barrier_.arrived = 0;
        ++barrier_.generation;
        progress = true;
      }
      if (finished == P)
        break;
      quiet = progress ? 0 : quiet + 1;
      if (quiet >= limits.watchdog) {
        out.outcome = RunOutcome::DeadlockDetected;
        capture_wait_graph(out, limits.watchdog);
        break;
      }
    }

    out.total_cycles = cycle;
    out.cores.reserve(P);
    for (const auto &c : cores_) {
      CoreCounters cc;
      cc.busy = c.compute_busy_cycles;
      cc.stalls = c.stall_cycles;
      // Cycles after an abort are not accounted by the cores themselves.
      cc.idle = c.idle_cycles;
      cc.fma_issued = c.fma_issued;
      cc.issued = c.issued;
      out.scalar_fma_slots += c.fma_issued;
      out.cores.push_back(cc);
    }
    for (const auto &u : units_) {
      out.vector_units.push_back(
          {u.tile_id(), u.active_element_slots(), u.element_requests(), u.vfu_busy_cycles()});
      out.vector_fma_slots += u.active_element_slots();
    }
    for (const auto &q : queues_)
      out.queues.push_back({q->id(), q->pushed(), q->popped(), q->push_digest(), q->pop_digest()});
    out.memory_requests = mem_.next_request_id() - queue_elements_;
    out.bank_conflict_cycles = mem_.conflict_cycles();
    out.queue_elements = queue_elements_;
    out.checksum = checksum_;
    out.kernel = program_.meta;
    return out;
  }

private:
  void on_response(const MemRequest &r) {
    checksum_ += splitmix((std::uint64_t(cfg_.flat_bank(r.target)) << 40) ^
                          (std::uint64_t(r.offset) << 24) ^ (std::uint64_t(r.kind) << 20) ^
                          splitmix(r.data));
    if (trace_)
      *trace_ << fmt::format("{} {} {} {} {} {} {} {} {}\n", r.req_id, r.origin, r.target.group,
                             r.target.tile, r.target.bank, to_string(r.kind), r.issue_cycle,
                             r.grant_cycle, r.complete_cycle);
    const auto tag = decode_tag(r.tag);
    switch (tag.kind) {
    case TagKind::ScalarLoad:
      complete_load(cores_.at(tag.core), r, cfg_, queue_index_, cycle_);
      break;
    case TagKind::ScalarStore:
      --cores_.at(tag.core).outstanding_stores;
      break;
    case TagKind::VectorElement:
      vector_of_core_.at(tag.core)->on_response(tag.index, cycle_);
      break;
    }
  }

  void on_queue_push(const SystolicQueue &q, std::uint32_t value, Cycle now, Cycle visible) {
    const std::uint64_t id = mem_.next_request_id();
    ++queue_elements_;
    checksum_ += splitmix((std::uint64_t(q.id()) << 32 | value) ^ 0x51ull << 56);
    if (trace_) {
      const TileCoord h = q.home();
      *trace_ << fmt::format("{} {} {} {} - {} {} {} {}\n", id, q.producer(), h.group, h.tile,
                             to_string(RequestKind::QueueOp), now, now, visible);
    }
  }

  void capture_wait_graph(RawCounters &out, Cycle window) {
    for (const auto &c : cores_) {
      if (c.finished)
        continue;
      WaitEdge e{c.core_id, c.stall_reason, c.stall_queue, c.core_id};
      if (c.stall_queue != kNoQueue && c.stall_queue < queue_index_.size() &&
          queue_index_[c.stall_queue]) {
        const auto *q = queue_index_[c.stall_queue];
        e.peer = c.stall_reason == StallReason::QueueEmpty ? q->producer() : q->consumer();
        if (c.stall_reason == StallReason::QueueEmpty)
          out.starved_queues.push_back(q->id());
      }
      out.wait_graph.push_back(e);
    }
    std::sort(out.starved_queues.begin(), out.starved_queues.end());

    std::string starved;
    for (auto q : out.starved_queues) {
      const auto *sq = queue_index_[q];
      starved += fmt::format("{}queue {} (core {} -> core {}, {} pushed, {} popped)",
                             starved.empty() ? "" : ", ", q, sq->producer(), sq->consumer(),
                             sq->pushed(), sq->popped());
    }
    out.diagnostic = fmt::format("deadlock: no progress for {} cycles at cycle {}", window, cycle_);
    if (!starved.empty())
      out.diagnostic += "; starved " + starved;
    if (barrier_.arrived > 0)
      out.diagnostic +=
          fmt::format("; barrier has {}/{} cores", barrier_.arrived, barrier_.participants);
    for (const auto &e : out.wait_graph) {
      out.diagnostic += fmt::format("\n  core {} waits: {}", e.core, to_string(e.reason));
      if (e.queue != kNoQueue)
        out.diagnostic += fmt::format(" on queue {} (core {})", e.queue, e.peer);
    }
  }

  const ValidatedConfig &cfg_;
  const KernelProgram &program_;
  MemorySystem mem_;
  std::ostream *trace_;
  std::vector<CoreState> cores_;
  std::vector<std::unique_ptr<SystolicQueue>> queues_;
  std::vector<SystolicQueue *> queue_index_;
  std::vector<VectorUnit> units_;
  std::vector<VectorUnit *> vector_of_core_;
  BarrierState barrier_;
  Cycle cycle_ = 0;
  std::uint64_t queue_elements_ = 0;
  std::uint64_t checksum_ = 0;
};

} // namespace

ProgramConfigMismatch::ProgramConfigMismatch(std::vector<std::string> problems)
    : std::invalid_argument(join_problems(problems)), problems_(std::move(problems)) {}

std::uint64_t CoreCounters::stall_total() const {
  std::uint64_t s = 0;
  for (auto v : stalls)
    s += v;
  return s;
}

RawCounters run(const ValidatedConfig &cfg, const KernelProgram &program,
                const RunLimits &limits, std::ostream *trace) {
  if (auto problems = check_program(cfg, program); !problems.empty())
    throw ProgramConfigMismatch(std::move(problems));
  Engine engine(cfg, program, trace);
  auto out = engine.run(limits);
  // Cores stop counting when a run aborts; close the books so every core
  // accounts for every cycle.
  for (auto &c : out.cores)
    if (c.total() < out.total_cycles)
      c.idle += out.total_cycles - c.total();
  return out;
}

// --- sweeps ---

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto p = s.find(sep, start);
    parts.push_back(s.substr(start, p == std::string_view::npos ? p : p - start));
    if (p == std::string_view::npos)
      break;
    start = p + 1;
  }
  return parts;
}

std::uint32_t parse_u32(std::string_view key, std::string_view v) {
  std::uint32_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || p != v.data() + v.size())
    throw std::invalid_argument(
        fmt::format("{}: expected an unsigned integer, got '{}'", key, v));
  return out;
}

void apply_kernel_setting(MatmulOptions &k, std::string_view key, std::string_view value) {
  if (key == "dims") {
    k.dims = parse_dims(value);
  } else if (key == "unroll") {
    k.unroll = parse_u32(key, value);
  } else if (key == "vl") {
    k.vl = parse_u32(key, value);
  } else if (key == "grid") {
    const auto parts = split(value, 'x');
    if (parts.size() != 2)
      throw std::invalid_argument(fmt::format("grid: expected RxC, got '{}'", value));
    k.grid_rows = parse_u32(key, parts[0]);
    k.grid_cols = parse_u32(key, parts[1]);
  } else {
    throw std::invalid_argument(fmt::format("unknown kernel parameter '{}'", key));
  }
}

bool is_kernel_key(std::string_view key) {
  const auto &keys = kernel_axis_keys();
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

} // namespace

MatmulDims parse_dims(std::string_view s) {
  const auto parts = split(s, 'x');
  if (parts.size() != 3)
    throw std::invalid_argument(fmt::format("dims: expected MxNxK, got '{}'", s));
  return {parse_u32("dims", parts[0]), parse_u32("dims", parts[1]), parse_u32("dims", parts[2])};
}

SweepAxis parse_axis(std::string_view spec) {
  const auto eq = spec.find('=');
  if (eq == std::string_view::npos || eq == 0 || eq + 1 == spec.size())
    throw std::invalid_argument(fmt::format("axis: expected key=v1,v2,..., got '{}'", spec));
  SweepAxis axis{std::string(spec.substr(0, eq)), {}};
  for (auto v : split(spec.substr(eq + 1), ',')) {
    if (v.empty())
      throw std::invalid_argument(fmt::format("axis {}: empty value", axis.key));
    axis.values.emplace_back(v);
  }
  return axis;
}

const std::vector<std::string> &kernel_axis_keys() {
  static const std::vector<std::string> keys{"dims", "unroll", "vl", "grid"};
  return keys;
}

std::vector<SweepPoint> expand_sweep(const ClusterConfig &cfg, const MatmulOptions &kernel,
                                     const std::vector<SweepAxis> &axes) {
  const auto &ckeys = config_keys();
  for (const auto &a : axes) {
    if (!is_kernel_key(a.key) && std::find(ckeys.begin(), ckeys.end(), a.key) == ckeys.end())
      throw std::invalid_argument(fmt::format("unknown sweep axis '{}'", a.key));
    if (a.values.empty())
      throw std::invalid_argument(fmt::format("sweep axis '{}' has no values", a.key));
  }

  std::vector<SweepPoint> points;
  std::vector<std::size_t> idx(axes.size(), 0);
  while (true) {
    SweepPoint pt{{}, cfg, kernel};
    for (std::size_t a = 0; a < axes.size(); ++a)
      pt.settings.emplace_back(axes[a].key, axes[a].values[idx[a]]);
    // Flavor first, so explicit axes can still override its defaults.
    for (const auto &[k, v] : pt.settings)
      if (k == "flavor") {
        try {
          apply_setting(pt.config, k, v);
        } catch (const ConfigParseError &e) {
          throw std::invalid_argument(e.what());
        }
        pt.config.cores_per_tile = default_config(pt.config.flavor).cores_per_tile;
      }
    for (const auto &[k, v] : pt.settings) {
      if (k == "flavor")
        continue;
      if (is_kernel_key(k)) {
        apply_kernel_setting(pt.kernel, k, v);
      } else {
        try {
          apply_setting(pt.config, k, v);
        } catch (const ConfigParseError &e) {
          throw std::invalid_argument(e.what());
        }
      }
    }
    points.push_back(std::move(pt));

    std::size_t a = axes.size();
    while (a > 0 && ++idx[a - 1] == axes[a - 1].values.size()) {
      idx[a - 1] = 0;
      --a;
    }
    if (a == 0)
      break;
  }
  return points;
}

std::vector<SweepResult> run_sweep(const ClusterConfig &cfg, const MatmulOptions &kernel,
                                   const std::vector<SweepAxis> &axes,
                                   const ProgramGenerator &generate, unsigned threads,
                                   const RunLimits &limits) {
  auto points = expand_sweep(cfg, kernel, axes);
  std::vector<SweepResult> results(points.size());
  std::vector<std::exception_ptr> errors(points.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      try {
        const auto vcfg = require_valid(points[i].config);
        const auto program = generate(vcfg, points[i].kernel);
        results[i] = {points[i], run(vcfg, program, limits)};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  threads = std::max(1u, std::min<unsigned>(threads, unsigned(points.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back(worker);
  }
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);
  return results;
}

} // namespace mempool
