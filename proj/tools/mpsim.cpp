// mpsim: command-line driver for the cluster simulator.
//
// Exit status: 0 success, 1 invalid input (config, program, arguments),
// 2 simulation fault (deadlock, cycle limit, run-time contract violation).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mempool/config_io.hpp"
#include "mempool/engine.hpp"
#include "mempool/kernel.hpp"
#include "mempool/metrics.hpp"
#include "mempool/topology.hpp"

namespace fs = std::filesystem;
using namespace mempool;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitFault = 2;

struct InvalidInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ValidatedConfig validated(const ClusterConfig &cfg) {
  auto res = validate_config(cfg);
  if (!res.ok()) {
    std::string msg = "invalid configuration:";
    for (const auto &e : res.errors)
      msg += fmt::format("\n  {}: {}", e.field, e.message);
    throw InvalidInput(msg);
  }
  return *res.config;
}

ClusterConfig read_config(const std::string &path) {
  try {
    return load_config(path);
  } catch (const ConfigParseError &e) {
    throw InvalidInput(e.what());
  }
}

int cmd_validate(const std::string &path) {
  const auto cfg = read_config(path);
  const auto res = validate_config(cfg);
  if (!res.ok()) {
    for (const auto &e : res.errors)
      fmt::print(stderr, "{}: {}: {}\n", path, e.field, e.message);
    return kExitInvalid;
  }
  const auto &v = *res.config;
  fmt::print("{}: ok\n", path);
  fmt::print("  flavor          {}\n", to_string(cfg.flavor));
  fmt::print("  groups x tiles  {} x {}\n", cfg.groups, cfg.tiles_per_group);
  fmt::print("  cores           {}\n", v.total_cores());
  fmt::print("  banks           {}\n", v.total_banks());
  fmt::print("  spm             {} KiB\n", v.total_spm_bytes() / 1024);
  fmt::print("  compute units   {}\n", v.compute_units());
  fmt::print("  peak            {:.1f} GFLOP/s\n", peak_gflops(v));
  fmt::print("  tile area       {:.2f}\n", area_ledger(v).flavor_tile_area);
  return kExitOk;
}

int cmd_probe_latency(const std::string &path) {
  const auto cfg = validated(read_config(path));
  struct Probe {
    const char *name;
    TileCoord target;
    bool exists;
  };
  const std::vector<Probe> probes{
      {"same tile", {0, 0}, true},
      {"same group, remote tile", {0, 1}, cfg->tiles_per_group > 1},
      {"remote group", {1 % cfg->groups, 0}, cfg->groups > 1},
  };
  fmt::print("zero-load latency from core 0 (cycles)\n");
  fmt::print("{:<26}{:>8}{:>10}\n", "target", "levels", "latency");
  for (const auto &p : probes) {
    if (!p.exists) {
      fmt::print("{:<26}{:>8}{:>10}\n", p.name, "-", "-");
      continue;
    }
    fmt::print("{:<26}{:>8}{:>10}\n", p.name, levels_crossed(cfg, 0, p.target),
               zero_load_latency(cfg, 0, p.target));
  }
  return kExitOk;
}

struct KernelArgs {
  std::string kernel = "matmul";
  std::string dims = "256x256x256";
  std::optional<std::uint32_t> unroll;
  std::optional<std::uint32_t> vl;
  std::string grid;
  std::uint64_t seed = 1;
  std::uint32_t queues = 8;
  std::uint32_t operations = 400;
};

MatmulOptions matmul_options(const KernelArgs &k) {
  MatmulOptions o;
  try {
    o.dims = parse_dims(k.dims);
    if (!k.grid.empty()) {
      // RxC reads as the first two of MxNxK.
      const auto g = parse_dims(k.grid + "x1");
      o.grid_rows = g.M;
      o.grid_cols = g.N;
    }
  } catch (const std::invalid_argument &e) {
    throw InvalidInput(e.what());
  }
  o.unroll = k.unroll;
  o.vl = k.vl;
  return o;
}

KernelProgram make_program(const ValidatedConfig &cfg, const KernelArgs &k) {
  try {
    if (k.kernel == "matmul")
      return gen_matmul(cfg, matmul_options(k));
    if (k.kernel == "random-queues")
      return gen_random_queue_program(cfg, {k.seed, k.queues, k.operations, 30});
  } catch (const KernelError &e) {
    throw InvalidInput(e.what());
  }
  if (fs::exists(k.kernel)) {
    std::ifstream f(k.kernel);
    std::stringstream ss;
    ss << f.rdbuf();
    try {
      return parse_program(ss.str());
    } catch (const ProgramParseError &e) {
      throw InvalidInput(fmt::format("{}: {}", k.kernel, e.what()));
    }
  }
  throw InvalidInput(fmt::format(
      "unknown kernel '{}' (expected matmul, random-queues or a program file)", k.kernel));
}

ClusterConfig with_flavor(ClusterConfig cfg, const std::string &flavor) {
  if (flavor.empty())
    return cfg;
  auto f = parse_flavor(flavor);
  if (!f)
    throw InvalidInput(fmt::format("unknown flavor '{}'", flavor));
  if (*f != cfg.flavor) {
    cfg.flavor = *f;
    cfg.cores_per_tile = default_config(*f).cores_per_tile;
  }
  return cfg;
}

RawCounters simulate(const ValidatedConfig &cfg, const KernelProgram &prog, const RunLimits &lim,
                     std::ostream *trace) {
  try {
    return run(cfg, prog, lim, trace);
  } catch (const ProgramConfigMismatch &e) {
    throw InvalidInput(e.what());
  }
}

int finish(const std::vector<SimReport> &reports) {
  for (const auto &r : reports)
    if (r.partial) {
      fmt::print(stderr, "simulation aborted ({}): {}\n", to_string(r.outcome), r.diagnostic);
      return kExitFault;
    }
  return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Cycle-level simulator of a shared-L1 manycore cluster"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mpsim 1.0");

  std::string config_path, out_path, trace_path, flavor, dump_path;
  std::vector<std::string> axes;
  KernelArgs kargs;
  RunLimits limits;
  unsigned threads = 1;

  auto *validate = app.add_subcommand("validate", "Check a configuration file");
  validate->add_option("config", config_path, "Config file")->required();

  auto *probe = app.add_subcommand("probe-latency", "Print the zero-load latency matrix");
  probe->add_option("config", config_path, "Config file")->required();

  auto add_kernel_options = [&](CLI::App *cmd) {
    cmd->add_option("--dims", kargs.dims, "Matmul dimensions MxNxK")->capture_default_str();
    cmd->add_option("--unroll", kargs.unroll, "Inner-loop unroll factor");
    cmd->add_option("--vl", kargs.vl, "Vector length (vectorial)");
    cmd->add_option("--grid", kargs.grid, "Systolic grid RxC");
    cmd->add_option("--max-cycles", limits.max_cycles, "Abort after this many cycles")
        ->capture_default_str();
    cmd->add_option("--watchdog", limits.watchdog, "Cycles without progress before deadlock")
        ->capture_default_str();
  };

  auto *runc = app.add_subcommand("run", "Simulate one kernel and write its report");
  runc->add_option("config", config_path, "Config file")->required();
  runc->add_option("--kernel", kargs.kernel,
                   "matmul, random-queues, or a serialized program file")
      ->capture_default_str();
  runc->add_option("--flavor", flavor, "Override the config's flavor");
  add_kernel_options(runc);
  runc->add_option("--seed", kargs.seed, "Seed for --kernel random-queues")->capture_default_str();
  runc->add_option("--queues", kargs.queues, "Queue count for random-queues")->capture_default_str();
  runc->add_option("--operations", kargs.operations, "Push/pop count for random-queues")
      ->capture_default_str();
  runc->add_option("--trace", trace_path, "Write the request trace here");
  runc->add_option("--dump-program", dump_path, "Write the generated program here");
  runc->add_option("--out", out_path, "Report path (.csv or .json)");

  auto *sweep = app.add_subcommand("sweep", "Run the Cartesian product of parameter axes");
  sweep->add_option("config", config_path, "Config file")->required();
  sweep->add_option("--axis", axes, "key=v1,v2,... (repeatable)");
  add_kernel_options(sweep);
  sweep->add_option("--threads", threads, "Points simulated concurrently")->capture_default_str();
  sweep->add_option("--out", out_path, "Report path (.csv or .json)");

  std::string config_dir;
  auto *fig2 = app.add_subcommand("reproduce-fig2",
                                  "Three-flavor matmul comparison: area vs utilization");
  fig2->add_option("config-dir", config_dir,
                   "Directory with baseline.yaml, systolic.yaml, vectorial.yaml")
      ->required();
  add_kernel_options(fig2);
  fig2->add_option("--threads", threads, "Flavors simulated concurrently")->capture_default_str();
  fig2->add_option("--out", out_path, "Trade-off table path (.csv or .json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*validate)
      return cmd_validate(config_path);
    if (*probe)
      return cmd_probe_latency(config_path);

    if (*runc) {
      const auto cfg = validated(with_flavor(read_config(config_path), flavor));
      const auto prog = make_program(cfg, kargs);
      if (!dump_path.empty()) {
        std::ofstream f(dump_path);
        f << serialize_program(prog);
      }
      std::ofstream trace_file;
      if (!trace_path.empty()) {
        trace_file.open(trace_path);
        if (!trace_file)
          throw InvalidInput(fmt::format("cannot open '{}' for writing", trace_path));
      }
      const auto counters = simulate(cfg, prog, limits, trace_path.empty() ? nullptr : &trace_file);
      const std::vector<SimReport> reports{build_report(cfg, counters)};
      fmt::print("{}", render_table(reports));
      if (!out_path.empty())
        write_reports(out_path, reports);
      return finish(reports);
    }

    if (*sweep) {
      std::vector<SweepAxis> parsed;
      for (const auto &a : axes)
        parsed.push_back(parse_axis(a));
      const auto base = read_config(config_path);
      const auto results =
          run_sweep(base, matmul_options(kargs), parsed, gen_matmul, threads, limits);
      std::vector<SimReport> reports;
      for (const auto &r : results) {
        reports.push_back(build_report(require_valid(r.point.config), r.counters));
        std::string label;
        for (const auto &[k, v] : r.point.settings)
          label += fmt::format("{}{}={}", label.empty() ? "" : " ", k, v);
        if (!label.empty())
          fmt::print("[{}] utilization {:.4f}\n", label, reports.back().utilization);
      }
      fmt::print("{}", render_table(reports));
      if (!out_path.empty())
        write_reports(out_path, reports);
      return finish(reports);
    }

    if (*fig2) {
      std::vector<SimReport> reports;
      std::vector<ClusterConfig> cfgs;
      for (const char *name : {"baseline", "systolic", "vectorial"}) {
        const fs::path p = fs::path(config_dir) / fmt::format("{}.yaml", name);
        if (!fs::exists(p))
          throw InvalidInput(fmt::format("missing {}", p.string()));
        cfgs.push_back(read_config(p.string()));
      }
      const auto opts = matmul_options(kargs);
      // One sweep point per config file.
      std::vector<RawCounters> counters(cfgs.size());
      std::vector<std::exception_ptr> errors(cfgs.size());
      auto work = [&](std::size_t i) {
        try {
          const auto v = validated(cfgs[i]);
          counters[i] = simulate(v, gen_matmul(v, opts), limits, nullptr);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      };
      if (threads > 1) {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < cfgs.size(); ++i)
          pool.emplace_back(work, i);
      } else {
        for (std::size_t i = 0; i < cfgs.size(); ++i)
          work(i);
      }
      for (auto &e : errors)
        if (e)
          std::rethrow_exception(e);
      for (std::size_t i = 0; i < cfgs.size(); ++i)
        reports.push_back(build_report(validated(cfgs[i]), counters[i]));
      const auto table = compare_flavors(reports);
      fmt::print("{}\n{}", render_table(reports), render_table(table));
      if (!out_path.empty())
        write_tradeoff(out_path, table, reports);
      return finish(reports);
    }
  } catch (const InvalidInput &e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitInvalid;
  } catch (const KernelError &e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitInvalid;
  } catch (const SimulationFault &e) {
    fmt::print(stderr, "simulation fault: {}\n", e.what());
    return kExitFault;
  } catch (const std::invalid_argument &e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitInvalid;
  } catch (const std::exception &e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitInvalid;
  }
  return kExitOk;
}
