#include "mempool/metrics.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

namespace mempool {

double CycleBreakdown::stall_total() const {
  double s = 0.0;
  for (double v : stalls)
    s += v;
  return s;
}

namespace {

CycleBreakdown breakdown(std::uint64_t busy, const std::array<std::uint64_t, kStallReasonCount> &stalls,
                         std::uint64_t idle) {
  std::uint64_t total = busy + idle;
  for (auto s : stalls)
    total += s;
  CycleBreakdown b;
  if (total == 0)
    return b;
  const double t = double(total);
  b.busy = double(busy) / t;
  for (std::size_t i = 0; i < kStallReasonCount; ++i)
    b.stalls[i] = double(stalls[i]) / t;
  b.idle = double(idle) / t;
  return b;
}

} // namespace

SimReport build_report(const ValidatedConfig &cfg, const RawCounters &c) {
  SimReport r;
  r.config = cfg.raw();
  r.kernel = c.kernel;
  r.outcome = c.outcome;
  r.partial = !c.completed();
  r.diagnostic = c.diagnostic;
  r.total_cycles = c.total_cycles;
  r.cores = std::uint32_t(c.cores.size());
  r.compute_units = cfg.compute_units();
  r.fma_slots_used = c.fma_slots_used();
  r.fma_slots_available = std::uint64_t(r.compute_units) * c.total_cycles;
  r.utilization =
      r.fma_slots_available ? double(r.fma_slots_used) / double(r.fma_slots_available) : 0.0;
  if (r.utilization < 0.0 || r.utilization > 1.0)
    throw std::logic_error(fmt::format("utilization {} outside [0, 1]", r.utilization));
  r.peak_gflops = peak_gflops(cfg);
  r.achieved_gflops = r.utilization * r.peak_gflops;

  std::uint64_t busy = 0, idle = 0, loads = 0, stores = 0, instrs = 0;
  std::array<std::uint64_t, kStallReasonCount> stalls{};
  r.per_core.reserve(c.cores.size());
  for (const auto &core : c.cores) {
    if (core.total() != c.total_cycles)
      throw std::logic_error(fmt::format("core accounts for {} of {} cycles", core.total(),
                                         c.total_cycles));
    r.per_core.push_back(breakdown(core.busy, core.stalls, core.idle));
    busy += core.busy;
    idle += core.idle;
    for (std::size_t i = 0; i < kStallReasonCount; ++i)
      stalls[i] += core.stalls[i];
    loads += core.issued[std::size_t(Opcode::Load)];
    stores += core.issued[std::size_t(Opcode::Store)];
    for (auto n : core.issued)
      instrs += n;
  }
  r.aggregate = breakdown(busy, stalls, idle);
  if (!c.cores.empty()) {
    const double n = double(c.cores.size());
    r.loads_per_core = double(loads) / n;
    r.stores_per_core = double(stores) / n;
    r.instructions_per_core = double(instrs) / n;
  }
  r.memory_requests = c.memory_requests;
  r.bank_conflict_cycles = c.bank_conflict_cycles;
  r.queue_elements = c.queue_elements;
  r.checksum = c.checksum;
  r.area = area_ledger(cfg);
  return r;
}

TradeoffTable compare_flavors(const std::vector<SimReport> &reports) {
  TradeoffTable t;
  if (reports.empty())
    return t;
  t.dims = reports.front().kernel.dims;
  const SimReport *base = &reports.front();
  for (const auto &r : reports) {
    if (r.kernel.dims != t.dims)
      throw ReportMismatch(fmt::format("cannot compare {}x{}x{} with {}x{}x{}", t.dims.M,
                                       t.dims.N, t.dims.K, r.kernel.dims.M, r.kernel.dims.N,
                                       r.kernel.dims.K));
  }
  for (const auto &r : reports)
    if (r.config.flavor == Flavor::Baseline) {
      base = &r;
      break;
    }
  for (const auto &r : reports) {
    TradeoffRow row;
    row.flavor = r.config.flavor;
    row.tile_area = r.area.flavor_tile_area;
    row.utilization = r.utilization;
    row.achieved_gflops = r.achieved_gflops;
    row.perf_delta =
        base->utilization > 0 ? (r.utilization - base->utilization) / base->utilization : 0.0;
    row.area_delta = (row.tile_area - base->area.flavor_tile_area) / base->area.flavor_tile_area;
    t.rows.push_back(row);
  }
  return t;
}

// --- rendering ---

namespace {

std::string dims_string(const MatmulDims &d) { return fmt::format("{}x{}x{}", d.M, d.N, d.K); }

std::vector<std::string> report_cells(const SimReport &r) {
  std::vector<std::string> cells{
      std::string(to_string(r.config.flavor)),
      r.kernel.name,
      dims_string(r.kernel.dims),
      std::string(to_string(r.outcome)),
      fmt::format("{}", r.cores),
      fmt::format("{}", r.total_cycles),
      fmt::format("{}", r.fma_slots_used),
      fmt::format("{}", r.fma_slots_available),
      fmt::format("{:.4f}", r.utilization),
      fmt::format("{:.1f}", r.peak_gflops),
      fmt::format("{:.2f}", r.achieved_gflops),
      fmt::format("{:.2f}", r.area.flavor_tile_area),
      fmt::format("{:.4f}", r.aggregate.busy),
  };
  for (std::size_t i = 1; i < kStallReasonCount; ++i)
    cells.push_back(fmt::format("{:.4f}", r.aggregate.stalls[i]));
  cells.push_back(fmt::format("{:.4f}", r.aggregate.idle));
  cells.push_back(fmt::format("{:.1f}", r.loads_per_core));
  cells.push_back(fmt::format("{:.1f}", r.stores_per_core));
  cells.push_back(fmt::format("{}", r.bank_conflict_cycles));
  cells.push_back(fmt::format("{:016x}", r.checksum));
  return cells;
}

std::vector<std::string> tradeoff_cells(const TradeoffRow &row) {
  return {std::string(to_string(row.flavor)), fmt::format("{:.2f}", row.tile_area),
          fmt::format("{:.4f}", row.utilization), fmt::format("{:.2f}", row.achieved_gflops),
          fmt::format("{:+.2f}", row.perf_delta * 100.0),
          fmt::format("{:+.2f}", row.area_delta * 100.0)};
}

std::string text_table(const std::vector<std::string> &header,
                       const std::vector<std::vector<std::string>> &rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i)
    width[i] = header[i].size();
  for (const auto &row : rows)
    for (std::size_t i = 0; i < row.size(); ++i)
      width[i] = std::max(width[i], row[i].size());
  auto line = [&](const std::vector<std::string> &cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i)
      s += i ? fmt::format("  {:>{}}", cells[i], width[i]) : fmt::format("{:<{}}", cells[i], width[i]);
    return s + '\n';
  };
  std::string out = line(header);
  std::size_t total = 0;
  for (auto w : width)
    total += w + 2;
  out += std::string(total - 2, '-') + '\n';
  for (const auto &row : rows)
    out += line(row);
  return out;
}

std::string csv(const std::vector<std::string> &header,
                const std::vector<std::vector<std::string>> &rows) {
  auto line = [](const std::vector<std::string> &cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i)
      s += (i ? "," : "") + cells[i];
    return s + '\n';
  };
  std::string out = line(header);
  for (const auto &row : rows)
    out += line(row);
  return out;
}

nlohmann::json breakdown_json(const CycleBreakdown &b) {
  nlohmann::json j;
  j["busy"] = b.busy;
  for (std::size_t i = 1; i < kStallReasonCount; ++i)
    j[std::string(to_string(StallReason(i)))] = b.stalls[i];
  j["idle"] = b.idle;
  return j;
}

nlohmann::json report_json(const SimReport &r) {
  nlohmann::json j;
  j["flavor"] = to_string(r.config.flavor);
  j["kernel"] = {{"name", r.kernel.name}, {"dims", dims_string(r.kernel.dims)}};
  for (const auto &[k, v] : r.kernel.params)
    j["kernel"]["params"][k] = v;
  j["outcome"] = to_string(r.outcome);
  j["partial"] = r.partial;
  if (!r.diagnostic.empty())
    j["diagnostic"] = r.diagnostic;
  j["cores"] = r.cores;
  j["compute_units"] = r.compute_units;
  j["total_cycles"] = r.total_cycles;
  j["fma_slots_used"] = r.fma_slots_used;
  j["fma_slots_available"] = r.fma_slots_available;
  j["utilization"] = r.utilization;
  j["peak_gflops"] = r.peak_gflops;
  j["achieved_gflops"] = r.achieved_gflops;
  j["tile_area"] = r.area.flavor_tile_area;
  j["cluster_area"] = r.area.cluster_area();
  j["breakdown"] = breakdown_json(r.aggregate);
  j["loads_per_core"] = r.loads_per_core;
  j["stores_per_core"] = r.stores_per_core;
  j["instructions_per_core"] = r.instructions_per_core;
  j["memory_requests"] = r.memory_requests;
  j["bank_conflict_cycles"] = r.bank_conflict_cycles;
  j["queue_elements"] = r.queue_elements;
  j["checksum"] = fmt::format("{:016x}", r.checksum);
  auto &per_core = j["per_core"] = nlohmann::json::array();
  for (const auto &b : r.per_core)
    per_core.push_back(breakdown_json(b));
  return j;
}

nlohmann::json tradeoff_json(const TradeoffTable &t) {
  nlohmann::json j;
  j["dims"] = dims_string(t.dims);
  auto &rows = j["rows"] = nlohmann::json::array();
  for (const auto &r : t.rows)
    rows.push_back({{"flavor", to_string(r.flavor)},
                    {"tile_area", r.tile_area},
                    {"utilization", r.utilization},
                    {"achieved_gflops", r.achieved_gflops},
                    {"perf_delta", r.perf_delta},
                    {"area_delta", r.area_delta}});
  return j;
}

void write_file(const std::filesystem::path &path, const std::string &text) {
  std::ofstream f(path);
  if (!f)
    throw std::runtime_error(fmt::format("cannot open '{}' for writing", path.string()));
  f << text;
  if (!f)
    throw std::runtime_error(fmt::format("failed writing '{}'", path.string()));
}

bool is_csv(const std::filesystem::path &p) { return p.extension() == ".csv"; }

} // namespace

const std::vector<std::string> &report_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c{"flavor",        "kernel",          "dims",
                               "outcome",       "cores",           "cycles",
                               "fma_slots",     "slots_available", "utilization",
                               "peak_gflops",   "achieved_gflops", "tile_area",
                               "busy"};
    for (std::size_t i = 1; i < kStallReasonCount; ++i)
      c.emplace_back(to_string(StallReason(i)));
    c.insert(c.end(), {"idle", "loads_per_core", "stores_per_core", "conflict_cycles",
                       "checksum"});
    return c;
  }();
  return cols;
}

const std::vector<std::string> &tradeoff_columns() {
  static const std::vector<std::string> cols{"flavor",          "tile_area",  "utilization",
                                             "achieved_gflops", "perf_delta_pct",
                                             "area_delta_pct"};
  return cols;
}

std::string render_table(const std::vector<SimReport> &reports) {
  std::vector<std::vector<std::string>> rows;
  for (const auto &r : reports)
    rows.push_back(report_cells(r));
  return text_table(report_columns(), rows);
}

std::string render_csv(const std::vector<SimReport> &reports) {
  std::vector<std::vector<std::string>> rows;
  for (const auto &r : reports)
    rows.push_back(report_cells(r));
  return csv(report_columns(), rows);
}

std::string render_json(const std::vector<SimReport> &reports) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto &r : reports)
    j.push_back(report_json(r));
  return j.dump(2) + '\n';
}

std::string render_table(const TradeoffTable &t) {
  std::vector<std::vector<std::string>> rows;
  for (const auto &r : t.rows)
    rows.push_back(tradeoff_cells(r));
  return text_table(tradeoff_columns(), rows);
}

std::string render_csv(const TradeoffTable &t) {
  std::vector<std::vector<std::string>> rows;
  for (const auto &r : t.rows)
    rows.push_back(tradeoff_cells(r));
  return csv(tradeoff_columns(), rows);
}

std::string render_json(const TradeoffTable &t) { return tradeoff_json(t).dump(2) + '\n'; }

void write_reports(const std::filesystem::path &path, const std::vector<SimReport> &reports) {
  write_file(path, is_csv(path) ? render_csv(reports) : render_json(reports));
}

void write_tradeoff(const std::filesystem::path &path, const TradeoffTable &t,
                    const std::vector<SimReport> &reports) {
  if (is_csv(path)) {
    write_file(path, render_csv(t));
    return;
  }
  nlohmann::json j = tradeoff_json(t);
  j["reports"] = nlohmann::json::parse(render_json(reports));
  write_file(path, j.dump(2) + '\n');
}

} // namespace mempool
