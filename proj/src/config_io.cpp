#include "mempool/config_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

namespace mempool {

namespace {

std::uint32_t parse_count(std::string_view key, std::string_view v) {
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigParseError(fmt::format("{}: expected an integer, got '{}'", key, v));
  if (out < 0 || out > std::int64_t(UINT32_MAX))
    throw ConfigParseError(fmt::format("{}: value {} out of range", key, out));
  return std::uint32_t(out);
}

double parse_real(std::string_view key, std::string_view v) {
  std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception &) {
    used = 0;
  }
  if (used != s.size() || s.empty())
    throw ConfigParseError(fmt::format("{}: expected a number, got '{}'", key, v));
  return out;
}

} // namespace

const std::vector<std::string> &config_keys() {
  static const std::vector<std::string> keys = {
      "cores_per_tile",       "banks_per_tile",        "tiles_per_group",
      "groups",               "bank_words",            "latency_local_cycles",
      "latency_per_level_cycles", "flavor",            "fpus_per_vector_unit",
      "max_vector_length",    "queue_capacity",        "max_outstanding_loads",
      "frequency_hz",         "flops_per_fpu_cycle"};
  return keys;
}

void apply_setting(ClusterConfig &cfg, std::string_view key, std::string_view value) {
  if (key == "cores_per_tile")
    cfg.cores_per_tile = parse_count(key, value);
  else if (key == "banks_per_tile")
    cfg.banks_per_tile = parse_count(key, value);
  else if (key == "tiles_per_group")
    cfg.tiles_per_group = parse_count(key, value);
  else if (key == "groups")
    cfg.groups = parse_count(key, value);
  else if (key == "bank_words")
    cfg.bank_words = parse_count(key, value);
  else if (key == "latency_local_cycles")
    cfg.latency_local_cycles = parse_count(key, value);
  else if (key == "latency_per_level_cycles")
    cfg.latency_per_level_cycles = parse_count(key, value);
  else if (key == "flavor") {
    auto f = parse_flavor(value);
    if (!f)
      throw ConfigParseError(
          fmt::format("flavor: expected baseline, systolic or vectorial, got '{}'", value));
    cfg.flavor = *f;
  } else if (key == "fpus_per_vector_unit")
    cfg.fpus_per_vector_unit = parse_count(key, value);
  else if (key == "max_vector_length")
    cfg.max_vector_length = parse_count(key, value);
  else if (key == "queue_capacity")
    cfg.queue_capacity = parse_count(key, value);
  else if (key == "max_outstanding_loads")
    cfg.max_outstanding_loads = parse_count(key, value);
  else if (key == "frequency_hz")
    cfg.frequency_hz = parse_real(key, value);
  else if (key == "flops_per_fpu_cycle")
    cfg.flops_per_fpu_cycle = parse_real(key, value);
  else
    throw ConfigParseError(fmt::format("unknown configuration key '{}'", key));
}

ClusterConfig parse_config(std::string_view text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception &e) {
    throw ConfigParseError(fmt::format("malformed config: {}", e.what()));
  }
  if (root.IsNull())
    return default_config(Flavor::Baseline);
  if (!root.IsMap())
    throw ConfigParseError("config must be a flat key/value mapping");

  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto &kv : root) {
    const auto key = kv.first.as<std::string>();
    if (!kv.second.IsScalar())
      throw ConfigParseError(fmt::format("{}: expected a scalar value", key));
    entries.emplace_back(key, kv.second.as<std::string>());
  }

  // The flavor selects the defaults for fields that are left out.
  Flavor flavor = Flavor::Baseline;
  for (const auto &[k, v] : entries) {
    if (k == "flavor") {
      ClusterConfig probe;
      apply_setting(probe, k, v);
      flavor = probe.flavor;
    }
  }
  ClusterConfig cfg = default_config(flavor);
  for (const auto &[k, v] : entries)
    apply_setting(cfg, k, v);
  return cfg;
}

ClusterConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigParseError(fmt::format("cannot read config file '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigParseError &e) {
    throw ConfigParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string dump_config(const ClusterConfig &cfg) {
  std::string out;
  out += fmt::format("cores_per_tile: {}\n", cfg.cores_per_tile);
  out += fmt::format("banks_per_tile: {}\n", cfg.banks_per_tile);
  out += fmt::format("tiles_per_group: {}\n", cfg.tiles_per_group);
  out += fmt::format("groups: {}\n", cfg.groups);
  out += fmt::format("bank_words: {}\n", cfg.bank_words);
  out += fmt::format("latency_local_cycles: {}\n", cfg.latency_local_cycles);
  out += fmt::format("latency_per_level_cycles: {}\n", cfg.latency_per_level_cycles);
  out += fmt::format("flavor: {}\n", to_string(cfg.flavor));
  out += fmt::format("fpus_per_vector_unit: {}\n", cfg.fpus_per_vector_unit);
  out += fmt::format("max_vector_length: {}\n", cfg.max_vector_length);
  out += fmt::format("queue_capacity: {}\n", cfg.queue_capacity);
  out += fmt::format("max_outstanding_loads: {}\n", cfg.max_outstanding_loads);
  out += fmt::format("frequency_hz: {}\n", cfg.frequency_hz);
  out += fmt::format("flops_per_fpu_cycle: {}\n", cfg.flops_per_fpu_cycle);
  return out;
}

} // namespace mempool
