#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mempool/topology.hpp"

namespace mempool {

class ConfigParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Field names accepted in config files and sweep axes, in declaration order.
const std::vector<std::string> &config_keys();

/// Sets one ClusterConfig field from its textual value. Throws
/// ConfigParseError for unknown keys or malformed values.
void apply_setting(ClusterConfig &cfg, std::string_view key, std::string_view value);

/// Parses a flat `key: value` document. Every field is optional; omitted
/// fields take the defaults of the flavor named in the document (baseline if
/// absent). Unknown keys and nested structure are errors.
ClusterConfig parse_config(std::string_view text);
ClusterConfig load_config(const std::filesystem::path &path);

std::string dump_config(const ClusterConfig &cfg);

} // namespace mempool
