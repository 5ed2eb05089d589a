#pragma once

#include "vfx/train.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace vfx {

struct DataConfig {
  std::string corpus_dir = "data";
  std::string output_dir = "run";
  CorpusConfig corpus;
  std::uint64_t split_seed = 2;
};

struct RunConfig {
  TrainConfig train;
  DataConfig data;
};

struct ParsedConfig {
  RunConfig config;
  /// One line per key left at its default.
  std::vector<std::string> notices;
};

/// Flat `section.key = value` lines; `#` starts a comment. Unknown keys,
/// repeated keys and malformed values raise ConfigError naming the line.
ParsedConfig parse_run_config(std::string_view text);
/// Every key, one per line, in a fixed order; parsing the result gives back
/// the same configuration.
std::string serialize_run_config(const RunConfig& cfg);
ParsedConfig load_run_config(const std::filesystem::path& path);

/// All recognised keys in serialization order.
std::vector<std::string> run_config_keys();

}  // namespace vfx
