#pragma once

// Run configuration: a flat key = value text file.
//
//   # comment
//   schema_version = 1
//   model.channels = 8
//   run.horizons = 3, 6
//
// The first non-comment line must declare the schema version. Unknown keys,
// repeated keys and malformed values are errors.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "adlgnn/data.hpp"
#include "adlgnn/model.hpp"
#include "adlgnn/structure.hpp"
#include "adlgnn/train.hpp"

namespace adlgnn::config {

inline constexpr int kSchemaVersion = 1;

/// Environment variable that overrides run.out_dir.
inline constexpr const char* kOutDirEnv = "ADLGNN_OUT_DIR";

struct RunConfig {
  std::filesystem::path data_path;
  std::string data_format = "txt-matrix";
  bool forward_fill = false;
  /// Dataset label used to look up published reference numbers.
  std::string dataset_name;
  data::SplitSpec split;
  structure::StructureConfig structure;
  model::ModelConfig model;
  train::TrainConfig train;
  std::vector<std::size_t> horizons{3, 6, 12, 24};
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";

  /// Sets one key from its text form. Throws ConfigError.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;

  /// Every key with its current value, in canonical order, headed by the
  /// schema version. Parsing the result reproduces this config.
  std::string to_text() const;

  /// Component invariants that need no data (structure S is checked against N later).
  void validate() const;
};

/// All recognised keys in canonical order.
const std::vector<std::string>& keys();

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// run.out_dir unless the environment override is set.
std::filesystem::path output_dir(const RunConfig& cfg);

/// Deterministic child seed for a named consumer (e.g. "model", "train") and
/// an index such as the horizon.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0);

}  // namespace adlgnn::config
