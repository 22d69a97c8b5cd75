#include "adlgnn/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "adlgnn/error.hpp"

namespace adlgnn::config {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    const auto item = trim(s.substr(0, comma));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError(std::string(key) + ": expected " + expected + ", got '" + std::string(value) + "'");
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::size_t to_size(std::string_view key, std::string_view v) { return static_cast<std::size_t>(to_u64(key, v)); }

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "a number");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::size_t> to_sizes(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  for (auto item : split_list(v)) out.push_back(to_size(key, item));
  if (out.empty()) bad_value(key, v, "a comma-separated list of integers");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <class T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      out += items[i];
    } else {
      out += std::to_string(items[i]);
    }
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(member)                                                                     \
  Field {                                                                                      \
    [](RunConfig& c, std::string_view k, std::string_view v) { c.member = to_size(k, v); },   \
        [](const RunConfig& c) { return std::to_string(c.member); }                            \
  }
#define DOUBLE_FIELD(member)                                                                   \
  Field {                                                                                      \
    [](RunConfig& c, std::string_view k, std::string_view v) { c.member = to_double(k, v); }, \
        [](const RunConfig& c) { return fmt(c.member); }                                       \
  }
#define BOOL_FIELD(member)                                                                     \
  Field {                                                                                      \
    [](RunConfig& c, std::string_view k, std::string_view v) { c.member = to_bool(k, v); },   \
        [](const RunConfig& c) { return fmt(c.member); }                                       \
  }

const std::vector<std::pair<std::string, Field>>& table() {
  static const std::vector<std::pair<std::string, Field>> fields = {
      {"data.path", {[](RunConfig& c, std::string_view, std::string_view v) { c.data_path = std::string(v); },
                     [](const RunConfig& c) { return c.data_path.string(); }}},
      {"data.format", {[](RunConfig& c, std::string_view k, std::string_view v) {
                         if (v != "txt-matrix") bad_value(k, v, "txt-matrix");
                         c.data_format = std::string(v);
                       },
                       [](const RunConfig& c) { return c.data_format; }}},
      {"data.forward_fill", BOOL_FIELD(forward_fill)},
      {"data.name", {[](RunConfig& c, std::string_view, std::string_view v) { c.dataset_name = std::string(v); },
                     [](const RunConfig& c) { return c.dataset_name; }}},
      {"split.train", DOUBLE_FIELD(split.train_fraction)},
      {"split.valid", DOUBLE_FIELD(split.valid_fraction)},
      {"split.test", DOUBLE_FIELD(split.test_fraction)},
      {"structure.methods",
       {[](RunConfig& c, std::string_view k, std::string_view v) {
          c.structure.methods.clear();
          for (auto item : split_list(v)) c.structure.methods.push_back(structure::parse_method(item));
          if (c.structure.methods.empty()) bad_value(k, v, "a list of methods");
        },
        [](const RunConfig& c) {
          std::vector<std::string> names;
          for (auto m : c.structure.methods) names.emplace_back(structure::method_name(m));
          return join(names);
        }}},
      {"structure.S", SIZE_FIELD(structure.S)},
      {"structure.granger_lag", SIZE_FIELD(structure.granger_lag)},
      {"structure.mi_bins", SIZE_FIELD(structure.mi_bins)},
      {"structure.te_lag", SIZE_FIELD(structure.te_lag)},
      {"structure.glasso_lambda", DOUBLE_FIELD(structure.glasso_lambda)},
      {"structure.glasso_max_sweeps", SIZE_FIELD(structure.glasso_max_sweeps)},
      {"structure.glasso_tolerance", DOUBLE_FIELD(structure.glasso_tolerance)},
      {"structure.mle_l2", DOUBLE_FIELD(structure.mle_l2)},
      {"structure.subset_fraction", DOUBLE_FIELD(structure.subset_fraction)},
      {"model.window", SIZE_FIELD(model.window)},
      {"model.st_blocks", SIZE_FIELD(model.st_blocks)},
      {"model.mixhop_depth", SIZE_FIELD(model.mixhop_depth)},
      {"model.beta", DOUBLE_FIELD(model.beta)},
      {"model.attention_kernel", SIZE_FIELD(model.attention_kernel)},
      {"model.temporal_kernels",
       {[](RunConfig& c, std::string_view k, std::string_view v) { c.model.temporal_kernels = to_sizes(k, v); },
        [](const RunConfig& c) { return join(c.model.temporal_kernels); }}},
      {"model.dilation_base", SIZE_FIELD(model.dilation_base)},
      {"model.channels", SIZE_FIELD(model.channels)},
      {"model.skip_channels", SIZE_FIELD(model.skip_channels)},
      {"model.end_channels", SIZE_FIELD(model.end_channels)},
      {"model.dropout", DOUBLE_FIELD(model.dropout)},
      {"model.graph_mode",
       {[](RunConfig& c, std::string_view, std::string_view v) { c.model.graph_mode = model::parse_graph_mode(v); },
        [](const RunConfig& c) { return std::string(model::graph_mode_name(c.model.graph_mode)); }}},
      {"model.st_attention", BOOL_FIELD(model.st_attention)},
      {"train.lr", DOUBLE_FIELD(train.lr_init)},
      {"train.l2", DOUBLE_FIELD(train.l2_penalty)},
      {"train.batch_init", SIZE_FIELD(train.batch_init)},
      {"train.batch_max", SIZE_FIELD(train.batch_max)},
      {"train.plateau_patience", SIZE_FIELD(train.plateau_patience)},
      {"train.lr_factor", DOUBLE_FIELD(train.lr_factor)},
      {"train.early_stop_patience", SIZE_FIELD(train.early_stop_patience)},
      {"train.max_epochs", SIZE_FIELD(train.max_epochs)},
      {"train.loss",
       {[](RunConfig& c, std::string_view, std::string_view v) { c.train.loss_kind = train::parse_loss_kind(v); },
        [](const RunConfig& c) { return std::string(train::loss_kind_name(c.train.loss_kind)); }}},
      {"train.improvement_threshold", DOUBLE_FIELD(train.improvement_threshold)},
      {"train.max_batches_per_epoch", SIZE_FIELD(train.max_batches_per_epoch)},
      {"train.grad_clip", DOUBLE_FIELD(train.grad_clip)},
      {"run.horizons",
       {[](RunConfig& c, std::string_view k, std::string_view v) { c.horizons = to_sizes(k, v); },
        [](const RunConfig& c) { return join(c.horizons); }}},
      {"run.seed",
       {[](RunConfig& c, std::string_view k, std::string_view v) { c.seed = to_u64(k, v); },
        [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"run.out_dir", {[](RunConfig& c, std::string_view, std::string_view v) { c.out_dir = std::string(v); },
                       [](const RunConfig& c) { return c.out_dir.string(); }}},
  };
  return fields;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

const Field& field(std::string_view key) {
  for (const auto& [name, f] : table())
    if (name == key) return f;
  throw ConfigError("unknown configuration key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) { field(key).set(*this, key, trim(value)); }

std::string RunConfig::get(std::string_view key) const { return field(key).get(*this); }

std::string RunConfig::to_text() const {
  std::string out = "schema_version = " + std::to_string(kSchemaVersion) + "\n";
  for (const auto& [name, f] : table()) out += name + " = " + f.get(*this) + "\n";
  return out;
}

void RunConfig::validate() const {
  split.validate();
  model.validate();
  train.validate();
  if (horizons.empty()) throw ConfigError("run.horizons: at least one horizon is required");
  for (auto h : horizons)
    if (h == 0) throw ConfigError("run.horizons: horizons must be positive");
  if (structure.methods.empty()) throw ConfigError("structure.methods: at least one method must be enabled");
  if (!(structure.subset_fraction > 0.0 && structure.subset_fraction <= 1.0)) {
    throw ConfigError("structure.subset_fraction must lie in (0, 1]");
  }
}

const std::vector<std::string>& keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : table()) out.push_back(name);
    return out;
  }();
  return names;
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  bool have_version = false;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key = value", line_no);
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("missing key", line_no);
    if (!have_version) {
      if (key != "schema_version") throw ParseError("the first entry must be schema_version", line_no);
      if (value != std::to_string(kSchemaVersion)) {
        throw ParseError("unsupported schema_version " + std::string(value) + " (this build reads " +
                             std::to_string(kSchemaVersion) + ")",
                         line_no);
      }
      have_version = true;
      continue;
    }
    if (!seen.insert(std::string(key)).second) throw ParseError("duplicate key '" + std::string(key) + "'", line_no);
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  if (!have_version) throw ParseError("missing schema_version", line_no);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::filesystem::path output_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return cfg.out_dir;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index) {
  // FNV-1a over the purpose, then splitmix64 finalisation.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = root ^ h ^ (index * 0x9e3779b97f4a7c15ULL);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace adlgnn::config
