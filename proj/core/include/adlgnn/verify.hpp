#pragma once

// Built-in self checks behind `adlgnn verify`: gradient checks, causality,
// attention mask invariants, metric oracles and mix-hop identities.

#include <cstdint>
#include <string>
#include <vector>

namespace adlgnn::verify {

struct CheckResult {
  std::string group;
  std::string name;
  bool passed = false;
  /// Measured error or count, compared against `tolerance`.
  double value = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;
  std::string detail;
};

std::vector<CheckResult> run_all(std::uint64_t seed = 1);

/// Fixed-width table, one row per check, with a summary line.
std::string format_table(const std::vector<CheckResult>& results);

}  // namespace adlgnn::verify
