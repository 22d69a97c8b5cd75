#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adlgnn/data.hpp"
#include "adlgnn/structure.hpp"

namespace adlgnn::synth {

/// Sparse first-order VAR:  y(t) = y(t-1) B + e(t),  with B(j, i) the
/// influence of series j on series i and e ~ N(0, noise^2).
struct SynthConfig {
  std::size_t nodes = 10;
  std::size_t length = 5000;
  /// Fraction of the N (N - 1) ordered pairs that carry an edge.
  double density = 0.2;
  /// Magnitude of the off-diagonal coefficients before any rescaling.
  double coupling = 0.4;
  /// Own-lag coefficient on the diagonal.
  double self_coupling = 0.3;
  /// Random edge signs; when false every off-diagonal coefficient is positive.
  bool signed_edges = true;
  double noise = 1.0;
  std::size_t burn_in = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthResult {
  data::Matrix values;          // length x nodes
  structure::Matrix coefficients;  // B, nodes x nodes
  structure::BinaryMask truth;     // off-diagonal support of B
  double spectral_radius = 0.0;    // after any rescaling
  std::vector<std::string> warnings;
};

/// Spectral radius bound enforced on B.
inline constexpr double kMaxSpectralRadius = 0.95;

/// Exactly round(density * N (N - 1)) directed edges, chosen uniformly.
/// Signs are random unless `signed_edges` is off. If the spectral radius of B reaches 0.95, B is scaled
/// to 0.9 and a warning is recorded.
SynthResult generate(const SynthConfig& cfg);

/// Writes <dir>/data.txt (txt-matrix) and <dir>/truth.tsv (src, dst, weight
/// per true edge).
void write(const SynthResult& r, const std::filesystem::path& dir);

}  // namespace adlgnn::synth
