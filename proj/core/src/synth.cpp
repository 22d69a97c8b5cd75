#include "adlgnn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>

#include "adlgnn/error.hpp"
#include "adlgnn/graph_io.hpp"

namespace adlgnn::synth {

void SynthConfig::validate() const {
  if (nodes < 2) throw ConfigError("synth: need at least 2 nodes");
  if (length < 2) throw ConfigError("synth: need at least 2 time steps");
  if (!(density > 0.0 && density <= 1.0)) throw ConfigError("synth: density must lie in (0, 1]");
  if (!(coupling >= 0.0) || !std::isfinite(coupling)) throw ConfigError("synth: coupling must be >= 0");
  if (!std::isfinite(self_coupling)) throw ConfigError("synth: self coupling must be finite");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("synth: noise must be >= 0");
}

namespace {

double spectral_radius(const structure::Matrix& B) {
  Eigen::EigenSolver<structure::Matrix> es(B, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

SynthResult generate(const SynthConfig& cfg) {
  cfg.validate();
  const auto N = static_cast<Eigen::Index>(cfg.nodes);
  std::mt19937_64 rng(cfg.seed);

  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  for (Eigen::Index j = 0; j < N; ++j)
    for (Eigen::Index i = 0; i < N; ++i)
      if (i != j) pairs.emplace_back(j, i);
  const auto edges = static_cast<std::size_t>(std::llround(cfg.density * static_cast<double>(pairs.size())));
  std::shuffle(pairs.begin(), pairs.end(), rng);

  SynthResult out;
  out.coefficients = structure::Matrix::Zero(N, N);
  out.truth.support = structure::MaskMatrix::Zero(N, N);
  std::bernoulli_distribution sign(0.5);
  for (std::size_t e = 0; e < edges; ++e) {
    const auto [j, i] = pairs[e];
    out.coefficients(j, i) = (!cfg.signed_edges || sign(rng)) ? cfg.coupling : -cfg.coupling;
    out.truth.support(j, i) = 1;
  }
  out.coefficients.diagonal().setConstant(cfg.self_coupling);

  double rho = spectral_radius(out.coefficients);
  if (rho >= kMaxSpectralRadius) {
    const double target = 0.9;
    out.coefficients *= target / rho;
    out.warnings.push_back("requested coefficients have spectral radius " + std::to_string(rho) +
                           "; rescaled to " + std::to_string(target));
    rho = spectral_radius(out.coefficients);
  }
  out.spectral_radius = rho;

  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::RowVectorXd y(N);
  // A random start keeps noise-free runs away from the trivial zero orbit.
  for (Eigen::Index i = 0; i < N; ++i) y(i) = gauss(rng);
  out.values.resize(static_cast<Eigen::Index>(cfg.length), N);
  Eigen::RowVectorXd e(N);
  for (std::size_t t = 0; t < cfg.burn_in + cfg.length; ++t) {
    for (Eigen::Index i = 0; i < N; ++i) e(i) = cfg.noise * gauss(rng);
    y = y * out.coefficients + e;
    if (t >= cfg.burn_in) out.values.row(static_cast<Eigen::Index>(t - cfg.burn_in)) = y;
  }
  if (!out.values.allFinite()) throw Error("synth: trajectory is not finite");
  return out;
}

void write(const SynthResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  data::save_matrix(dir / "data.txt", r.values);
  structure::Matrix edges = r.coefficients;
  edges.diagonal().setZero();
  structure::write_edge_list(dir / "truth.tsv", edges);
}

}  // namespace adlgnn::synth
