#pragma once

// Statistical dependency estimators and the static graph pipeline.
//
// Orientation: for directed estimators, entry (j, i) is the strength of
// series j's influence on series i. Row j therefore lists j's out-edges.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "adlgnn/data.hpp"

namespace adlgnn::structure {

using Matrix = Eigen::MatrixXd;
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

enum class Method { CM, GC, CST, GL, MLE, MI, TE };

inline constexpr Method kAllMethods[] = {Method::CM, Method::GC,  Method::CST, Method::GL,
                                         Method::MLE, Method::MI, Method::TE};

std::string_view method_name(Method m);
/// Accepts the short names CM, GC, CST, GL, MLE, MI, TE (case-insensitive).
Method parse_method(std::string_view name);

struct AdjacencyMatrix {
  Matrix weights;
  bool directed = false;
  /// False when an iterative estimator stopped at its sweep limit.
  bool converged = true;

  std::size_t size() const { return static_cast<std::size_t>(weights.rows()); }
};

struct BinaryMask {
  MaskMatrix support;

  std::size_t size() const { return static_cast<std::size_t>(support.rows()); }
  std::size_t row_count(std::size_t row) const;
  bool operator()(std::size_t r, std::size_t c) const { return support(r, c) != 0; }
};

struct StructureConfig {
  std::vector<Method> methods{std::begin(kAllMethods), std::end(kAllMethods)};
  std::size_t S = 20;
  std::size_t granger_lag = 2;
  std::size_t mi_bins = 8;
  std::size_t te_lag = 1;
  double glasso_lambda = 0.1;
  std::size_t glasso_max_sweeps = 200;
  double glasso_tolerance = 1e-4;
  double mle_l2 = 1e-2;
  double subset_fraction = 0.10;

  /// Throws ConfigError; `series` is N of the data the config will run on.
  void validate(std::size_t series) const;
};

// --- estimators ------------------------------------------------------------

/// |Pearson r| off the diagonal; constant series correlate 0 with everything.
AdjacencyMatrix corr_matrix(const Matrix& Y);

/// Signed Pearson correlation with the zero convention for constant series
/// and unit diagonal.
Matrix pearson(const Matrix& Y);

/// Pairwise Granger scores max(0, log(e_i / e_ij)) at entry (j, i).
AdjacencyMatrix granger_matrix(const Matrix& Y, std::size_t lag);

/// Minimum spanning tree over d = sqrt(2 (1 - r)); tree edges weigh 1 - d / 2.
AdjacencyMatrix cst_matrix(const Matrix& Y);
AdjacencyMatrix cst_from_correlation(const Matrix& r);

struct GlassoResult {
  Matrix precision;
  Matrix covariance;
  std::size_t sweeps = 0;
  bool converged = false;
};

/// Coordinate-descent graphical lasso on a covariance or correlation matrix.
GlassoResult graphical_lasso(const Matrix& S, double lambda, std::size_t max_sweeps = 200,
                             double tolerance = 1e-4);

/// |precision| of the graphical lasso applied to the correlation matrix of Y.
AdjacencyMatrix glasso_matrix(const Matrix& Y, double lambda, std::size_t max_sweeps = 200,
                              double tolerance = 1e-4);

/// Couplings from per-node L2-penalised logistic regression of the next
/// sign-of-difference state on the current state vector. This approximates
/// kinetic Ising maximum-likelihood reconstruction.
AdjacencyMatrix mle_matrix(const Matrix& Y, double l2 = 1e-2);

/// Plug-in mutual information (nats) on equal-frequency bins.
AdjacencyMatrix mi_matrix(const Matrix& Y, std::size_t bins);

/// Plug-in transfer entropy TE(j -> i) (nats) at entry (j, i).
AdjacencyMatrix te_matrix(const Matrix& Y, std::size_t lag, std::size_t bins);

// --- pipeline --------------------------------------------------------------

/// Min-max over off-diagonal entries; a flat range maps everything to 0.
AdjacencyMatrix normalize_matrix(const AdjacencyMatrix& A);

/// Cellwise maximum. `labels` names the inputs in error messages.
AdjacencyMatrix fuse_max(std::span<const AdjacencyMatrix> mats, std::span<const std::string> labels = {});

/// Keeps the S largest entries of every row, ties to the lower column.
AdjacencyMatrix top_s_sparsify(const AdjacencyMatrix& A, std::size_t S);

BinaryMask binarize(const AdjacencyMatrix& A);

struct MethodReport {
  Method method;
  double seconds = 0.0;
  bool ok = false;
  bool converged = true;
  std::string message;
};

struct StaticGraphReport {
  std::vector<MethodReport> methods;
  std::size_t rows_used = 0;
  StructureConfig config;
  std::vector<std::string> warnings;
};

struct StaticGraph {
  AdjacencyMatrix adjacency;
  BinaryMask mask;
  StaticGraphReport report;
};

/// Runs the enabled estimators on the latest `subset_fraction` of `train`,
/// normalises, fuses, sparsifies and binarises. Failing estimators are
/// skipped with a warning; throws Error when none succeeds.
StaticGraph static_graph(const data::TimeSeriesDataset& train, const StructureConfig& cfg);

AdjacencyMatrix run_method(Method m, const Matrix& Y, const StructureConfig& cfg);

// --- evaluation against a known graph ---------------------------------------

struct RecoveryScore {
  std::size_t true_positive = 0;
  std::size_t predicted = 0;
  std::size_t actual = 0;
  std::size_t exact_rows = 0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Directed-edge precision/recall of `predicted` against `truth` (diagonal ignored).
RecoveryScore score_recovery(const BinaryMask& predicted, const BinaryMask& truth);

}  // namespace adlgnn::structure
