#include "adlgnn/structure.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "adlgnn/error.hpp"

namespace adlgnn::structure {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::CM: return "CM";
    case Method::GC: return "GC";
    case Method::CST: return "CST";
    case Method::GL: return "GL";
    case Method::MLE: return "MLE";
    case Method::MI: return "MI";
    case Method::TE: return "TE";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  std::string upper(name);
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (Method m : kAllMethods)
    if (method_name(m) == upper) return m;
  throw ConfigError("unknown structure method '" + std::string(name) + "'");
}

std::size_t BinaryMask::row_count(std::size_t row) const {
  std::size_t n = 0;
  for (Eigen::Index c = 0; c < support.cols(); ++c) n += support(static_cast<Eigen::Index>(row), c) != 0;
  return n;
}

void StructureConfig::validate(std::size_t series) const {
  if (methods.empty()) throw ConfigError("structure: at least one method must be enabled");
  if (S < 1 || S + 1 > series) {
    throw ConfigError("structure: S must lie in [1, N-1] = [1, " + std::to_string(series - 1) + "], got " +
                      std::to_string(S));
  }
  if (!(subset_fraction > 0.0 && subset_fraction <= 1.0)) {
    throw ConfigError("structure: subset_fraction must lie in (0, 1]");
  }
  if (granger_lag < 1 || te_lag < 1) throw ConfigError("structure: lags must be >= 1");
  if (mi_bins < 2) throw ConfigError("structure: bins must be >= 2");
  if (!(glasso_lambda > 0.0)) throw ConfigError("structure: glasso lambda must be positive");
  if (!(mle_l2 > 0.0)) throw ConfigError("structure: mle l2 penalty must be positive");
}

namespace {

bool is_constant(const Eigen::Ref<const Eigen::VectorXd>& x) { return x.maxCoeff() == x.minCoeff(); }

// Column z-scores; constant columns become all zeros.
Matrix standardize(const Matrix& Y) {
  Matrix Z = Y.rowwise() - Y.colwise().mean();
  const double n = static_cast<double>(Y.rows());
  for (Eigen::Index c = 0; c < Z.cols(); ++c) {
    if (is_constant(Y.col(c))) {
      Z.col(c).setZero();
      continue;
    }
    const double sd = std::sqrt(Z.col(c).squaredNorm() / n);
    Z.col(c) /= sd;
  }
  return Z;
}

void zero_diagonal(Matrix& m) { m.diagonal().setZero(); }

}  // namespace

Matrix pearson(const Matrix& Y) {
  const Eigen::Index N = Y.cols();
  Matrix centered = Y.rowwise() - Y.colwise().mean();
  Eigen::VectorXd norms = centered.colwise().norm().transpose();
  std::vector<bool> constant(static_cast<std::size_t>(N));
  for (Eigen::Index c = 0; c < N; ++c) constant[c] = is_constant(Y.col(c));
  Matrix r = centered.transpose() * centered;
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = 0; j < N; ++j) {
      if (i == j) {
        r(i, j) = 1.0;
      } else if (constant[i] || constant[j]) {
        r(i, j) = 0.0;
      } else {
        r(i, j) = std::clamp(r(i, j) / (norms(i) * norms(j)), -1.0, 1.0);
      }
    }
  }
  // exact symmetry regardless of summation order
  return (r + r.transpose()) / 2.0;
}

AdjacencyMatrix corr_matrix(const Matrix& Y) {
  if (Y.rows() < 3) throw ConfigError("corr_matrix: need T >= 3");
  Matrix w = pearson(Y).cwiseAbs();
  zero_diagonal(w);
  return {std::move(w), false, true};
}

AdjacencyMatrix granger_matrix(const Matrix& Y, std::size_t lag) {
  const auto T = static_cast<std::size_t>(Y.rows());
  const Eigen::Index N = Y.cols();
  if (lag < 1) throw ConfigError("granger_matrix: lag must be >= 1");
  if (T < 10 * lag) throw ConfigError("granger_matrix: need T >= 10 * lag");
  const Matrix Z = standardize(Y);
  const auto p = static_cast<Eigen::Index>(lag);
  const Eigen::Index n = static_cast<Eigen::Index>(T) - p;
  constexpr double kJitter = 1e-8;

  auto lags_of = [&](Eigen::Index s, Matrix& X, Eigen::Index col0) {
    for (Eigen::Index l = 1; l <= p; ++l) X.col(col0 + l - 1) = Z.col(s).segment(p - l, n);
  };
  auto rss = [&](const Matrix& X, const Eigen::VectorXd& y) {
    Matrix gram = X.transpose() * X;
    gram.diagonal().array() += kJitter;
    const Eigen::VectorXd beta = gram.ldlt().solve(X.transpose() * y);
    return (y - X * beta).squaredNorm();
  };

  Matrix w = Matrix::Zero(N, N);
  Matrix restricted(n, 1 + p);
  Matrix full(n, 1 + 2 * p);
  for (Eigen::Index i = 0; i < N; ++i) {
    const Eigen::VectorXd y = Z.col(i).tail(n);
    restricted.col(0).setOnes();
    lags_of(i, restricted, 1);
    const double e_i = rss(restricted, y);
    full.leftCols(1 + p) = restricted;
    for (Eigen::Index j = 0; j < N; ++j) {
      if (j == i) continue;
      lags_of(j, full, 1 + p);
      const double e_ij = rss(full, y);
      if (e_i <= 0.0) continue;
      const double ratio = e_i / std::max(e_ij, std::numeric_limits<double>::min());
      w(j, i) = std::max(0.0, std::log(ratio));
    }
  }
  return {std::move(w), true, true};
}

AdjacencyMatrix cst_from_correlation(const Matrix& r) {
  const Eigen::Index N = r.rows();
  if (r.cols() != N) throw DimensionError("cst: correlation matrix must be square");
  Matrix d(N, N);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j) d(i, j) = std::sqrt(std::max(0.0, 2.0 * (1.0 - r(i, j))));

  // Prim's algorithm, ties resolved towards lower indices.
  Matrix w = Matrix::Zero(N, N);
  std::vector<bool> in_tree(static_cast<std::size_t>(N), false);
  std::vector<double> best(static_cast<std::size_t>(N), std::numeric_limits<double>::infinity());
  std::vector<Eigen::Index> parent(static_cast<std::size_t>(N), -1);
  best[0] = 0.0;
  for (Eigen::Index step = 0; step < N; ++step) {
    Eigen::Index u = -1;
    for (Eigen::Index v = 0; v < N; ++v)
      if (!in_tree[v] && (u < 0 || best[v] < best[u])) u = v;
    in_tree[u] = true;
    if (parent[u] >= 0) {
      const double weight = 1.0 - d(u, parent[u]) / 2.0;
      w(u, parent[u]) = w(parent[u], u) = weight;
    }
    for (Eigen::Index v = 0; v < N; ++v) {
      if (!in_tree[v] && d(u, v) < best[v]) {
        best[v] = d(u, v);
        parent[v] = u;
      }
    }
  }
  return {std::move(w), false, true};
}

AdjacencyMatrix cst_matrix(const Matrix& Y) {
  if (Y.rows() < 3) throw ConfigError("cst_matrix: need T >= 3");
  return cst_from_correlation(pearson(Y));
}

namespace {

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

}  // namespace

GlassoResult graphical_lasso(const Matrix& S, double lambda, std::size_t max_sweeps, double tolerance) {
  const Eigen::Index p = S.rows();
  if (S.cols() != p) throw DimensionError("graphical_lasso: matrix must be square");
  if (!(lambda > 0.0)) throw ConfigError("graphical_lasso: lambda must be positive");

  Matrix W = S;
  W.diagonal().array() += lambda;
  Matrix B = Matrix::Zero(p, p);  // column j: lasso coefficients for variable j
  GlassoResult result;

  const Eigen::Index q = p - 1;
  Matrix W11(q, q);
  Eigen::VectorXd s12(q), beta(q), w12(q);
  std::vector<Eigen::Index> others(static_cast<std::size_t>(q));

  for (std::size_t sweep = 1; sweep <= max_sweeps && p > 1; ++sweep) {
    const Matrix W_old = W;
    for (Eigen::Index j = 0; j < p; ++j) {
      Eigen::Index k = 0;
      for (Eigen::Index i = 0; i < p; ++i)
        if (i != j) others[k++] = i;
      for (Eigen::Index a = 0; a < q; ++a) {
        s12(a) = S(others[a], j);
        beta(a) = B(others[a], j);
        for (Eigen::Index b = 0; b < q; ++b) W11(a, b) = W(others[a], others[b]);
      }
      // Lasso by coordinate descent: min 1/2 b'W11 b - b's12 + lambda |b|_1.
      for (int it = 0; it < 1000; ++it) {
        double change = 0.0;
        for (Eigen::Index a = 0; a < q; ++a) {
          const double partial = s12(a) - W11.row(a).dot(beta) + W11(a, a) * beta(a);
          const double next = soft_threshold(partial, lambda) / W11(a, a);
          change = std::max(change, std::abs(next - beta(a)));
          beta(a) = next;
        }
        if (change < tolerance * 1e-2) break;
      }
      w12 = W11 * beta;
      for (Eigen::Index a = 0; a < q; ++a) {
        W(others[a], j) = W(j, others[a]) = w12(a);
        B(others[a], j) = beta(a);
      }
    }
    result.sweeps = sweep;
    const double mean_change = (W - W_old).cwiseAbs().sum() / static_cast<double>(std::max<Eigen::Index>(p * q, 1));
    if (mean_change < tolerance) {
      result.converged = true;
      break;
    }
  }
  if (p == 1) result.converged = true;

  Matrix theta = Matrix::Zero(p, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    double dot = 0.0;
    for (Eigen::Index i = 0; i < p; ++i)
      if (i != j) dot += W(i, j) * B(i, j);
    const double t22 = 1.0 / (W(j, j) - dot);
    theta(j, j) = t22;
    for (Eigen::Index i = 0; i < p; ++i)
      if (i != j) theta(i, j) = -B(i, j) * t22;
  }
  result.precision = (theta + theta.transpose()) / 2.0;
  result.covariance = W;
  return result;
}

AdjacencyMatrix glasso_matrix(const Matrix& Y, double lambda, std::size_t max_sweeps, double tolerance) {
  if (Y.rows() < 3) throw ConfigError("glasso_matrix: need T >= 3");
  const auto fit = graphical_lasso(pearson(Y), lambda, max_sweeps, tolerance);
  Matrix w = fit.precision.cwiseAbs();
  zero_diagonal(w);
  return {std::move(w), false, fit.converged};
}

AdjacencyMatrix mle_matrix(const Matrix& Y, double l2) {
  const Eigen::Index T = Y.rows();
  const Eigen::Index N = Y.cols();
  if (T < 50) throw ConfigError("mle_matrix: need T >= 50");
  // Spins s(t) = +1 if the series rises at t, -1 otherwise; t = 0 .. T-2.
  const Eigen::Index steps = T - 1;
  Matrix spins(steps, N);
  for (Eigen::Index t = 0; t < steps; ++t)
    for (Eigen::Index c = 0; c < N; ++c) spins(t, c) = Y(t + 1, c) > Y(t, c) ? 1.0 : -1.0;

  const Eigen::Index n = steps - 1;
  Matrix X(n, N + 1);
  X.col(0).setOnes();
  X.rightCols(N) = spins.topRows(n);
  for (Eigen::Index c = 1; c <= N; ++c) X.col(c).array() -= X.col(c).mean();

  Matrix w = Matrix::Zero(N, N);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < N; ++i) {
    const Eigen::VectorXd y = (spins.col(i).tail(n).array() + 1.0) / 2.0;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(N + 1);
    // Newton iterations on mean log-loss + l2 * |beta|^2.
    for (int it = 0; it < 100; ++it) {
      const Eigen::VectorXd eta = X * beta;
      const Eigen::VectorXd prob = (1.0 + (-eta.array()).exp()).inverse();
      const Eigen::VectorXd grad = X.transpose() * (prob - y) * inv_n + 2.0 * l2 * beta;
      const Eigen::VectorXd weight = prob.array() * (1.0 - prob.array());
      Matrix hess = X.transpose() * weight.asDiagonal() * X * inv_n;
      hess.diagonal().array() += 2.0 * l2;
      const Eigen::VectorXd step = hess.ldlt().solve(grad);
      beta -= step;
      if (step.cwiseAbs().maxCoeff() < 1e-10) break;
    }
    for (Eigen::Index j = 0; j < N; ++j)
      if (j != i) w(j, i) = std::abs(beta(1 + j));
  }
  return {std::move(w), true, true};
}

AdjacencyMatrix normalize_matrix(const AdjacencyMatrix& A) {
  const Eigen::Index N = A.weights.rows();
  if (!A.weights.allFinite()) throw Error("normalize_matrix: non-finite entries");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j)
      if (i != j) {
        lo = std::min(lo, A.weights(i, j));
        hi = std::max(hi, A.weights(i, j));
      }
  AdjacencyMatrix out = A;
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j) {
      if (i == j || !(hi > lo)) {
        out.weights(i, j) = 0.0;
      } else {
        out.weights(i, j) = (A.weights(i, j) - lo) / (hi - lo);
      }
    }
  return out;
}

AdjacencyMatrix fuse_max(std::span<const AdjacencyMatrix> mats, std::span<const std::string> labels) {
  if (mats.empty()) throw ConfigError("fuse_max: no matrices to fuse");
  auto label = [&](std::size_t k) { return k < labels.size() ? labels[k] : "input " + std::to_string(k); };
  AdjacencyMatrix out = mats.front();
  for (std::size_t k = 1; k < mats.size(); ++k) {
    if (mats[k].weights.rows() != out.weights.rows() || mats[k].weights.cols() != out.weights.cols()) {
      throw DimensionError("fuse_max: " + label(k) + " is " + std::to_string(mats[k].weights.rows()) + "x" +
                           std::to_string(mats[k].weights.cols()) + ", expected " +
                           std::to_string(out.weights.rows()) + "x" + std::to_string(out.weights.cols()));
    }
    out.weights = out.weights.cwiseMax(mats[k].weights);
    out.directed = out.directed || mats[k].directed;
    out.converged = out.converged && mats[k].converged;
  }
  return out;
}

AdjacencyMatrix top_s_sparsify(const AdjacencyMatrix& A, std::size_t S) {
  AdjacencyMatrix out = A;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(A.weights.cols()));
  const auto keep = static_cast<std::ptrdiff_t>(std::min(S, order.size()));
  for (Eigen::Index i = 0; i < A.weights.rows(); ++i) {
    std::iota(order.begin(), order.end(), 0);
    // Larger weight first, lower column on ties.
    std::partial_sort(order.begin(), order.begin() + keep, order.end(), [&](Eigen::Index a, Eigen::Index b) {
      const double wa = A.weights(i, a), wb = A.weights(i, b);
      return wa > wb || (wa == wb && a < b);
    });
    for (auto k = static_cast<std::size_t>(keep); k < order.size(); ++k) out.weights(i, order[k]) = 0.0;
  }
  return out;
}

BinaryMask binarize(const AdjacencyMatrix& A) {
  return BinaryMask{(A.weights.array() > 0.0).cast<std::uint8_t>().matrix()};
}

AdjacencyMatrix run_method(Method m, const Matrix& Y, const StructureConfig& cfg) {
  switch (m) {
    case Method::CM: return corr_matrix(Y);
    case Method::GC: return granger_matrix(Y, cfg.granger_lag);
    case Method::CST: return cst_matrix(Y);
    case Method::GL: return glasso_matrix(Y, cfg.glasso_lambda, cfg.glasso_max_sweeps, cfg.glasso_tolerance);
    case Method::MLE: return mle_matrix(Y, cfg.mle_l2);
    case Method::MI: return mi_matrix(Y, cfg.mi_bins);
    case Method::TE: return te_matrix(Y, cfg.te_lag, cfg.mi_bins);
  }
  throw ConfigError("unknown method");
}

StaticGraph static_graph(const data::TimeSeriesDataset& train, const StructureConfig& cfg) {
  cfg.validate(train.series());
  const auto T = train.length();
  const auto rows = static_cast<std::size_t>(std::floor(cfg.subset_fraction * static_cast<double>(T) + 1e-9));
  if (rows < 1) throw ConfigError("static_graph: subset of the training data is empty");
  const Matrix Y = train.values().bottomRows(static_cast<Eigen::Index>(rows));

  StaticGraph out;
  out.report.config = cfg;
  out.report.rows_used = rows;
  std::vector<AdjacencyMatrix> normalized;
  std::vector<std::string> labels;
  for (Method m : cfg.methods) {
    MethodReport rep;
    rep.method = m;
    const auto start = std::chrono::steady_clock::now();
    try {
      auto raw = run_method(m, Y, cfg);
      rep.converged = raw.converged;
      if (!raw.converged) {
        out.report.warnings.push_back(std::string(method_name(m)) + ": did not converge, using best iterate");
      }
      normalized.push_back(normalize_matrix(raw));
      labels.emplace_back(method_name(m));
      rep.ok = true;
    } catch (const Error& e) {
      rep.message = e.what();
      out.report.warnings.push_back(std::string(method_name(m)) + " skipped: " + e.what());
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.report.methods.push_back(rep);
  }
  if (normalized.empty()) throw Error("static_graph: every structure estimator failed");
  out.adjacency = top_s_sparsify(fuse_max(normalized, labels), cfg.S);
  out.mask = binarize(out.adjacency);
  return out;
}

RecoveryScore score_recovery(const BinaryMask& predicted, const BinaryMask& truth) {
  if (predicted.size() != truth.size()) throw DimensionError("score_recovery: size mismatch");
  RecoveryScore s;
  const auto N = static_cast<Eigen::Index>(truth.size());
  for (Eigen::Index i = 0; i < N; ++i) {
    bool row_exact = true;
    for (Eigen::Index j = 0; j < N; ++j) {
      if (i == j) continue;
      const bool p = predicted.support(i, j) != 0;
      const bool t = truth.support(i, j) != 0;
      s.predicted += p;
      s.actual += t;
      s.true_positive += p && t;
      row_exact = row_exact && (p == t);
    }
    s.exact_rows += row_exact;
  }
  s.precision = s.predicted ? static_cast<double>(s.true_positive) / static_cast<double>(s.predicted) : 0.0;
  s.recall = s.actual ? static_cast<double>(s.true_positive) / static_cast<double>(s.actual) : 0.0;
  return s;
}

}  // namespace adlgnn::structure
