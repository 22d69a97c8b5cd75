#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "adlgnn/error.hpp"
#include "adlgnn/graph_io.hpp"
#include "adlgnn/structure.hpp"
#include "helpers.hpp"

using namespace adlgnn;
using structure::AdjacencyMatrix;
using structure::Matrix;
using structure::Method;

namespace {

double pearson_oracle(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (Eigen::Index t = 0; t < a.size(); ++t) {
    ma += a(t);
    mb += b(t);
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (Eigen::Index t = 0; t < a.size(); ++t) {
    sab += (a(t) - ma) * (b(t) - mb);
    saa += (a(t) - ma) * (a(t) - ma);
    sbb += (b(t) - mb) * (b(t) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Residual sum of squares by Householder QR, independent of the normal equations.
double rss_qr(const Matrix& X, const Eigen::VectorXd& y) {
  const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
  return (y - X * beta).squaredNorm();
}

double granger_oracle(const Matrix& Y, Eigen::Index j, Eigen::Index i, Eigen::Index p) {
  const Eigen::Index n = Y.rows() - p;
  Matrix restricted(n, 1 + p), full(n, 1 + 2 * p);
  for (Eigen::Index t = 0; t < n; ++t) {
    restricted(t, 0) = full(t, 0) = 1.0;
    for (Eigen::Index l = 1; l <= p; ++l) {
      restricted(t, l) = full(t, l) = Y(t + p - l, i);
      full(t, p + l) = Y(t + p - l, j);
    }
  }
  const Eigen::VectorXd y = Y.col(i).tail(n);
  return std::max(0.0, std::log(rss_qr(restricted, y) / rss_qr(full, y)));
}

Matrix lagged_pair(std::size_t T, std::uint64_t seed, double coef, double noise) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix Y(T, 2);
  Y(0, 0) = g(rng);
  Y(0, 1) = g(rng);
  for (std::size_t t = 1; t < T; ++t) {
    Y(t, 0) = g(rng);
    Y(t, 1) = coef * Y(t - 1, 0) + noise * g(rng);
  }
  return Y;
}

Matrix simulate_var(const Matrix& B, std::size_t T, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  const Eigen::Index N = B.rows();
  Matrix Y(T, N);
  Eigen::RowVectorXd y = Eigen::RowVectorXd::Zero(N);
  for (std::size_t t = 0; t < T + 200; ++t) {
    Eigen::RowVectorXd e(N);
    for (Eigen::Index k = 0; k < N; ++k) e(k) = g(rng);
    y = y * B + e;
    if (t >= 200) Y.row(static_cast<Eigen::Index>(t - 200)) = y;
  }
  return Y;
}

AdjacencyMatrix adj(const Matrix& w, bool directed = false) { return {w, directed, true}; }

}  // namespace

TEST_SUITE("structure") {
  TEST_CASE("method names round-trip") {
    for (auto m : structure::kAllMethods) CHECK(structure::parse_method(structure::method_name(m)) == m);
    CHECK(structure::parse_method("gc") == Method::GC);
    CHECK_THROWS_AS(structure::parse_method("PCMCI"), ConfigError);
  }

  TEST_CASE("config bounds") {
    structure::StructureConfig cfg;
    cfg.S = 9;
    CHECK_NOTHROW(cfg.validate(10));
    cfg.S = 10;
    CHECK_THROWS_AS(cfg.validate(10), ConfigError);
    cfg.S = 0;
    CHECK_THROWS_AS(cfg.validate(10), ConfigError);
    cfg.S = 3;
    cfg.subset_fraction = 0.0;
    CHECK_THROWS_AS(cfg.validate(10), ConfigError);
    cfg.subset_fraction = 1.0;
    cfg.methods.clear();
    CHECK_THROWS_AS(cfg.validate(10), ConfigError);
  }

  TEST_CASE("CM: perfect linear dependence gives 1") {
    Matrix Y = testing::gaussian_matrix(50, 2, 1);
    Y.col(1) = 2.0 * Y.col(0).array() + 1.0;
    const auto A = structure::corr_matrix(Y);
    CHECK(A.weights(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(A.weights(0, 0) == 0.0);
  }

  TEST_CASE("CM: constant series has an all-zero row") {
    Matrix Y = testing::gaussian_matrix(50, 3, 2);
    Y.col(1).setConstant(4.2);
    const auto A = structure::corr_matrix(Y);
    CHECK(A.weights.row(1).isZero(0.0));
    CHECK(A.weights.col(1).isZero(0.0));
  }

  TEST_CASE("CM matches the covariance formula") {
    const Matrix Y = testing::gaussian_matrix(200, 3, 3) + testing::random_matrix(200, 3, 4) * 2.0;
    const auto A = structure::corr_matrix(Y);
    for (Eigen::Index i = 0; i < 3; ++i)
      for (Eigen::Index j = 0; j < 3; ++j)
        if (i != j) CHECK(std::abs(A.weights(i, j) - std::abs(pearson_oracle(Y.col(i), Y.col(j)))) < 1e-12);
  }

  TEST_CASE("GC matches a QR least-squares oracle") {
    const Matrix Y = simulate_var((Matrix(3, 3) << 0.3, 0.4, 0, 0, 0.2, 0.5, 0, 0, 0.4).finished(), 500, 5);
    const auto A = structure::granger_matrix(Y, 2);
    for (Eigen::Index j = 0; j < 3; ++j)
      for (Eigen::Index i = 0; i < 3; ++i)
        if (i != j) CHECK(std::abs(A.weights(j, i) - granger_oracle(Y, j, i, 2)) < 1e-7);
  }

  TEST_CASE("GC: independent noise scores near zero") {
    const Matrix Y = testing::gaussian_matrix(2000, 2, 6);
    const auto A = structure::granger_matrix(Y, 2);
    CHECK(A.weights(0, 1) < 0.05);
    CHECK(A.weights(1, 0) < 0.05);
  }

  TEST_CASE("GC is directional") {
    const Matrix Y = lagged_pair(2000, 7, 0.9, 0.1);
    const auto A = structure::granger_matrix(Y, 2);
    CHECK(A.weights(0, 1) > A.weights(1, 0));
    CHECK(A.directed);
  }

  TEST_CASE("GC: duplicated series stays finite") {
    Matrix Y = testing::gaussian_matrix(300, 2, 8);
    Y.col(1) = Y.col(0);
    const auto A = structure::granger_matrix(Y, 2);
    CHECK(A.weights.allFinite());
    CHECK(A.weights.minCoeff() >= 0.0);
  }

  TEST_CASE("CST: two nodes share the single edge") {
    const auto A = structure::cst_matrix(testing::gaussian_matrix(40, 2, 9));
    CHECK(A.weights(0, 1) > 0.0);
    CHECK(A.weights(1, 0) == A.weights(0, 1));
  }

  TEST_CASE("CST equals the brute-force minimum spanning tree") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Matrix Y = testing::gaussian_matrix(30, 4, 100 + seed) + testing::gaussian_matrix(30, 1, 200 + seed).replicate(1, 4);
      Matrix r(4, 4);
      for (Eigen::Index i = 0; i < 4; ++i)
        for (Eigen::Index j = 0; j < 4; ++j) r(i, j) = i == j ? 1.0 : pearson_oracle(Y.col(i), Y.col(j));
      const auto A = structure::cst_from_correlation(r);

      std::vector<std::pair<int, int>> edges;
      for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) edges.emplace_back(i, j);
      double best = std::numeric_limits<double>::infinity();
      std::set<std::pair<int, int>> best_tree;
      int trees = 0;
      for (int a = 0; a < 6; ++a)
        for (int b = a + 1; b < 6; ++b)
          for (int c = b + 1; c < 6; ++c) {
            std::vector<int> comp{0, 1, 2, 3};
            std::function<int(int)> find = [&](int x) { return comp[x] == x ? x : comp[x] = find(comp[x]); };
            bool cycle = false;
            double total = 0.0;
            for (int e : {a, b, c}) {
              const auto [u, v] = edges[e];
              const int ru = find(u), rv = find(v);
              if (ru == rv) cycle = true;
              comp[ru] = rv;
              total += std::sqrt(2.0 * (1.0 - r(u, v)));
            }
            if (cycle) continue;
            ++trees;
            if (total < best) {
              best = total;
              best_tree = {edges[a], edges[b], edges[c]};
            }
          }
      REQUIRE(trees == 16);
      std::set<std::pair<int, int>> got;
      for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
          if (A.weights(i, j) > 0.0) got.emplace(i, j);
      CHECK(got == best_tree);
    }
  }

  TEST_CASE("CST: perfectly correlated pair is a weight-1 tree edge") {
    Matrix r(3, 3);
    r << 1, 0.2, 1, 0.2, 1, 0.1, 1, 0.1, 1;
    CHECK(structure::cst_from_correlation(r).weights(0, 2) == 1.0);
    // From data, r is 1 only up to rounding and sqrt(2 (1 - r)) amplifies it.
    Matrix Y = testing::gaussian_matrix(60, 3, 10);
    Y.col(2) = 3.0 * Y.col(0);
    CHECK(std::abs(structure::cst_matrix(Y).weights(0, 2) - 1.0) < 1e-7);
  }

  TEST_CASE("GL: independent series give zero off-diagonal precision") {
    const auto res = structure::graphical_lasso(Matrix::Identity(4, 4), 0.1);
    Matrix off = res.precision;
    off.diagonal().setZero();
    CHECK(off.isZero(0.0));
    CHECK(res.converged);
  }

  TEST_CASE("GL: chain loses the non-adjacent entry") {
    // X -> Y -> Z with Y = a X + e, Z = a Y + e, unit noise variances.
    const double a = 0.5;
    Matrix cov(3, 3);
    const double vy = a * a + 1.0, vz = a * a * vy + 1.0;
    cov << 1.0, a, a * a, a, vy, a * vy, a * a, a * vy, vz;
    const Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
    const Matrix corr = sd.asDiagonal().inverse() * cov * sd.asDiagonal().inverse();
    const Matrix exact = corr.inverse();
    REQUIRE(std::abs(exact(0, 2)) < 1e-12);
    const auto res = structure::graphical_lasso(corr, 0.1);
    CHECK(res.precision(0, 2) == 0.0);
    CHECK(std::abs(res.precision(0, 1)) > 0.1);
    CHECK(std::abs(res.precision(1, 2)) > 0.1);
  }

  TEST_CASE("GL: huge lambda shrinks every off-diagonal entry") {
    const auto A = structure::glasso_matrix(testing::gaussian_matrix(200, 4, 12), 1e3);
    CHECK(A.weights.isZero(0.0));
  }

  TEST_CASE("GL: sweep limit is reported") {
    const Matrix Y = testing::gaussian_matrix(100, 5, 13) + testing::gaussian_matrix(100, 1, 14).replicate(1, 5);
    const auto res = structure::graphical_lasso(structure::pearson(Y), 0.01, 1, 1e-14);
    CHECK_FALSE(res.converged);
    CHECK(res.sweeps == 1);
  }

  TEST_CASE("MLE: independent random walks have small couplings") {
    std::mt19937_64 rng(15);
    std::normal_distribution<double> g;
    Matrix Y(2000, 4);
    Y.row(0).setZero();
    for (Eigen::Index t = 1; t < 2000; ++t)
      for (Eigen::Index i = 0; i < 4; ++i) Y(t, i) = Y(t - 1, i) + g(rng);
    const auto A = structure::mle_matrix(Y);
    CHECK(A.weights.maxCoeff() < 0.1);
  }

  TEST_CASE("MLE: copied increments dominate the incoming couplings") {
    std::mt19937_64 rng(16);
    std::normal_distribution<double> g;
    Matrix Y(2000, 3);
    Y.row(0).setZero();
    for (Eigen::Index t = 1; t < 2000; ++t) {
      Y(t, 0) = Y(t - 1, 0) + g(rng);
      Y(t, 1) = Y(t - 1, 1) + g(rng);
      Y(t, 2) = Y(t - 1, 2) + (t >= 2 ? Y(t - 1, 0) - Y(t - 2, 0) : 0.0);
    }
    const auto A = structure::mle_matrix(Y);
    // s_2(t + 1) = s_0(t): the coupling 0 -> 2 is the largest one into node 2.
    Eigen::Index arg = 0;
    A.weights.col(2).maxCoeff(&arg);
    CHECK(arg == 0);
    CHECK(A.weights(0, 2) > 10.0 * A.weights(1, 2));
  }

  TEST_CASE("MLE: constant increments carry no signal") {
    Matrix Y(100, 2);
    for (Eigen::Index t = 0; t < 100; ++t) {
      Y(t, 0) = 2.0 * static_cast<double>(t);
      Y(t, 1) = -0.5 * static_cast<double>(t);
    }
    CHECK(structure::mle_matrix(Y).weights.isZero(1e-12));
  }

  TEST_CASE("MI: identical series score log(bins)") {
    Matrix Y = testing::gaussian_matrix(10000, 2, 17);
    Y.col(1) = Y.col(0);
    const auto A = structure::mi_matrix(Y, 8);
    CHECK(std::abs(A.weights(0, 1) - std::log(8.0)) < 0.05 * std::log(8.0));
  }

  TEST_CASE("MI: independent series score near zero") {
    const auto A = structure::mi_matrix(testing::random_matrix(10000, 2, 18), 8);
    CHECK(A.weights(0, 1) < 0.05);
  }

  TEST_CASE("MI: bins shrink to the distinct-value count") {
    Matrix Y = testing::gaussian_matrix(400, 2, 19);
    for (Eigen::Index t = 0; t < 400; ++t) Y(t, 1) = static_cast<double>(t % 3);
    const auto A = structure::mi_matrix(Y, 8);
    CHECK(A.weights.allFinite());
    CHECK(A.weights(0, 1) >= 0.0);
  }

  TEST_CASE("TE: lag map is directed") {
    const Matrix Y = lagged_pair(10000, 20, 1.0, 0.0);
    const auto A = structure::te_matrix(Y, 1, 8);
    CHECK(std::abs(A.weights(0, 1) - std::log(8.0)) < 0.05 * std::log(8.0));
    CHECK(A.weights(1, 0) < 0.05);
  }

  TEST_CASE("TE: independent series score near zero") {
    const auto A = structure::te_matrix(testing::gaussian_matrix(10000, 3, 21), 1, 4);
    CHECK(A.weights.maxCoeff() < 0.08);
  }

  TEST_CASE("symmetric estimators are exactly symmetric") {
    const Matrix Y = simulate_var((Matrix(4, 4) << 0.3, 0.4, 0, 0, 0, 0.3, 0.4, 0, 0, 0, 0.3, 0.4, 0.4, 0, 0, 0.3).finished(),
                                  600, 22);
    for (auto m : {Method::CM, Method::CST, Method::GL, Method::MI}) {
      const auto A = structure::run_method(m, Y, structure::StructureConfig{});
      CHECK_MESSAGE(A.weights == A.weights.transpose(), structure::method_name(m));
      CHECK_FALSE(A.directed);
    }
  }

  TEST_CASE("scale invariance of CM, CST, MI and TE") {
    const Matrix Y = simulate_var((Matrix(3, 3) << 0.3, 0.4, 0, 0, 0.3, 0.4, 0.4, 0, 0.3).finished(), 800, 23);
    Matrix Ys = Y;
    Ys.col(0) *= 7.5;
    Ys.col(2) *= 0.01;
    for (auto m : {Method::CM, Method::CST, Method::MI, Method::TE}) {
      const auto a = structure::run_method(m, Y, structure::StructureConfig{});
      const auto b = structure::run_method(m, Ys, structure::StructureConfig{});
      CHECK_MESSAGE((a.weights - b.weights).cwiseAbs().maxCoeff() < 1e-9, structure::method_name(m));
    }
  }

  TEST_CASE("normalize is min-max over the off-diagonal") {
    Matrix w(2, 2);
    w << 7, 0, 2, 7;
    Matrix w3 = Matrix::Zero(3, 3);
    w3(0, 1) = 0;
    w3(0, 2) = 2;
    w3(1, 0) = 4;
    w3(1, 2) = 4;
    w3(2, 0) = 2;
    w3(2, 1) = 0;
    const auto n = structure::normalize_matrix(adj(w3));
    CHECK(n.weights(0, 2) == 0.5);
    CHECK(n.weights(1, 0) == 1.0);
    CHECK(n.weights(0, 1) == 0.0);
    const auto flat = structure::normalize_matrix(adj(Matrix::Constant(3, 3, 0.4)));
    CHECK(flat.weights.isZero(0.0));
    const auto n2 = structure::normalize_matrix(adj(w));
    CHECK(n2.weights(0, 0) == 0.0);
  }

  TEST_CASE("fuse_max examples") {
    Matrix a(2, 2), b(2, 2), want(2, 2);
    a << 0, .3, .8, 0;
    b << 0, .5, .2, 0;
    want << 0, .5, .8, 0;
    const std::vector<AdjacencyMatrix> one{adj(a)};
    CHECK(structure::fuse_max(one).weights == a);
    const std::vector<AdjacencyMatrix> two{adj(a), adj(b)};
    CHECK(structure::fuse_max(two).weights == want);
  }

  TEST_CASE("fuse_max names the mismatched input") {
    const std::vector<AdjacencyMatrix> mats{adj(Matrix::Zero(3, 3)), adj(Matrix::Zero(4, 4))};
    const std::vector<std::string> labels{"CM", "TE"};
    try {
      structure::fuse_max(mats, labels);
      FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("TE") != std::string::npos);
    }
  }

  TEST_CASE("fuse_max set properties on random matrices") {
    for (std::uint64_t s = 0; s < 100; ++s) {
      const auto a = adj(testing::random_matrix(6, 6, 3 * s, 0, 1));
      const auto b = adj(testing::random_matrix(6, 6, 3 * s + 1, 0, 1));
      const auto c = adj(testing::random_matrix(6, 6, 3 * s + 2, 0, 1));
      const auto ab = structure::fuse_max(std::vector{a, b}).weights;
      CHECK(ab == structure::fuse_max(std::vector{b, a}).weights);
      CHECK(structure::fuse_max(std::vector{a, a}).weights == a.weights);
      const auto left = structure::fuse_max(std::vector{adj(ab), c}).weights;
      const auto right = structure::fuse_max(std::vector{a, adj(structure::fuse_max(std::vector{b, c}).weights)}).weights;
      CHECK(left == right);
      CHECK((ab.array() >= a.weights.array()).all());
      CHECK((ab.array() >= b.weights.array()).all());
    }
  }

  TEST_CASE("top-S examples") {
    Matrix row = Matrix::Zero(4, 4);
    row.row(0) << .9, .1, .5, .4;
    const auto kept = structure::top_s_sparsify(adj(row), 2);
    CHECK(kept.weights(0, 0) == .9);
    CHECK(kept.weights(0, 1) == 0.0);
    CHECK(kept.weights(0, 2) == .5);
    CHECK(kept.weights(0, 3) == 0.0);

    Matrix sparse = Matrix::Zero(3, 3);
    sparse(0, 1) = 0.3;
    sparse(2, 0) = 0.7;
    CHECK(structure::top_s_sparsify(adj(sparse), 2).weights == sparse);
  }

  TEST_CASE("top-S ties go to the lower column") {
    Matrix w = Matrix::Zero(1, 5);
    w << 0.5, 0.5, 0.5, 0.2, 0.5;
    const auto k = structure::top_s_sparsify(adj(w), 2);
    CHECK(k.weights(0, 0) == 0.5);
    CHECK(k.weights(0, 1) == 0.5);
    CHECK(k.weights(0, 2) == 0.0);
    CHECK(k.weights(0, 4) == 0.0);
  }

  TEST_CASE("top-S agrees with a full sort") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Matrix w = testing::random_matrix(20, 20, 500 + s, 0, 1);
      const auto k = structure::top_s_sparsify(adj(w), 5);
      for (Eigen::Index r = 0; r < 20; ++r) {
        std::vector<Eigen::Index> idx(20);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return w(r, a) > w(r, b); });
        std::set<Eigen::Index> want(idx.begin(), idx.begin() + 5), got;
        for (Eigen::Index c = 0; c < 20; ++c)
          if (k.weights(r, c) != 0.0) got.insert(c);
        CHECK(got == want);
      }
    }
  }

  TEST_CASE("binarize") {
    CHECK(structure::binarize(adj(Matrix::Zero(3, 3))).support.isZero());
    Matrix w(2, 2);
    w << 0, .5, .8, 0;
    const auto m = structure::binarize(adj(w));
    CHECK(m(0, 1));
    CHECK(m(1, 0));
    CHECK_FALSE(m(0, 0));
    CHECK(m.row_count(0) == 1);
  }

  TEST_CASE("sparsified support matches the binary mask") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      Matrix w = testing::random_matrix(8, 8, 900 + s, 0, 1);
      w.diagonal().setZero();
      const auto k = structure::top_s_sparsify(adj(w), 3);
      const auto m = structure::binarize(k);
      for (Eigen::Index r = 0; r < 8; ++r) {
        CHECK(m.row_count(static_cast<std::size_t>(r)) <= 3);
        for (Eigen::Index c = 0; c < 8; ++c) CHECK((m.support(r, c) != 0) == (k.weights(r, c) > 0.0));
      }
    }
  }

  TEST_CASE("CM-only pipeline is normalised |correlation| top-S") {
    const Matrix Y = testing::gaussian_matrix(300, 6, 30) + testing::gaussian_matrix(300, 1, 31).replicate(1, 6) * 0.5;
    structure::StructureConfig cfg;
    cfg.methods = {Method::CM};
    cfg.S = 2;
    cfg.subset_fraction = 1.0;
    const auto g = structure::static_graph(data::TimeSeriesDataset(Y), cfg);
    const auto want = structure::top_s_sparsify(structure::normalize_matrix(structure::corr_matrix(Y)), 2);
    CHECK(g.adjacency.weights == want.weights);
    CHECK(g.report.rows_used == 300);
  }

  TEST_CASE("pipeline on a ring recovers neighbour sets") {
    // Each node drives both ring neighbours and itself.
    Matrix B = Matrix::Zero(5, 5);
    for (Eigen::Index j = 0; j < 5; ++j) {
      B(j, (j + 1) % 5) = 0.35;
      B(j, (j + 4) % 5) = 0.35;
      B(j, j) = 0.3;
    }
    const Matrix Y = simulate_var(B, 5000, 32);
    structure::StructureConfig cfg;
    cfg.S = 2;
    const auto g = structure::static_graph(data::TimeSeriesDataset(Y), cfg);
    int exact = 0;
    for (Eigen::Index j = 0; j < 5; ++j) {
      bool same = true;
      for (Eigen::Index i = 0; i < 5; ++i) same = same && ((g.mask.support(j, i) != 0) == (i != j && B(j, i) != 0.0));
      exact += same;
    }
    CHECK(exact >= 3);
    CHECK(g.report.rows_used == 500);
    CHECK(g.report.methods.size() == 7);
  }

  TEST_CASE("pipeline skips failing estimators") {
    // 40 rows: GC/MI/TE/MLE need more data than that and fail; CM survives.
    structure::StructureConfig cfg;
    cfg.S = 1;
    cfg.subset_fraction = 1.0;
    cfg.mi_bins = 8;
    const auto g = structure::static_graph(data::TimeSeriesDataset(testing::gaussian_matrix(40, 3, 33)), cfg);
    CHECK_FALSE(g.report.warnings.empty());
    bool any_failed = false, cm_ok = false;
    for (const auto& m : g.report.methods) {
      any_failed = any_failed || !m.ok;
      if (m.method == Method::CM) cm_ok = m.ok;
    }
    CHECK(any_failed);
    CHECK(cm_ok);

    cfg.methods = {Method::MLE};
    CHECK_THROWS_AS(structure::static_graph(data::TimeSeriesDataset(testing::gaussian_matrix(40, 3, 33)), cfg), Error);
  }

  TEST_CASE("pipeline output is deterministic and bounded") {
    const Matrix Y = simulate_var((Matrix(4, 4) << 0.3, 0.4, 0, 0, 0, 0.3, 0.4, 0, 0, 0, 0.3, 0.4, 0.4, 0, 0, 0.3).finished(),
                                  1000, 34);
    structure::StructureConfig cfg;
    cfg.S = 2;
    cfg.subset_fraction = 1.0;
    const auto a = structure::static_graph(data::TimeSeriesDataset(Y), cfg);
    const auto b = structure::static_graph(data::TimeSeriesDataset(Y), cfg);
    CHECK(a.adjacency.weights == b.adjacency.weights);
    CHECK(a.adjacency.weights.minCoeff() >= 0.0);
    CHECK(a.adjacency.weights.maxCoeff() <= 1.0);
    CHECK(a.adjacency.weights.diagonal().isZero(0.0));
  }

  TEST_CASE("recovery scoring") {
    structure::BinaryMask truth{structure::MaskMatrix::Zero(3, 3)}, pred{structure::MaskMatrix::Zero(3, 3)};
    truth.support(0, 1) = truth.support(1, 2) = 1;
    pred.support(0, 1) = pred.support(2, 1) = pred.support(1, 1) = 1;
    const auto s = structure::score_recovery(pred, truth);
    CHECK(s.true_positive == 1);
    CHECK(s.predicted == 2);
    CHECK(s.actual == 2);
    CHECK(s.precision == 0.5);
    CHECK(s.recall == 0.5);
  }

  TEST_CASE("adjacency files round-trip") {
    testing::TempDir dir("graphio");
    Matrix w = testing::random_matrix(5, 5, 35, 0, 1);
    w.diagonal().setZero();
    w(1, 3) = 0.0;
    structure::write_adjacency_csv(dir / "a.csv", w);
    CHECK((structure::read_adjacency_csv(dir / "a.csv") - w).cwiseAbs().maxCoeff() < 1e-8);
    structure::write_edge_list(dir / "e.tsv", w);
    const Matrix back = structure::read_edge_list(dir / "e.tsv", 5);
    CHECK((back - w).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(back(1, 3) == 0.0);
  }
}
