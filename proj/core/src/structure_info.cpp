// Information-theoretic estimators on equal-frequency (quantile) bins.

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adlgnn/error.hpp"
#include "adlgnn/structure.hpp"

namespace adlgnn::structure {

namespace {

struct RankedSeries {
  std::vector<std::size_t> rank;  // tied values share the lowest rank
  std::size_t distinct = 0;
};

RankedSeries rank_series(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const auto T = static_cast<std::size_t>(x.size());
  std::vector<std::size_t> order(T);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x(a) < x(b); });
  RankedSeries out;
  out.rank.resize(T);
  for (std::size_t k = 0; k < T; ++k) {
    if (k > 0 && x(order[k]) == x(order[k - 1])) {
      out.rank[order[k]] = out.rank[order[k - 1]];
    } else {
      out.rank[order[k]] = k;
      ++out.distinct;
    }
  }
  return out;
}

std::vector<std::size_t> to_bins(const RankedSeries& s, std::size_t bins) {
  const std::size_t T = s.rank.size();
  std::vector<std::size_t> out(T);
  for (std::size_t t = 0; t < T; ++t) out[t] = s.rank[t] * bins / T;
  return out;
}

std::vector<RankedSeries> rank_all(const Matrix& Y) {
  std::vector<RankedSeries> out;
  for (Eigen::Index c = 0; c < Y.cols(); ++c) out.push_back(rank_series(Y.col(c)));
  return out;
}

void check_info_preconditions(const Matrix& Y, std::size_t bins, const char* op) {
  if (bins < 2) throw ConfigError(std::string(op) + ": bins must be >= 2");
  if (static_cast<std::size_t>(Y.rows()) < 10 * bins) throw ConfigError(std::string(op) + ": need T >= 10 * bins");
}

// Plug-in entropy (nats) of a count table with total n.
double entropy(const std::vector<std::size_t>& counts, double n) {
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  while (exp--) r *= base;
  return r;
}

}  // namespace

AdjacencyMatrix mi_matrix(const Matrix& Y, std::size_t bins) {
  check_info_preconditions(Y, bins, "mi_matrix");
  const Eigen::Index N = Y.cols();
  const auto T = static_cast<std::size_t>(Y.rows());
  const auto ranked = rank_all(Y);
  Matrix w = Matrix::Zero(N, N);
  std::vector<std::size_t> joint, cx, cy;
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = i + 1; j < N; ++j) {
      const std::size_t b = std::min({bins, ranked[i].distinct, ranked[j].distinct});
      if (b < 2) continue;  // a constant series carries no information
      const auto xi = to_bins(ranked[i], b);
      const auto xj = to_bins(ranked[j], b);
      joint.assign(b * b, 0);
      cx.assign(b, 0);
      cy.assign(b, 0);
      for (std::size_t t = 0; t < T; ++t) {
        ++joint[xi[t] * b + xj[t]];
        ++cx[xi[t]];
        ++cy[xj[t]];
      }
      const double n = static_cast<double>(T);
      double mi = 0.0;
      for (std::size_t a = 0; a < b; ++a)
        for (std::size_t c = 0; c < b; ++c) {
          const auto k = joint[a * b + c];
          if (k == 0) continue;
          mi += static_cast<double>(k) / n *
                std::log(static_cast<double>(k) * n / (static_cast<double>(cx[a]) * static_cast<double>(cy[c])));
        }
      w(i, j) = w(j, i) = std::max(0.0, mi);
    }
  }
  return {std::move(w), false, true};
}

AdjacencyMatrix te_matrix(const Matrix& Y, std::size_t lag, std::size_t bins) {
  check_info_preconditions(Y, bins, "te_matrix");
  if (lag < 1) throw ConfigError("te_matrix: lag must be >= 1");
  const std::size_t past_states = ipow(bins, lag);
  if (past_states * past_states * bins > (std::size_t{1} << 26)) {
    throw ConfigError("te_matrix: bins^(2*lag+1) state space too large");
  }
  const Eigen::Index N = Y.cols();
  const auto T = static_cast<std::size_t>(Y.rows());
  if (T <= lag) throw ConfigError("te_matrix: series shorter than lag");
  const auto ranked = rank_all(Y);
  Matrix w = Matrix::Zero(N, N);

  std::vector<std::size_t> c_fxy, c_fx, c_xy, c_x;
  for (Eigen::Index i = 0; i < N; ++i) {      // target
    for (Eigen::Index j = 0; j < N; ++j) {    // source
      if (i == j) continue;
      const std::size_t b = std::min({bins, ranked[i].distinct, ranked[j].distinct});
      if (b < 2) continue;
      const auto x = to_bins(ranked[i], b);
      const auto y = to_bins(ranked[j], b);
      const std::size_t P = ipow(b, lag);
      c_fxy.assign(b * P * P, 0);
      c_fx.assign(b * P, 0);
      c_xy.assign(P * P, 0);
      c_x.assign(P, 0);
      // Samples t = lag-1 .. T-2 with future x(t+1) and pasts x(t..t-lag+1), y(t..t-lag+1).
      std::size_t n = 0;
      for (std::size_t t = lag - 1; t + 1 < T; ++t) {
        std::size_t px = 0, py = 0;
        for (std::size_t l = 0; l < lag; ++l) {
          px = px * b + x[t - l];
          py = py * b + y[t - l];
        }
        const std::size_t f = x[t + 1];
        ++c_fxy[(f * P + px) * P + py];
        ++c_fx[f * P + px];
        ++c_xy[px * P + py];
        ++c_x[px];
        ++n;
      }
      const double nn = static_cast<double>(n);
      // TE = H(F,X) - H(X) - H(F,X,Y) + H(X,Y)
      const double te = entropy(c_fx, nn) - entropy(c_x, nn) - entropy(c_fxy, nn) + entropy(c_xy, nn);
      w(j, i) = std::max(0.0, te);
    }
  }
  return {std::move(w), true, true};
}

}  // namespace adlgnn::structure
