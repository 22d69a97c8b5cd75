#include "adlgnn/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>

#include "adlgnn/data.hpp"
#include "adlgnn/error.hpp"
#include "adlgnn/eval.hpp"
#include "adlgnn/model.hpp"
#include "adlgnn/nn.hpp"
#include "adlgnn/structure.hpp"
#include "adlgnn/train.hpp"

namespace adlgnn::verify {

namespace {

using nn::Tensor;

struct Runner {
  std::vector<CheckResult> results;

  // `body` returns the measured value; the check passes when value <= tolerance.
  void run(std::string group, std::string name, double tolerance, const std::function<double()>& body) {
    CheckResult r;
    r.group = std::move(group);
    r.name = std::move(name);
    r.tolerance = tolerance;
    const auto start = std::chrono::steady_clock::now();
    try {
      r.value = body();
      r.passed = r.value <= tolerance;
    } catch (const std::exception& e) {
      r.passed = false;
      r.value = std::numeric_limits<double>::infinity();
      r.detail = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results.push_back(std::move(r));
  }
};

Tensor random_tensor(nn::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(nn::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double lo = -1.0,
                              double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
  return m;
}

// Reduces an op output to a scalar with fixed random weights so that every
// output coordinate contributes a distinct gradient.
std::function<Tensor(const Tensor&)> weighted(std::function<Tensor(const Tensor&)> op, const Tensor& sample,
                                              std::mt19937_64& rng) {
  Tensor out;
  {
    nn::NoGradGuard g;
    out = op(sample);
  }
  const Tensor w = random_tensor(out.shape(), rng);
  return [op = std::move(op), w](const Tensor& x) { return nn::sum(nn::mul(op(x), w)); };
}

model::ModelConfig tiny_config(model::GraphMode mode) {
  model::ModelConfig c;
  c.window = 16;
  c.st_blocks = 1;
  c.mixhop_depth = 2;
  c.attention_kernel = 3;
  c.temporal_kernels = {2, 3};
  c.channels = 4;
  c.skip_channels = 4;
  c.end_channels = 4;
  c.dropout = 0.0;
  c.graph_mode = mode;
  return c;
}

structure::Matrix ring_graph(std::size_t n) {
  structure::Matrix a = structure::Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>((i + 1) % n)) = 0.8;
    a(static_cast<Eigen::Index>((i + 1) % n), static_cast<Eigen::Index>(i)) = 0.3;
  }
  return a;
}

// Central differences on every parameter entry of the model.
double parameter_grad_error(model::ForecastModel& m, const Tensor& x, const Tensor& y, double eps) {
  auto objective = [&] { return train::loss(m.forward(x), y, m.parameters(), 1e-3, train::LossKind::Squared); };
  for (auto& p : m.parameters()) p.tensor.zero_grad();
  nn::backward(objective());
  double worst = 0.0;
  nn::NoGradGuard g;
  for (auto& p : m.parameters()) {
    const std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    auto values = p.tensor.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = objective().item();
      values[i] = saved - eps;
      const double down = objective().item();
      values[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

double brute_rse(const eval::Matrix& Y, const eval::Matrix& P) {
  double mean = 0.0;
  for (Eigen::Index i = 0; i < Y.rows(); ++i)
    for (Eigen::Index j = 0; j < Y.cols(); ++j) mean += Y(i, j);
  mean /= static_cast<double>(Y.size());
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < Y.rows(); ++i)
    for (Eigen::Index j = 0; j < Y.cols(); ++j) {
      num += (Y(i, j) - P(i, j)) * (Y(i, j) - P(i, j));
      den += (Y(i, j) - mean) * (Y(i, j) - mean);
    }
  return std::sqrt(num) / std::sqrt(den);
}

double brute_corr(const eval::Matrix& Y, const eval::Matrix& P) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < Y.cols(); ++j) {
    double my = 0.0, mp = 0.0;
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      my += Y(i, j);
      mp += P(i, j);
    }
    my /= static_cast<double>(Y.rows());
    mp /= static_cast<double>(Y.rows());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      sxy += (Y(i, j) - my) * (P(i, j) - mp);
      sxx += (Y(i, j) - my) * (Y(i, j) - my);
      syy += (P(i, j) - mp) * (P(i, j) - mp);
    }
    if (sxx > 0 && syy > 0) total += sxy / std::sqrt(sxx * syy);
  }
  return total / static_cast<double>(Y.cols());
}

nn::Mask random_mask(std::size_t n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(p);
  nn::Mask m{n, n, std::vector<std::uint8_t>(n * n)};
  for (auto& a : m.allowed) a = keep(rng);
  return m;
}

void groups_metrics(Runner& r, std::mt19937_64& rng) {
  r.run("metrics", "rse/corr vs brute force (20 fixtures)", 1e-9, [&] {
    double worst = 0.0;
    std::normal_distribution<double> g;
    for (int k = 0; k < 20; ++k) {
      eval::Matrix Y(50, 5), P(50, 5);
      for (Eigen::Index i = 0; i < Y.size(); ++i) {
        Y(i) = g(rng);
        P(i) = Y(i) + 0.5 * g(rng);
      }
      worst = std::max({worst, std::abs(eval::rse(Y, P) - brute_rse(Y, P)),
                        std::abs(eval::corr(Y, P) - brute_corr(Y, P))});
    }
    return worst;
  });
  r.run("metrics", "rse worked example", 1e-12, [] {
    eval::Matrix Y(2, 2), P(2, 2);
    Y << 1, 2, 3, 4;
    P << 1, 1, 4, 4;
    return std::abs(eval::rse(Y, P) - std::sqrt(2.0) / std::sqrt(5.0));
  });
  r.run("metrics", "corr constant-series convention", 1e-12, [] {
    eval::Matrix Y(4, 2), P(4, 2);
    Y << 1, 1, 2, 3, 3, 2, 4, 5;
    P << 1, 7, 2, 7, 3, 7, 4, 7;
    return std::abs(eval::corr(Y, P) - 0.5);
  });
}

void groups_gradients(Runner& r, std::mt19937_64& rng) {
  const double tol = 1e-4;
  auto check = [&](const std::string& name, nn::Shape shape, std::function<Tensor(const Tensor&)> op,
                   double lo = -1.0, double hi = 1.0) {
    r.run("gradients", name, tol, [&, shape, op, lo, hi] {
      const Tensor x = random_tensor(shape, rng, lo, hi);
      return nn::grad_check(weighted(op, x, rng), x);
    });
  };
  const Tensor other = random_tensor({3, 4}, rng);
  const Tensor rhs = random_tensor({4, 5}, rng);
  check("add/sub/mul", {3, 4}, [other](const Tensor& x) { return nn::mul(nn::sub(nn::add(x, other), other), x); });
  check("tanh/sigmoid/relu", {3, 4}, [](const Tensor& x) { return nn::relu(nn::add(nn::tanh(x), nn::sigmoid(x))); });
  check("matmul", {2, 3, 4}, [rhs](const Tensor& x) { return nn::matmul(x, rhs); });
  check("permute/reshape/slice", {2, 3, 4}, [](const Tensor& x) {
    return nn::slice(nn::reshape(nn::permute(x, {2, 0, 1}), {4, 6}), 1, 1, 5);
  });
  check("concat", {2, 3}, [](const Tensor& x) { return nn::concat({x, nn::square(x)}, 1); });
  check("softmax", {3, 5}, [](const Tensor& x) { return nn::softmax(x, 1); });
  const auto mask = random_mask(5, 0.5, rng);
  check("masked softmax", {2, 5, 5}, [mask](const Tensor& x) { return nn::masked_softmax(x, mask); });
  const Tensor filter = random_tensor({3}, rng);
  check("causal dilated conv1d", {2, 12}, [filter](const Tensor& x) { return nn::causal_dilated_conv1d(x, filter, 2); });
  const Tensor w = random_tensor({3, 2, 3}, rng), b = random_tensor({3}, rng);
  check("conv_time", {2, 2, 3, 8}, [w, b](const Tensor& x) { return nn::conv_time(x, w, b, 2); });
  const Tensor h = random_tensor({2, 2, 4, 3}, rng);
  check("graph propagate (per step)", {2, 3, 4, 4}, [h](const Tensor& a) {
    return nn::graph_propagate(nn::normalize_adjacency(a, true), h);
  }, 0.1, 1.0);
  check("row max rescale", {3, 4}, [](const Tensor& a) { return nn::row_max_rescale(nn::add_scalar(a, 1.0)); }, 0.0,
        1.0);

  r.run("gradients", "end-to-end model, 4 nodes, L=16, 1 block", tol, [&] {
    double worst = 0.0;
    for (auto mode : {model::GraphMode::Dynamic, model::GraphMode::Static}) {
      model::ForecastModel m(tiny_config(mode), 4, ring_graph(4), 11);
      const Tensor x = random_tensor({2, 1, 4, 16}, rng);
      const Tensor y = random_tensor({2, 4}, rng);
      worst = std::max(worst, parameter_grad_error(m, x, y, 1e-5));
      worst = std::max(worst, nn::grad_check([&](const Tensor& in) { return nn::sum(m.forward(in)); }, x));
    }
    return worst;
  });
}

void groups_causality(Runner& r, std::mt19937_64& rng) {
  for (auto mode : {model::GraphMode::Dynamic, model::GraphMode::Static, model::GraphMode::StaticCorr}) {
    r.run("causality", "future perturbation, " + std::string(model::graph_mode_name(mode)), 0.0, [&, mode] {
      model::ModelConfig cfg = tiny_config(mode);
      model::ForecastModel m(cfg, 4, ring_graph(4), 5);
      const data::Matrix values = random_matrix(40, 4, rng);
      const std::size_t h = 3;
      double changed = 0.0;
      for (std::size_t j : {0, 7, 20}) {
        const data::WindowSet before(data::TimeSeriesDataset(values), cfg.window, h);
        data::Matrix perturbed = values;
        const auto t = static_cast<Eigen::Index>(j + cfg.window - 1);
        perturbed.bottomRows(perturbed.rows() - t - 1).array() += 10.0;
        const data::WindowSet after(data::TimeSeriesDataset(perturbed), cfg.window, h);
        std::vector<double> xa, xb, ya, yb;
        before.gather({j}, xa, ya);
        after.gather({j}, xb, yb);
        const auto pa = m.predict(xa, 1), pb = m.predict(xb, 1);
        changed += static_cast<double>((pa.array() != pb.array()).count());
      }
      return changed;
    });
  }
}

void groups_attention(Runner& r, std::mt19937_64& rng) {
  const std::size_t N = 6, L = 8;
  model::AttentionParams p;
  auto conv = [&](std::size_t cin) {
    return model::ConvParams{random_tensor({4, cin, 3}, rng), random_tensor({4}, rng)};
  };
  p.query = conv(1);
  p.key = conv(1);
  const Tensor x = random_tensor({2, 1, N, L}, rng);
  structure::BinaryMask mask{structure::MaskMatrix::Zero(N, N)};
  std::bernoulli_distribution coin(0.4);
  for (std::size_t i = 0; i + 1 < N; ++i)  // last row stays empty: an isolated node
    for (std::size_t j = 0; j < N; ++j) mask.support(i, j) = coin(rng);
  mask.support(0, 1) = 1;

  r.run("attention", "masked rows sum to 1 on support", 1e-9, [&] {
    const Tensor w = model::masked_conv_attention(x, mask, p);
    double worst = 0.0;
    const auto v = w.values();
    for (std::size_t row = 0; row < v.size() / N; ++row) {
      const std::size_t i = row % N;
      if (mask.row_count(i) == 0) continue;
      double s = 0.0;
      for (std::size_t j = 0; j < N; ++j) s += v[row * N + j];
      worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
  });
  r.run("attention", "off-mask entries are exactly 0", 0.0, [&] {
    const Tensor w = model::masked_conv_attention(x, mask, p);
    double count = 0.0;
    const auto v = w.values();
    for (std::size_t k = 0; k < v.size(); ++k) {
      const std::size_t i = (k / N) % N, j = k % N;
      if (!mask(i, j) && v[k] != 0.0) count += 1.0;
    }
    return count;
  });
  r.run("attention", "all-ones mask equals unmasked", 1e-12, [&] {
    structure::BinaryMask ones{structure::MaskMatrix::Ones(N, N)};
    const Tensor a = model::masked_conv_attention(x, ones, p);
    const Tensor b = model::conv_attention_weights(x, p, nullptr);
    double worst = 0.0;
    for (std::size_t k = 0; k < a.numel(); ++k) worst = std::max(worst, std::abs(a.values()[k] - b.values()[k]));
    return worst;
  });
  r.run("attention", "dynamic adjacency row support <= S", 0.0, [&] {
    const std::size_t S = 2;
    structure::Matrix dense = random_matrix(N, N, rng, 0.0, 1.0);
    dense.diagonal().setZero();
    const auto sparse = structure::top_s_sparsify(structure::AdjacencyMatrix{dense}, S);
    model::ForecastModel m(tiny_config(model::GraphMode::Dynamic), N, sparse.weights, 3);
    const Tensor in = random_tensor({2, 1, N, 16}, rng);
    const Tensor adj = m.adjacency(in);
    double excess = 0.0;
    const auto v = adj.values();
    for (std::size_t row = 0; row < v.size() / N; ++row) {
      std::size_t nz = 0;
      for (std::size_t j = 0; j < N; ++j) {
        nz += v[row * N + j] != 0.0;
        if (v[row * N + j] != 0.0 && !m.mask()(row % N, j)) excess += 1.0;
      }
      if (nz > S) excess += static_cast<double>(nz - S);
    }
    return excess;
  });
}

void groups_mixhop(Runner& r, std::mt19937_64& rng) {
  const Tensor h = random_tensor({2, 3, 5, 4}, rng);
  auto max_diff_to_input = [&](const std::vector<Tensor>& hs) {
    double worst = 0.0;
    for (const auto& t : hs)
      for (std::size_t k = 0; k < t.numel(); ++k) worst = std::max(worst, std::abs(t.values()[k] - h.values()[k]));
    return worst;
  };
  r.run("mix-hop", "beta = 1 keeps the input", 0.0, [&] {
    const Tensor a = nn::normalize_adjacency(random_tensor({5, 5}, rng, 0.0, 1.0), false);
    return max_diff_to_input(model::mix_hop_propagate(h, a, 1.0, 3));
  });
  r.run("mix-hop", "A = 0 keeps the input", 0.0, [&] {
    const Tensor a = nn::normalize_adjacency(Tensor({5, 5}), false);
    return max_diff_to_input(model::mix_hop_propagate(h, a, 0.05, 3));
  });
  r.run("structure", "fuse_max idempotent and commutative (100 draws)", 0.0, [&] {
    double bad = 0.0;
    for (int k = 0; k < 100; ++k) {
      const structure::AdjacencyMatrix a{random_matrix(6, 6, rng, 0.0, 1.0)};
      const structure::AdjacencyMatrix b{random_matrix(6, 6, rng, 0.0, 1.0)};
      const structure::AdjacencyMatrix aa[] = {a, a}, ab[] = {a, b}, ba[] = {b, a};
      bad += (structure::fuse_max(aa).weights != a.weights);
      bad += (structure::fuse_max(ab).weights != structure::fuse_max(ba).weights);
    }
    return bad;
  });
  r.run("structure", "top-S equals full-sort selection (100 draws)", 0.0, [&] {
    double bad = 0.0;
    std::uniform_int_distribution<int> level(0, 4);
    for (int k = 0; k < 100; ++k) {
      const Eigen::Index N = 7;
      structure::Matrix w(N, N);
      for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = level(rng) / 4.0;  // plenty of ties
      const std::size_t S = 1 + static_cast<std::size_t>(k % 5);
      const auto got = structure::top_s_sparsify(structure::AdjacencyMatrix{w}, S).weights;
      for (Eigen::Index i = 0; i < N; ++i) {
        std::vector<Eigen::Index> cols(static_cast<std::size_t>(N));
        std::iota(cols.begin(), cols.end(), 0);
        std::stable_sort(cols.begin(), cols.end(), [&](auto a, auto b) { return w(i, a) > w(i, b); });
        for (std::size_t c = 0; c < cols.size(); ++c) {
          const double expect = c < S ? w(i, cols[c]) : 0.0;
          bad += got(i, cols[c]) != expect;
        }
      }
    }
    return bad;
  });
}

void groups_data_and_schedules(Runner& r, std::mt19937_64& rng) {
  r.run("data", "window count and no leakage", 0.0, [&] {
    double bad = 0.0;
    for (std::size_t T : {10, 25, 40})
      for (std::size_t L : {1, 3, 7})
        for (std::size_t hz : {1, 3}) {
          data::Matrix v(static_cast<Eigen::Index>(T), 2);
          for (Eigen::Index t = 0; t < v.rows(); ++t) v.row(t).setConstant(static_cast<double>(t));
          const data::WindowSet w(data::TimeSeriesDataset(v), L, hz);
          std::size_t brute = 0;
          for (std::size_t j = 0; j + L - 1 + hz < T; ++j) ++brute;
          bad += w.size() != brute;
          for (std::size_t j = 0; j < w.size(); ++j) {
            const auto s = w[j];
            bad += !(s.input.maxCoeff() < s.target(0));
          }
        }
    return bad;
  });
  r.run("data", "scaler round trip", 1e-9, [&] {
    const data::Matrix v = random_matrix(5, 3, rng, -7.0, 7.0);
    const auto sc = data::Scaler::fit(data::TimeSeriesDataset(v));
    return ((sc.invert(sc.apply(v)) - v).cwiseAbs().array() / v.cwiseAbs().array().max(1e-300)).maxCoeff();
  });
  r.run("train", "schedule trace 4 -> 32, then lr x 0.75", 0.0, [] {
    train::TrainConfig cfg;
    cfg.improvement_threshold = 1e-4;
    train::ScheduleState s(cfg);
    const std::vector<double> losses = {1.0, 0.99, 0.99, 0.99, 0.98, 0.98, 0.98, 0.97, 0.97, 0.97, 0.96, 0.96, 0.96};
    std::vector<std::size_t> batches;
    for (double l : losses) {
      s.step(l);
      batches.push_back(s.batch);
    }
    const std::vector<std::size_t> want = {4, 4, 4, 8, 8, 8, 16, 16, 16, 32, 32, 32, 32};
    double bad = batches != want;
    bad += std::abs(s.lr - 0.00225) > 1e-15;
    return bad;
  });
}

}  // namespace

std::vector<CheckResult> run_all(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Runner r;
  groups_metrics(r, rng);
  groups_gradients(r, rng);
  groups_causality(r, rng);
  groups_attention(r, rng);
  groups_mixhop(r, rng);
  groups_data_and_schedules(r, rng);
  return r.results;
}

std::string format_table(const std::vector<CheckResult>& results) {
  std::string out;
  char line[512];
  std::snprintf(line, sizeof line, "%-12s %-48s %-6s %12s %12s %9s\n", "group", "check", "status", "value",
                "tolerance", "seconds");
  out += line;
  std::size_t failed = 0;
  for (const auto& r : results) {
    failed += !r.passed;
    std::snprintf(line, sizeof line, "%-12s %-48s %-6s %12.3g %12.3g %9.3f\n", r.group.c_str(), r.name.c_str(),
                  r.passed ? "PASS" : "FAIL", r.value, r.tolerance, r.seconds);
    out += line;
    if (!r.detail.empty()) out += "    " + r.detail + "\n";
  }
  std::snprintf(line, sizeof line, "%zu checks, %zu failed\n", results.size(), failed);
  out += line;
  return out;
}

}  // namespace adlgnn::verify
