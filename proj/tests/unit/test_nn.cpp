#include <doctest.h>

#include <cmath>
#include <functional>

#include "adlgnn/error.hpp"
#include "adlgnn/nn.hpp"
#include "helpers.hpp"

using namespace adlgnn;
using nn::Shape;
using nn::Tensor;

namespace {

constexpr double kGradTol = 1e-4;

// Contracts an op's output against fixed random weights so every output
// element reaches the scalar with a different coefficient.
std::function<Tensor(const Tensor&)> contracted(std::function<Tensor(const Tensor&)> op, std::uint64_t seed) {
  return [op = std::move(op), seed](const Tensor& x) {
    Tensor y = op(x);
    Tensor w = testing::random_tensor(y.shape(), seed);
    return nn::sum(nn::mul(y, w));
  };
}

double check_grad(std::function<Tensor(const Tensor&)> op, Shape in_shape, std::uint64_t seed, double lo = -1.0,
                  double hi = 1.0) {
  const Tensor x = testing::random_tensor(std::move(in_shape), seed, false, lo, hi);
  return nn::grad_check(contracted(std::move(op), seed + 1000), x);
}

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("tensor basics") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    CHECK(t.at({1, 2}) == 6.0);
    CHECK(nn::shape_string(t.shape()) == "[2,3]");
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
    CHECK(Tensor::scalar(2.5).item() == 2.5);
    CHECK(vals(Tensor::full({2}, 7.0)) == std::vector<double>{7, 7});
  }

  TEST_CASE("causal conv: running pair sum") {
    const Tensor x({4}, {1, 2, 3, 4});
    const Tensor f({2}, {1, 1});
    CHECK(vals(nn::causal_dilated_conv1d(x, f, 1)) == std::vector<double>{1, 3, 5, 7});
  }

  TEST_CASE("causal conv: dilation 2") {
    const Tensor x({4}, {1, 2, 3, 4});
    const Tensor f({2}, {1, 1});
    CHECK(vals(nn::causal_dilated_conv1d(x, f, 2)) == std::vector<double>{1, 2, 4, 6});
  }

  TEST_CASE("causal conv never reads the future") {
    const Tensor f = testing::random_tensor({3}, 1);
    const Tensor x = testing::random_tensor({12}, 2);
    const auto base = vals(nn::causal_dilated_conv1d(x, f, 2));
    for (std::size_t tp = 0; tp < 12; ++tp) {
      Tensor y = x.detach();
      y.mutable_values()[tp] += 10.0;
      const auto out = vals(nn::causal_dilated_conv1d(y, f, 2));
      for (std::size_t t = 0; t < tp; ++t) CHECK(out[t] == base[t]);
    }
  }

  TEST_CASE("conv_time matches a direct loop") {
    const Tensor x = testing::random_tensor({2, 3, 2, 7}, 3);
    const Tensor w = testing::random_tensor({4, 3, 3}, 4);
    const Tensor b = testing::random_tensor({4}, 5);
    const std::size_t d = 2;
    const Tensor y = nn::conv_time(x, w, b, d);
    REQUIRE(y.shape() == Shape{2, 4, 2, 7});
    double worst = 0.0;
    for (std::size_t bb = 0; bb < 2; ++bb)
      for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t n = 0; n < 2; ++n)
          for (std::size_t t = 0; t < 7; ++t) {
            double acc = b.at({o});
            for (std::size_t c = 0; c < 3; ++c)
              for (std::size_t k = 0; k < 3; ++k)
                if (t >= d * k) acc += w.at({o, c, k}) * x.at({bb, c, n, t - d * k});
            worst = std::max(worst, std::abs(acc - y.at({bb, o, n, t})));
          }
    CHECK(worst < 1e-12);
  }

  TEST_CASE("softmax of zeros is uniform") {
    const auto s = nn::softmax(Tensor({3}, {0, 0, 0}), 0);
    for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("softmax rows are distributions") {
    const Tensor x = testing::random_tensor({4, 5, 6}, 6, false, -20, 20);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const Tensor s = nn::softmax(x, axis);
      for (double v : s.values()) CHECK(v >= 0.0);
      const Tensor summed = nn::sum(s);
      const double groups = static_cast<double>(x.numel() / x.dim(axis));
      CHECK(std::abs(summed.item() - groups) < 1e-9);
    }
  }

  TEST_CASE("masked softmax") {
    nn::Mask m{3, 3, {1, 0, 1, 0, 0, 0, 1, 1, 1}};
    const Tensor x = testing::random_tensor({2, 3, 3}, 7, false, -3, 3);
    const Tensor s = nn::masked_softmax(x, m);
    for (std::size_t b = 0; b < 2; ++b) {
      CHECK(s.at({b, 0, 1}) == 0.0);
      CHECK(std::abs(s.at({b, 0, 0}) + s.at({b, 0, 2}) - 1.0) < 1e-12);
      for (std::size_t c = 0; c < 3; ++c) CHECK(s.at({b, 1, c}) == 0.0);
      CHECK(std::abs(s.at({b, 2, 0}) + s.at({b, 2, 1}) + s.at({b, 2, 2}) - 1.0) < 1e-12);
    }
    const Tensor full = nn::masked_softmax(x, nn::Mask::ones(3, 3));
    const Tensor plain = nn::softmax(x, 2);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(full.values()[i] - plain.values()[i]) < 1e-12);
    CHECK_THROWS_AS(nn::masked_softmax(testing::random_tensor({2, 4}, 1), m), ShapeError);
  }

  TEST_CASE("backward: square") {
    Tensor x = Tensor::scalar(3.0, true);
    nn::backward(nn::square(x));
    CHECK(x.grad()[0] == 6.0);
  }

  TEST_CASE("backward: sum of softmax has zero gradient") {
    Tensor x = testing::random_tensor({5}, 8, true);
    nn::backward(nn::sum(nn::softmax(x, 0)));
    for (double g : x.grad()) CHECK(std::abs(g) < 1e-15);
  }

  TEST_CASE("backward rejects non-scalars") {
    Tensor x = testing::random_tensor({3}, 9, true);
    CHECK_THROWS_AS(nn::backward(nn::relu(x)), ShapeError);
  }

  TEST_CASE("leaf gradients accumulate until zero_grad") {
    Tensor x = Tensor::scalar(2.0, true);
    nn::backward(nn::square(x));
    nn::backward(nn::square(x));
    CHECK(x.grad()[0] == 8.0);
    x.zero_grad();
    nn::backward(nn::square(x));
    CHECK(x.grad()[0] == 4.0);
  }

  TEST_CASE("shared subexpressions sum their gradient paths") {
    Tensor x = Tensor::scalar(1.5, true);
    Tensor y = nn::mul(x, x);
    nn::backward(nn::add(y, y));
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
  }

  TEST_CASE("no-grad guard records nothing") {
    Tensor x = Tensor::scalar(1.0, true);
    Tensor y;
    {
      nn::NoGradGuard guard;
      CHECK_FALSE(nn::grad_enabled());
      y = nn::square(x);
    }
    CHECK(nn::grad_enabled());
    CHECK_FALSE(y.requires_grad());
  }

  TEST_CASE("grad_check: sum of squares") {
    const Tensor x = testing::random_tensor({10}, 10);
    CHECK(nn::grad_check([](const Tensor& t) { return nn::sum_squares(t); }, x) < 1e-7);
  }

  TEST_CASE("grad_check: conv, softmax and matmul chain") {
    const Tensor w = testing::random_tensor({2, 1, 3}, 11);
    const Tensor m = testing::random_tensor({6, 4}, 12);
    const auto f = [&](const Tensor& x) {
      Tensor c = nn::conv_time(x, w, Tensor{}, 2);  // [1, 2, 3, 6]
      Tensor s = nn::softmax(c, 3);
      return nn::sum(nn::square(nn::matmul(s, m)));
    };
    CHECK(nn::grad_check(f, testing::random_tensor({1, 1, 3, 6}, 13)) < 1e-4);
  }

  TEST_CASE("grad_check: constant function") {
    Tensor x = testing::random_tensor({4}, 14, true);
    const auto f = [](const Tensor& t) { return nn::sum(nn::scale(t, 0.0)); };
    nn::backward(f(x));
    for (double g : x.grad()) CHECK(g == 0.0);
    CHECK(nn::grad_check(f, x) == 0.0);
  }

  TEST_CASE("gradient checks for every differentiable op") {
    const Tensor other = testing::random_tensor({3, 4}, 20);
    const Tensor row = testing::random_tensor({4}, 21);
    CHECK(check_grad([&](const Tensor& x) { return nn::add(x, other); }, {3, 4}, 1) < kGradTol);
    CHECK(check_grad([&](const Tensor& x) { return nn::add(other, x); }, {3, 4}, 2) < kGradTol);
    CHECK(check_grad([&](const Tensor& x) { return nn::add(other, x); }, {4}, 3) < kGradTol);
    CHECK(check_grad([&](const Tensor& x) { return nn::sub(x, row); }, {3, 4}, 4) < kGradTol);
    CHECK(check_grad([&](const Tensor& x) { return nn::sub(other, x); }, {4}, 5) < kGradTol);
    CHECK(check_grad([&](const Tensor& x) { return nn::mul(x, other); }, {3, 4}, 6) < kGradTol);
    CHECK(check_grad([&](const Tensor& x) { return nn::mul(other, x); }, {4}, 7) < kGradTol);
    CHECK(check_grad([](const Tensor& x) { return nn::scale(x, -2.5); }, {5}, 8) < kGradTol);
    CHECK(check_grad([](const Tensor& x) { return nn::add_scalar(x, 3.0); }, {5}, 9) < kGradTol);
    CHECK(check_grad([](const Tensor& x) { return nn::relu(x); }, {20}, 10) < kGradTol);
    CHECK(check_grad([](const Tensor& x) { return nn::tanh(x); }, {20}, 11) < kGradTol);
    CHECK(check_grad([](const Tensor& x) { return nn::sigmoid(x); }, {20}, 12) < kGradTol);
    CHECK(check_grad([](const Tensor& x) { return nn::abs(x); }, {20}, 13) < kGradTol);
    CHECK(check_grad([](const Tensor& x) { return nn::square(x); }, {20}, 14) < kGradTol);
    CHECK(check_grad([](const Tensor& x) { return nn::sum(x); }, {2, 3}, 15) < kGradTol);
    CHECK(check_grad([](const Tensor& x) { return nn::mean(x); }, {2, 3}, 16) < kGradTol);
    CHECK(check_grad([](const Tensor& x) { return nn::sum_squares(x); }, {2, 3}, 17) < kGradTol);

    const Tensor b2 = testing::random_tensor({4, 5}, 22);
    const Tensor b3 = testing::random_tensor({2, 4, 5}, 23);
    const Tensor a3 = testing::random_tensor({2, 3, 4}, 24);
    CHECK(check_grad([&](const Tensor& x) { return nn::matmul(x, b2); }, {2, 3, 4}, 18) < kGradTol);
    CHECK(check_grad([&](const Tensor& x) { return nn::matmul(x, b3); }, {2, 3, 4}, 19) < kGradTol);
    CHECK(check_grad([&](const Tensor& x) { return nn::matmul(a3, x); }, {2, 4, 5}, 20) < kGradTol);
    CHECK(check_grad([&](const Tensor& x) { return nn::matmul(a3, x); }, {4, 5}, 21) < kGradTol);
    const Tensor k3 = testing::random_tensor({2, 5, 4}, 25);
    CHECK(check_grad([&](const Tensor& x) { return nn::matmul_nt(x, k3, 0.5); }, {2, 3, 4}, 22) < kGradTol);
    CHECK(check_grad([&](const Tensor& x) { return nn::matmul_nt(a3, x, 0.5); }, {2, 5, 4}, 23) < kGradTol);

    CHECK(check_grad([](const Tensor& x) { return nn::permute(x, {2, 0, 3, 1}); }, {2, 3, 4, 5}, 24) < kGradTol);
    CHECK(check_grad([](const Tensor& x) { return nn::transpose(x, 0, 2); }, {2, 3, 4}, 25) < kGradTol);
    CHECK(check_grad([](const Tensor& x) { return nn::reshape(x, {6, 4}); }, {2, 3, 4}, 26) < kGradTol);
    CHECK(check_grad([&](const Tensor& x) { return nn::concat({x, a3, x}, 1); }, {2, 3, 4}, 27) < kGradTol);
    CHECK(check_grad([](const Tensor& x) { return nn::slice(x, 2, 1, 3); }, {2, 3, 4}, 28) < kGradTol);
    CHECK(check_grad([](const Tensor& x) { return nn::softmax(x, 1); }, {2, 3, 4}, 29) < kGradTol);
    const nn::Mask mask{3, 4, {1, 1, 0, 0, 0, 0, 0, 0, 1, 0, 1, 1}};
    CHECK(check_grad([&](const Tensor& x) { return nn::masked_softmax(x, mask); }, {2, 3, 4}, 30) < kGradTol);
  }

  TEST_CASE("gradient checks for convolution and graph ops") {
    const Tensor x = testing::random_tensor({2, 3, 4, 6}, 40);
    const Tensor w = testing::random_tensor({2, 3, 3}, 41);
    const Tensor b = testing::random_tensor({2}, 42);
    CHECK(check_grad([&](const Tensor& t) { return nn::conv_time(t, w, b, 2); }, {2, 3, 4, 6}, 43) < kGradTol);
    CHECK(check_grad([&](const Tensor& t) { return nn::conv_time(x, t, b, 2); }, {2, 3, 3}, 44) < kGradTol);
    CHECK(check_grad([&](const Tensor& t) { return nn::conv_time(x, w, t, 1); }, {2}, 45) < kGradTol);
    const Tensor f = testing::random_tensor({3}, 46);
    CHECK(check_grad([&](const Tensor& t) { return nn::causal_dilated_conv1d(t, f, 2); }, {3, 8}, 47) < kGradTol);

    const Tensor h = testing::random_tensor({2, 3, 4, 5}, 48);
    const Tensor a = testing::random_tensor({4, 4}, 49, false, 0, 1);
    const Tensor a_step = testing::random_tensor({2, 5, 4, 4}, 50, false, 0, 1);
    CHECK(check_grad([&](const Tensor& t) { return nn::graph_propagate(a, t); }, {2, 3, 4, 5}, 51) < kGradTol);
    CHECK(check_grad([&](const Tensor& t) { return nn::graph_propagate(t, h); }, {4, 4}, 52) < kGradTol);
    CHECK(check_grad([&](const Tensor& t) { return nn::graph_propagate(a_step, t); }, {2, 3, 4, 5}, 53) < kGradTol);
    CHECK(check_grad([&](const Tensor& t) { return nn::graph_propagate(t, h); }, {2, 5, 4, 4}, 54, 0, 1) < kGradTol);
    CHECK(check_grad([](const Tensor& t) { return nn::normalize_adjacency(t, false); }, {4, 4}, 55, 0, 1) < kGradTol);
    CHECK(check_grad([](const Tensor& t) { return nn::normalize_adjacency(t, true); }, {2, 4, 4}, 56, 0, 1) < kGradTol);
    CHECK(check_grad([](const Tensor& t) { return nn::row_max_rescale(t); }, {3, 5}, 57, 0, 3) < kGradTol);
  }

  TEST_CASE("graph_propagate aggregates rows of the adjacency") {
    const Tensor a({2, 2}, {0, 1, 0, 0});
    const Tensor h({1, 1, 2, 1}, {3, 5});
    const auto out = vals(nn::graph_propagate(a, h));
    CHECK(out == std::vector<double>{5, 0});
  }

  TEST_CASE("normalize_adjacency adds self loops and row-normalises") {
    const Tensor a({2, 2}, {0, 3, 0, 0});
    CHECK(vals(nn::normalize_adjacency(a, false)) == std::vector<double>{0.25, 0.75, 0, 1});
    CHECK(vals(nn::normalize_adjacency(a, true)) == std::vector<double>{1, 0, 0.75, 0.25});
    CHECK(vals(nn::normalize_adjacency(Tensor({2, 2}), false)) == std::vector<double>{1, 0, 0, 1});
  }

  TEST_CASE("row_max_rescale only touches rows above 1") {
    const Tensor a({2, 3}, {0.5, 0.2, 0.1, 2, 1, 0});
    CHECK(vals(nn::row_max_rescale(a)) == std::vector<double>{0.5, 0.2, 0.1, 1, 0.5, 0});
  }

  TEST_CASE("shape errors name the op") {
    try {
      nn::add(Tensor({2, 3}), Tensor({4}));
      FAIL("expected a shape error");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("add") != std::string::npos);
    }
    CHECK_THROWS_AS(nn::matmul(Tensor({2, 3}), Tensor({4, 2})), ShapeError);
    CHECK_THROWS_AS(nn::reshape(Tensor({2, 3}), {5}), ShapeError);
    CHECK_THROWS_AS(nn::permute(Tensor({2, 3}), {0, 0}), ShapeError);
    CHECK_THROWS_AS(nn::conv_time(Tensor({1, 2, 3, 4}), Tensor({1, 3, 2}), Tensor{}, 1), ShapeError);
  }

  TEST_CASE("dropout") {
    const Tensor x = testing::random_tensor({100}, 60);
    std::mt19937_64 r1(5), r2(5);
    CHECK(vals(nn::dropout(x, 0.0, r1)) == vals(x));
    CHECK(vals(nn::dropout(x, 0.5, r1, false)) == vals(x));
    const auto a = vals(nn::dropout(x, 0.3, r1));
    std::mt19937_64 r3(5);
    const auto b = vals(nn::dropout(x, 0.3, r3));
    CHECK(a == b);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const bool dropped = a[i] == 0.0;
      const bool scaled = std::abs(a[i] - x.values()[i] / 0.7) < 1e-15;
      CHECK((dropped || scaled));
    }
    CHECK_THROWS(nn::dropout(x, 1.0, r2));
  }

  TEST_CASE("parameter files round-trip") {
    testing::TempDir dir("params");
    std::vector<nn::Parameter> ps{{"w", testing::random_tensor({2, 3}, 61, true), false},
                                  {"b", testing::random_tensor({3}, 62, true), true}};
    nn::save_parameters(dir / "p.json", ps);
    std::vector<nn::Parameter> qs{{"w", Tensor({2, 3}, true), false}, {"b", Tensor({3}, true), true}};
    nn::load_parameters(dir / "p.json", qs);
    CHECK(vals(qs[0].tensor) == vals(ps[0].tensor));
    CHECK(vals(qs[1].tensor) == vals(ps[1].tensor));

    std::vector<nn::Parameter> wrong{{"w", Tensor({3, 2}, true), false}, {"b", Tensor({3}, true), true}};
    CHECK_THROWS(nn::load_parameters(dir / "p.json", wrong));
  }
}
