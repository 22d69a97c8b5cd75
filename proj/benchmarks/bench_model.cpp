#include <random>

#include <benchmark/benchmark.h>

#include "adlgnn/model.hpp"
#include "adlgnn/nn.hpp"

using namespace adlgnn;
using nn::Tensor;

namespace {

Tensor random_tensor(nn::Shape shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(nn::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

model::ModelConfig desk_config(std::size_t window) {
  model::ModelConfig c;
  c.window = window;
  c.st_blocks = 2;
  c.channels = 8;
  c.skip_channels = 16;
  c.end_channels = 32;
  c.attention_kernel = 3;
  return c;
}

structure::Matrix ring(std::size_t n) {
  structure::Matrix a = structure::Matrix::Zero(Eigen::Index(n), Eigen::Index(n));
  for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, (i + 1) % a.rows()) = a((i + 1) % a.rows(), i) = 0.5;
  return a;
}

void BM_ConvTime(benchmark::State& state) {
  const Tensor x = random_tensor({4, 8, 10, 16}, 1);
  const Tensor w = random_tensor({8, 8, 7}, 2), b = random_tensor({8}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv_time(x, w, b, 2));
}
BENCHMARK(BM_ConvTime);

void BM_MaskedSoftmax(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const Tensor s = random_tensor({4, n, n}, 4);
  nn::Mask m = nn::Mask::ones(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m.allowed[i * n + j] = 0;
  for (auto _ : state) benchmark::DoNotOptimize(nn::masked_softmax(s, m));
}
BENCHMARK(BM_MaskedSoftmax)->Arg(64)->Arg(160);

void BM_ModelForward(benchmark::State& state) {
  const auto window = static_cast<std::size_t>(state.range(0));
  const model::ForecastModel m(desk_config(window), 10, ring(10), 1);
  const Tensor x = random_tensor({4, 1, 10, window}, 5);
  nn::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x));
}
BENCHMARK(BM_ModelForward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_ModelTrainStep(benchmark::State& state) {
  const auto window = static_cast<std::size_t>(state.range(0));
  model::ForecastModel m(desk_config(window), 10, ring(10), 1);
  const Tensor x = random_tensor({4, 1, 10, window}, 6);
  const Tensor target = random_tensor({4, 10}, 7);
  std::mt19937_64 rng(8);
  for (auto _ : state) {
    for (auto& p : m.parameters()) p.tensor.zero_grad();
    nn::backward(nn::mean(nn::abs(nn::sub(m.forward(x, true, &rng), target))));
  }
}
BENCHMARK(BM_ModelTrainStep)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
