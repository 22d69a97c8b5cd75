#include <benchmark/benchmark.h>

#include "adlgnn/structure.hpp"
#include "adlgnn/synth.hpp"

using namespace adlgnn;

namespace {

structure::Matrix fixture(std::size_t nodes, std::size_t length) {
  synth::SynthConfig c;
  c.nodes = nodes;
  c.length = length;
  c.seed = 1;
  return synth::generate(c).values;
}

void BM_Estimator(benchmark::State& state) {
  const auto method = static_cast<structure::Method>(state.range(0));
  const auto Y = fixture(static_cast<std::size_t>(state.range(1)), 500);
  structure::StructureConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(structure::run_method(method, Y, cfg));
  state.SetLabel(std::string(structure::method_name(method)));
}

void EstimatorArgs(benchmark::internal::Benchmark* b) {
  for (auto m : structure::kAllMethods)
    for (int n : {10, 40}) b->Args({static_cast<int>(m), n});
}

BENCHMARK(BM_Estimator)->Apply(EstimatorArgs)->Unit(benchmark::kMillisecond);

void BM_StaticGraph(benchmark::State& state) {
  const data::TimeSeriesDataset ds(fixture(static_cast<std::size_t>(state.range(0)), 3000));
  structure::StructureConfig cfg;
  cfg.S = 3;
  for (auto _ : state) benchmark::DoNotOptimize(structure::static_graph(ds, cfg));
}
BENCHMARK(BM_StaticGraph)->Arg(10)->Arg(40)->Unit(benchmark::kMillisecond);

void BM_TopS(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  structure::AdjacencyMatrix a{structure::Matrix::Random(n, n).cwiseAbs()};
  for (auto _ : state) benchmark::DoNotOptimize(structure::top_s_sparsify(a, 20));
}
BENCHMARK(BM_TopS)->Arg(137)->Arg(321)->Arg(862);

}  // namespace
