// Serial dense reference vs the blocked engine at 1 and N threads, on a small
// JANet-style network: a transform net predicts a 3x3 matrix that multiplies
// the input cloud, followed by shared point MLPs and max pooling.

#include <random>

#include <benchmark/benchmark.h>
#include <omp.h>

#include "pcv/propagation.hpp"
#include "pcv/reference.hpp"

using namespace pcv;

namespace {

Layer dense(std::mt19937_64& rng, Eigen::Index in, Eigen::Index out) {
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  Layer l;
  l.kind = LayerKind::Dense;
  l.weight = RowMatrix::NullaryExpr(out, in, [&] { return g(rng); });
  l.bias = Eigen::VectorXd::NullaryExpr(out, [&] { return 0.1 * g(rng); });
  return l;
}

Layer pointwise(std::mt19937_64& rng, Eigen::Index cin, Eigen::Index cout) {
  Layer l = dense(rng, cin, cout);
  l.kind = LayerKind::Conv1D;
  l.kernel = 1;
  return l;
}

Layer simple(LayerKind k) {
  Layer l;
  l.kind = k;
  return l;
}

struct Instance {
  Network net;
  PerturbationSpec spec;
};

Instance make_instance(std::size_t points) {
  std::mt19937_64 rng(7);
  std::vector<Layer> layers;
  layers.push_back(pointwise(rng, 3, 16));   // 1
  layers.push_back(simple(LayerKind::ReLU));  // 2
  layers.push_back(simple(LayerKind::GlobalMaxPool));  // 3
  layers.push_back(dense(rng, 16, 9));        // 4
  Layer reshape = simple(LayerKind::Reshape);  // 5
  reshape.reshape_to = {3, 3};
  reshape.index_map = janet_index_map(3, 3);
  reshape.map_name = "janet-3x3";
  layers.push_back(reshape);
  Layer mul = simple(LayerKind::Multiplication);  // 6
  mul.lhs = 0;
  mul.rhs = 5;
  mul.mode = MulMode::MatMul;
  layers.push_back(mul);
  layers.push_back(pointwise(rng, 3, 32));    // 7
  layers.push_back(simple(LayerKind::ReLU));  // 8
  layers.push_back(pointwise(rng, 32, 32));   // 9
  layers.push_back(simple(LayerKind::ReLU));  // 10
  layers.push_back(simple(LayerKind::GlobalMaxPool));  // 11
  layers.push_back(dense(rng, 32, 10));       // 12
  Network net({points, 3}, 10, std::move(layers));

  PointCloud cloud;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  cloud.points = RowMatrix::NullaryExpr(static_cast<Eigen::Index>(points), 3, [&] { return u(rng); });
  return {std::move(net), {std::move(cloud), Norm::Linf, 0.01}};
}

void BM_Reference(benchmark::State& state) {
  const Instance in = make_instance(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(reference::all_bounds(in.net, in.spec));
}

void BM_EngineSerial(benchmark::State& state) {
  const Instance in = make_instance(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(compute_all_bounds(in.net, in.spec, {1}));
}

void BM_EngineParallel(benchmark::State& state) {
  const Instance in = make_instance(static_cast<std::size_t>(state.range(0)));
  const int threads = omp_get_max_threads();
  state.counters["threads"] = threads;
  for (auto _ : state) benchmark::DoNotOptimize(compute_all_bounds(in.net, in.spec, {threads}));
}

}  // namespace

BENCHMARK(BM_Reference)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EngineSerial)->Arg(8)->Arg(16)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EngineParallel)->Arg(8)->Arg(16)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
