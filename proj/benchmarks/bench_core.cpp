#include <benchmark/benchmark.h>

#include "dslab/ops.hpp"
#include "dslab/rng.hpp"

namespace {

dslab::Tensor randt(dslab::Shape shape, dslab::Rng& rng) {
  dslab::Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  dslab::Rng rng(1);
  dslab::Tensor a = randt({n, n}, rng);
  dslab::Tensor b = randt({n, n}, rng);
  for (auto _ : state) {
    dslab::Tensor y = dslab::matmul(a, b);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv2dForward(benchmark::State& state) {
  dslab::Rng rng(2);
  dslab::Tensor x = randt({8, 16, 32, 32}, rng);
  dslab::Tensor w = randt({16, 16, 3, 3}, rng);
  dslab::Tensor b = randt({16}, rng);
  for (auto _ : state) {
    dslab::Tensor y = dslab::conv2d(x, w, b, 1, 1);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_Conv2dForward);

void BM_ConvBlockBackward(benchmark::State& state) {
  dslab::Rng rng(3);
  dslab::Tensor x = randt({4, 8, 16, 16}, rng);
  dslab::Tensor w = randt({8, 8, 3, 3}, rng);
  w.set_requires_grad(true);
  for (auto _ : state) {
    dslab::Graph g;
    dslab::Tensor y = dslab::relu(dslab::conv2d(x, w, dslab::Tensor(), 1, 1));
    dslab::Tensor loss = dslab::sum(y);
    w.zero_grad();
    g.backward(loss);
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_ConvBlockBackward);

}  // namespace

BENCHMARK_MAIN();
