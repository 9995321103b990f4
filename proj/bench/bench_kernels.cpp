// Serial reference vs OpenMP kernels, plus one full diversify step.

#include <benchmark/benchmark.h>

#include <vector>

#include "divdis/kernels.hpp"
#include "divdis/rng.hpp"
#include "divdis/train.hpp"

using namespace divdis;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = noise(n * n, 1), b = noise(n * n, 2);
  std::vector<double> c(n * n);
  const kernels::GemmDims dims{n, n, n};
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::gemm(a, b, c, dims);
    } else {
      kernels::serial::gemm(a, b, c, dims);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_pairwise_l1(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const std::size_t heads = 20, classes = 2;
  std::vector<std::vector<double>> probs;
  for (std::size_t h = 0; h < heads; ++h) {
    auto v = noise(batch * classes, 10 + h);
    for (std::size_t i = 0; i < batch; ++i) {
      const double p = 0.5 + 0.5 * v[2 * i];
      v[2 * i] = p;
      v[2 * i + 1] = 1.0 - p;
    }
    probs.push_back(std::move(v));
  }
  std::vector<std::span<const double>> views(probs.begin(), probs.end());
  for (auto _ : state) {
    auto s = Parallel ? kernels::pairwise_l1_scores(views, batch, classes)
                      : kernels::serial::pairwise_l1_scores(views, batch, classes);
    benchmark::DoNotOptimize(s.data());
  }
}

template <bool Parallel>
void BM_selection_failures(benchmark::State& state) {
  const std::vector<double> risks{0.25, 0.75, 0.75, 0.75, 0.75};
  for (auto _ : state) {
    const auto f = Parallel ? kernels::count_selection_failures(risks, 30, 10000, 3)
                            : kernels::serial::count_selection_failures(risks, 30, 10000, 3);
    benchmark::DoNotOptimize(f);
  }
}

void BM_diversify_steps(benchmark::State& state) {
  const TaskBundle b = gen_quadrants2d(SplitSizes{}, 0);
  TrainConfig cfg;
  cfg.steps = 20;
  cfg.record_every = 1000;
  const auto model = MultiHeadClassifier::init(2, std::vector<std::size_t>{32, 32},
                                               static_cast<std::size_t>(state.range(0)), 2, InitSpec{0});
  for (auto _ : state) benchmark::DoNotOptimize(diversify(model, b, cfg).model.num_heads());
  state.SetItemsProcessed(state.iterations() * 20);
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_pairwise_l1<false>)->Arg(1024)->Arg(16384);
BENCHMARK(BM_pairwise_l1<true>)->Arg(1024)->Arg(16384);
BENCHMARK(BM_selection_failures<false>);
BENCHMARK(BM_selection_failures<true>);
BENCHMARK(BM_diversify_steps)->Arg(2)->Arg(20);

BENCHMARK_MAIN();
