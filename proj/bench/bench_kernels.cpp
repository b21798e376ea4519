#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "slasd/kernels.hpp"

namespace {

std::vector<float> random_vec(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> d;
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      slasd::kernels::gemm(n, n, n, a.data(), b.data(), c.data());
    else
      slasd::kernels::gemm_serial(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void BM_SqDistances(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0)), k = 50, d = 128;
  const auto x = random_vec(n * d, 3), c = random_vec(k * d, 4);
  std::vector<double> out(n * k);
  for (auto _ : state) {
    if constexpr (Parallel)
      slasd::kernels::sq_distances(n, k, d, x.data(), c.data(), out.data());
    else
      slasd::kernels::sq_distances_serial(n, k, d, x.data(), c.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_SqDistances<false>)->Arg(1000)->Arg(4000);
BENCHMARK(BM_SqDistances<true>)->Arg(1000)->Arg(4000);

BENCHMARK_MAIN();
