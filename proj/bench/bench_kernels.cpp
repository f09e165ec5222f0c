// Serial reference vs OpenMP matmul kernels at the shapes the model hits:
// (sequence x d_model) times (d_model x d_model), the feed-forward widening,
// and the output projection onto the vocabulary.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "pidgen/kernels.hpp"

namespace k = pidgen::kernels;

namespace {

using Gemm = void (*)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);

void run(benchmark::State& state, Gemm f) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto kk = static_cast<std::size_t>(state.range(2));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d;
  std::vector<double> A(m * kk), B(kk * n), C(m * n);
  for (auto& x : A) x = d(rng);
  for (auto& x : B) x = d(rng);
  for (auto _ : state) {
    f(m, n, kk, A.data(), B.data(), C.data());
    benchmark::DoNotOptimize(C.data());
    benchmark::ClobberMemory();
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * static_cast<double>(m * n * kk), benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::kIs1000);
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({120, 128, 128})->Args({120, 512, 128})->Args({120, 128, 512})->Args({120, 100, 128})->Args({8, 8, 8});
}

}  // namespace

BENCHMARK_CAPTURE(run, serial_nn, k::serial::gemm_nn)->Apply(shapes);
BENCHMARK_CAPTURE(run, omp_nn, k::omp::gemm_nn)->Apply(shapes);
BENCHMARK_CAPTURE(run, serial_tn, k::serial::gemm_tn)->Apply(shapes);
BENCHMARK_CAPTURE(run, omp_tn, k::omp::gemm_tn)->Apply(shapes);
BENCHMARK_CAPTURE(run, serial_nt, k::serial::gemm_nt)->Apply(shapes);
BENCHMARK_CAPTURE(run, omp_nt, k::omp::gemm_nt)->Apply(shapes);

BENCHMARK_MAIN();
