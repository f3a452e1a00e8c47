// Parallel kernels vs. the scalar reference loops.
//
//   ./bench_kernels --benchmark_filter=relu
//
// Parallel variants take the OpenMP thread count as their second argument.

#include <benchmark/benchmark.h>
#include <omp.h>

#include "chmm/kernels.hpp"
#include "chmm/rng.hpp"

using namespace chmm;

namespace {

Matrix input(Index rows, Index cols, std::uint64_t seed) { return gaussian_matrix(rows, cols, seed, Stream::TestData); }

void BM_relu_project(benchmark::State& state) {
  const Index n = state.range(0);
  omp_set_num_threads(static_cast<int>(state.range(1)));
  const Matrix X = input(n, 256, 1), W = input(128, 256, 2);
  Matrix out;
  for (auto _ : state) {
    kernels::relu_project(X, W, 1.0 / 16.0, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void BM_relu_project_reference(benchmark::State& state) {
  const Index n = state.range(0);
  const Matrix X = input(n, 256, 1), W = input(128, 256, 2);
  Matrix out;
  for (auto _ : state) {
    kernels::reference::relu_project(X, W, 1.0 / 16.0, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void BM_symmetric_moment(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(1)));
  const Matrix A = input(state.range(0), 128, 3);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::symmetric_moment(A).data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_symmetric_moment_reference(benchmark::State& state) {
  const Matrix A = input(state.range(0), 128, 3);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::symmetric_moment(A).data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_logistic_terms(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(1)));
  const Index n = state.range(0);
  const Matrix V = input(n, 128, 4).cwiseMax(0.0);
  const Vector w = gaussian_vector(128, 5, Stream::TestData);
  Vector y(n);
  for (Index i = 0; i < n; ++i) y(i) = i % 3 == 0 ? -1.0 : 1.0;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::logistic_terms(V, y, w, 1.0 / std::sqrt(128.0), true).loss);
  state.SetItemsProcessed(state.iterations() * n);
}

void BM_logistic_terms_reference(benchmark::State& state) {
  const Index n = state.range(0);
  const Matrix V = input(n, 128, 4).cwiseMax(0.0);
  const Vector w = gaussian_vector(128, 5, Stream::TestData);
  Vector y(n);
  for (Index i = 0; i < n; ++i) y(i) = i % 3 == 0 ? -1.0 : 1.0;
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::reference::logistic_terms(V, y, w, 1.0 / std::sqrt(128.0), true).loss);
  state.SetItemsProcessed(state.iterations() * n);
}

void thread_args(benchmark::internal::Benchmark* b) {
  const int max_threads = omp_get_max_threads();
  for (long n : {1024L, 8192L})
    for (int t = 1; t <= max_threads; t *= 2) b->Args({n, t});
}

}  // namespace

BENCHMARK(BM_relu_project)->Apply(thread_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_relu_project_reference)->Arg(1024)->Arg(8192)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_symmetric_moment)->Apply(thread_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_symmetric_moment_reference)->Arg(1024)->Arg(8192)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_logistic_terms)->Apply(thread_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_logistic_terms_reference)->Arg(1024)->Arg(8192)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
