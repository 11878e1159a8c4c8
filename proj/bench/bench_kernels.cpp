// Serial reference vs OpenMP kernels. Thread count follows OMP_NUM_THREADS
// or CQCIM_THREADS.

#include <benchmark/benchmark.h>

#include "cqcim/kernels.hpp"
#include "cqcim/numkit.hpp"

namespace {

using namespace cqcim;

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (auto& v : m.values()) v = rng.normal();
  return m;
}

template <void (*Gemm)(const Matrix&, const Matrix&, Matrix&)>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, 384, 1), b = random_matrix(384, 128, 2);
  Matrix c(n, 128);
  for (auto _ : state) {
    Gemm(a, b, c);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 384 * 128));
}

// Query x corpus scoring, the MIPS inner loop.
template <void (*Gemm)(const Matrix&, const Matrix&, Matrix&)>
void BM_gemm_nt(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix q = random_matrix(64, 128, 3), docs = random_matrix(n, 128, 4);
  Matrix c(64, n);
  for (auto _ : state) {
    Gemm(q, docs, c);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(64 * n * 128));
}

template <void (*Tiles)(std::span<const double>, const Matrix&, std::size_t, std::size_t, Matrix&)>
void BM_tiles(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t slices = 2, dim = 256, rows = 128;
  const Matrix cells = random_matrix(n, slices * dim, 5);
  const Matrix q = random_matrix(1, dim, 6);
  Matrix out(n, slices * (dim / rows));
  for (auto _ : state) {
    Tiles(q.row(0), cells, slices, rows, out);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * slices * dim));
}

BENCHMARK(BM_gemm<kernels::serial::gemm>)->Name("gemm/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_gemm<kernels::parallel::gemm>)->Name("gemm/parallel")->Arg(256)->Arg(1024);
BENCHMARK(BM_gemm_nt<kernels::serial::gemm_nt>)->Name("gemm_nt/serial")->Arg(1024)->Arg(8192);
BENCHMARK(BM_gemm_nt<kernels::parallel::gemm_nt>)->Name("gemm_nt/parallel")->Arg(1024)->Arg(8192);
BENCHMARK(BM_tiles<kernels::serial::tile_partial_sums>)->Name("tiles/serial")->Arg(1024)->Arg(8192);
BENCHMARK(BM_tiles<kernels::parallel::tile_partial_sums>)->Name("tiles/parallel")->Arg(1024)->Arg(8192);

}  // namespace

int main(int argc, char** argv) {
  cqcim::kernels::apply_thread_limit_from_env();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
