#include <benchmark/benchmark.h>

#include "cma/kernels.hpp"
#include "cma/rng.hpp"

namespace {

cma::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t stream) {
    cma::CounterRng rng(42, stream);
    cma::Matrix m(rows, cols);
    for (double& x : m.values()) x = rng.uniform(-1.0, 1.0);
    return m;
}

// Square n×n products; n = 512 matches the encoder width.
template <cma::Matrix (*Fn)(const cma::Matrix&, const cma::Matrix&)>
void bm_square(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const cma::Matrix a = random_matrix(n, n, 1);
    const cma::Matrix b = random_matrix(n, n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(Fn(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

}  // namespace

BENCHMARK(bm_square<cma::kernels::matmul_serial>)->Name("matmul/serial")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(bm_square<cma::kernels::matmul_parallel>)->Name("matmul/parallel")->Arg(64)->Arg(256)->Arg(512)->UseRealTime();
BENCHMARK(bm_square<cma::kernels::matmul_tn_serial>)->Name("matmul_tn/serial")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(bm_square<cma::kernels::matmul_tn_parallel>)->Name("matmul_tn/parallel")->Arg(64)->Arg(256)->Arg(512)->UseRealTime();
BENCHMARK(bm_square<cma::kernels::matmul_nt_serial>)->Name("matmul_nt/serial")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(bm_square<cma::kernels::matmul_nt_parallel>)->Name("matmul_nt/parallel")->Arg(64)->Arg(256)->Arg(512)->UseRealTime();

BENCHMARK_MAIN();
