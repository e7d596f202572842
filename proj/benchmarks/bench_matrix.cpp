#include "ptq/matrix.hpp"
#include "ptq/rng.hpp"

#include <benchmark/benchmark.h>

#include <cstdint>

static ptq::Matrix gaussian(size_t rows, size_t cols, uint64_t seed) {
    ptq::Rng rng(seed);
    ptq::Matrix m(rows, cols);
    for (float & v : m.values()) {
        v = rng.gaussian();
    }
    return m;
}

static ptq::Matrix random_spd(size_t n, uint64_t seed) {
    const ptq::Matrix g = gaussian(n, n, seed);
    ptq::Matrix spd = ptq::matmul_nt(g, g);
    for (size_t i = 0; i < n; i++) {
        spd.at(i, i) += (float) n;
    }
    return spd;
}

static void bm_matmul(benchmark::State & state) {
    const size_t n = (size_t) state.range(0);
    const ptq::Matrix a = gaussian(n, n, 1);
    const ptq::Matrix b = gaussian(n, n, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ptq::matmul(a, b));
    }
    state.SetItemsProcessed((int64_t) state.iterations() * (int64_t) (2 * n * n * n));
}
BENCHMARK(bm_matmul)->Arg(32)->Arg(64)->Arg(128)->Arg(256);

static void bm_matmul_nt(benchmark::State & state) {
    const size_t n = (size_t) state.range(0);
    const ptq::Matrix a = gaussian(n, n, 3);
    const ptq::Matrix b = gaussian(n, n, 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ptq::matmul_nt(a, b));
    }
    state.SetItemsProcessed((int64_t) state.iterations() * (int64_t) (2 * n * n * n));
}
BENCHMARK(bm_matmul_nt)->Arg(32)->Arg(64)->Arg(128)->Arg(256);

static void bm_cholesky(benchmark::State & state) {
    const size_t n = (size_t) state.range(0);
    const ptq::Matrix spd = random_spd(n, 5);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ptq::cholesky(spd));
    }
}
BENCHMARK(bm_cholesky)->Arg(64)->Arg(128)->Arg(256);

static void bm_inverse_spd(benchmark::State & state) {
    const size_t n = (size_t) state.range(0);
    const ptq::Matrix spd = random_spd(n, 6);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ptq::inverse_spd(spd));
    }
}
BENCHMARK(bm_inverse_spd)->Arg(64)->Arg(128);

BENCHMARK_MAIN();
