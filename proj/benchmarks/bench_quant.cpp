#include "ptq/algos.hpp"
#include "ptq/quant.hpp"
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

static ptq::QuantScheme scheme(ptq::Granularity gran, int block = 0) {
    ptq::QuantScheme s;
    s.bits = 4;
    s.mode = ptq::QuantMode::asymmetric;
    s.granularity = gran;
    s.block_size = block;
    return s;
}

static void bm_rtn_per_row(benchmark::State & state) {
    const ptq::Matrix w = gaussian(256, 256, 1);
    const ptq::QuantScheme s = scheme(ptq::Granularity::per_row);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ptq::rtn(w, s));
    }
    state.SetItemsProcessed((int64_t) state.iterations() * (int64_t) w.size());
}
BENCHMARK(bm_rtn_per_row);

static void bm_rtn_block32(benchmark::State & state) {
    const ptq::Matrix w = gaussian(256, 256, 2);
    const ptq::QuantScheme s = scheme(ptq::Granularity::block, 32);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ptq::rtn(w, s));
    }
    state.SetItemsProcessed((int64_t) state.iterations() * (int64_t) w.size());
}
BENCHMARK(bm_rtn_block32);

static void bm_fake_quant_per_token(benchmark::State & state) {
    const ptq::Matrix x = gaussian(64, 512, 3);
    ptq::QuantScheme s = scheme(ptq::Granularity::per_token);
    s.bits = 8;
    for (auto _ : state) {
        benchmark::DoNotOptimize(ptq::fake_quant(x, s, ptq::TensorRole::activation));
    }
    state.SetItemsProcessed((int64_t) state.iterations() * (int64_t) x.size());
}
BENCHMARK(bm_fake_quant_per_token);

static void bm_gptq(benchmark::State & state) {
    const size_t n = (size_t) state.range(0);
    const ptq::Matrix w = gaussian(n, n, 4);
    const ptq::Matrix x = gaussian(n, n / 2, 5);
    const ptq::QuantScheme s = scheme(ptq::Granularity::per_row);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ptq::gptq(w, x, s));
    }
}
BENCHMARK(bm_gptq)->Arg(64)->Arg(128)->Arg(256);

BENCHMARK_MAIN();
