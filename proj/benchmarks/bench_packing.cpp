#include "ptq/packing.hpp"
#include "ptq/rng.hpp"

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

static std::vector<uint32_t> random_codes(size_t n, int bits) {
    ptq::Rng rng(17);
    std::vector<uint32_t> v(n);
    for (uint32_t & x : v) {
        x = (uint32_t) rng.index((size_t) 1 << bits);
    }
    return v;
}

static void bm_pack(benchmark::State & state) {
    const int bits = (int) state.range(0);
    const auto codes = random_codes(1 << 16, bits);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ptq::pack_codes(codes, bits));
    }
    state.SetItemsProcessed((int64_t) state.iterations() * (int64_t) codes.size());
}
BENCHMARK(bm_pack)->Arg(2)->Arg(3)->Arg(4)->Arg(5)->Arg(8);

static void bm_unpack(benchmark::State & state) {
    const int bits = (int) state.range(0);
    const auto packed = ptq::pack_codes(random_codes(1 << 16, bits), bits);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ptq::unpack_codes(packed));
    }
    state.SetItemsProcessed((int64_t) state.iterations() * (int64_t) packed.count);
}
BENCHMARK(bm_unpack)->Arg(2)->Arg(3)->Arg(4)->Arg(5)->Arg(8);

static void bm_split_odd(benchmark::State & state) {
    const auto codes = random_codes(1 << 16, 5);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ptq::split_odd(codes));
    }
    state.SetItemsProcessed((int64_t) state.iterations() * (int64_t) codes.size());
}
BENCHMARK(bm_split_odd);

static void bm_join_odd(benchmark::State & state) {
    const auto planes = ptq::split_odd(random_codes(1 << 16, 5));
    for (auto _ : state) {
        benchmark::DoNotOptimize(ptq::join_odd(planes));
    }
    state.SetItemsProcessed((int64_t) state.iterations() * (int64_t) planes.count);
}
BENCHMARK(bm_join_odd);

BENCHMARK_MAIN();
