#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ptq/errors.hpp"
#include "ptq/quant.hpp"
#include "ptq/rng.hpp"

#include "oracles.hpp"

#include <cmath>
#include <set>

using namespace ptq;

namespace {

QuantScheme scheme_of(int bits, QuantMode mode, Granularity gran, int block = 0) {
    QuantScheme s;
    s.bits = bits;
    s.mode = mode;
    s.granularity = gran;
    s.block_size = block;
    return s;
}

} // namespace

TEST_CASE("quant_range") {
    CHECK(quant_range(8, QuantMode::symmetric) == std::pair{-127, 127});
    CHECK(quant_range(8, QuantMode::asymmetric) == std::pair{0, 255});
    CHECK(quant_range(4, QuantMode::symmetric) == std::pair{-7, 7});
    CHECK(quant_range(4, QuantMode::asymmetric) == std::pair{0, 15});
    CHECK(quant_range(2, QuantMode::symmetric) == std::pair{-1, 1});
    CHECK(quant_range(2, QuantMode::asymmetric) == std::pair{0, 3});
}

TEST_CASE("symmetric qparams formula") {
    const std::vector<float> v{-2.0f, 0.5f, 1.0f};
    const QuantParams p = compute_qparams(v, scheme_of(4, QuantMode::symmetric,
                                                       Granularity::per_tensor));
    CHECK(p.scale == 2.0f / 7.0f);
    CHECK(p.zero == 0.0f);
    CHECK(p.qmin == -7);
    CHECK(p.qmax == 7);
}

TEST_CASE("asymmetric qparams formula") {
    const std::vector<float> v{-1.0f, 0.0f, 3.0f};
    const QuantParams p = compute_qparams(v, scheme_of(4, QuantMode::asymmetric,
                                                       Granularity::per_tensor));
    CHECK(p.scale == 4.0f / 15.0f);
    CHECK(p.zero == -1.0f);
    CHECK(p.qmin == 0);
    CHECK(p.qmax == 15);
}

TEST_CASE("constant input degenerates to scale 1 and zero codes") {
    for (QuantMode mode : {QuantMode::symmetric, QuantMode::asymmetric}) {
        const std::vector<float> v(16, mode == QuantMode::symmetric ? 0.0f : 2.5f);
        QuantScheme s = scheme_of(4, mode, Granularity::per_tensor);
        const QuantParams p = compute_qparams(v, s);
        CHECK(p.scale == 1.0f);

        std::vector<int32_t> codes(v.size());
        quantize_group(v, p, codes);
        std::vector<float> back(v.size());
        dequantize_group(codes, p, back);
        for (size_t i = 0; i < v.size(); i++) {
            CHECK(codes[i] == 0);
            CHECK(back[i] == v[i]);
        }
    }
}

TEST_CASE("round half even ties") {
    // scale 1, zero 0: grid points at the integers, ties exactly at .5
    QuantParams p{1.0f, 0.0f, -7, 7};
    const std::vector<float> v{0.5f, 1.5f, 2.5f, -0.5f, -1.5f, 3.5f};
    std::vector<int32_t> codes(v.size());
    quantize_group(v, p, codes);
    CHECK(codes[0] == 0);
    CHECK(codes[1] == 2);
    CHECK(codes[2] == 2);
    CHECK(codes[3] == 0);
    CHECK(codes[4] == -2);
    CHECK(codes[5] == 4);
}

TEST_CASE("out of range values clamp to the grid edge") {
    QuantParams p{0.5f, -1.0f, 0, 15};
    const std::vector<float> v{-100.0f, 100.0f};
    std::vector<int32_t> codes(v.size());
    quantize_group(v, p, codes);
    CHECK(codes[0] == 0);
    CHECK(codes[1] == 15);
}

TEST_CASE("dequantize rejects out of range codes") {
    QuantParams p{1.0f, 0.0f, 0, 15};
    const std::vector<int32_t> codes{16};
    std::vector<float> out(1);
    CHECK_THROWS_AS(dequantize_group(codes, p, out), std::out_of_range);
}

TEST_CASE("rtn equals the exhaustive grid argmin") {
    for (int bits : {2, 3, 4, 8}) {
        for (QuantMode mode : {QuantMode::symmetric, QuantMode::asymmetric}) {
            const Matrix m = oracle::gaussian_matrix(24, 32, 500 + bits);
            const QuantizedTensor q =
                quantize_tensor(m, scheme_of(bits, mode, Granularity::per_row));
            const std::vector<int32_t> ref = oracle::grid_argmin_codes(m, q);
            CHECK(q.codes == ref);
        }
    }
}

TEST_CASE("roundtrip error bounded by half a scale step") {
    const Matrix m = oracle::gaussian_matrix(40, 50, 600);
    for (QuantMode mode : {QuantMode::symmetric, QuantMode::asymmetric}) {
        for (Granularity g : {Granularity::per_tensor, Granularity::per_row,
                              Granularity::block}) {
            QuantScheme s = scheme_of(4, mode, g, 10);
            const QuantizedTensor q = quantize_tensor(m, s);
            const Matrix back = dequantize_tensor(q);
            for (const QuantGroup & grp : q.groups) {
                for (size_t i = 0; i < grp.len; i++) {
                    const double err = std::abs((double) m.values()[grp.offset + i] -
                                                (double) back.values()[grp.offset + i]);
                    CHECK(err <= grp.params.scale / 2.0 + 1e-6);
                }
            }
        }
    }
}

TEST_CASE("partition_groups layouts") {
    QuantScheme s = scheme_of(4, QuantMode::asymmetric, Granularity::per_tensor);
    auto spans = partition_groups(3, 8, s, TensorRole::weight);
    REQUIRE(spans.size() == 1);
    CHECK(spans[0] == std::pair<size_t, size_t>{0, 24});

    s.granularity = Granularity::per_row;
    spans = partition_groups(3, 8, s, TensorRole::weight);
    REQUIRE(spans.size() == 3);
    CHECK(spans[1] == std::pair<size_t, size_t>{8, 8});

    s.granularity = Granularity::block;
    s.block_size = 4;
    spans = partition_groups(3, 8, s, TensorRole::weight);
    REQUIRE(spans.size() == 6);
    CHECK(spans[0] == std::pair<size_t, size_t>{0, 4});
    CHECK(spans[5] == std::pair<size_t, size_t>{20, 4});

    // groups tile [0, n) exactly once
    std::set<size_t> covered;
    for (auto [off, len] : spans) {
        for (size_t i = off; i < off + len; i++) {
            CHECK(covered.insert(i).second);
        }
    }
    CHECK(covered.size() == 24);
}

TEST_CASE("indivisible block throws with the dimensions in the message") {
    QuantScheme s = scheme_of(4, QuantMode::asymmetric, Granularity::block, 5);
    try {
        partition_groups(3, 8, s, TensorRole::weight);
        FAIL("expected IndivisibleBlockError");
    } catch (const IndivisibleBlockError & e) {
        const std::string msg = e.what();
        CHECK(msg.find("5") != std::string::npos);
        CHECK(msg.find("8") != std::string::npos);
    }
}

TEST_CASE("per_token is activation-only") {
    QuantScheme s = scheme_of(8, QuantMode::asymmetric, Granularity::per_token);
    CHECK_THROWS_AS(partition_groups(4, 8, s, TensorRole::weight), std::invalid_argument);
    const auto spans = partition_groups(4, 8, s, TensorRole::activation);
    CHECK(spans.size() == 4);
}

TEST_CASE("scheme validation") {
    QuantScheme s;
    s.bits = 1;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.bits = 9;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.bits = 16;
    CHECK_NOTHROW(s.validate());
    CHECK(s.passthrough());

    s.bits = 4;
    s.granularity = Granularity::block;
    s.block_size = 0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.block_size = 32;
    CHECK_NOTHROW(s.validate());

    s.param_storage_bits = 0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("scheme labels") {
    CHECK(scheme_of(4, QuantMode::asymmetric, Granularity::block, 32).label() ==
          "w4_asym_block32");
    CHECK(scheme_of(8, QuantMode::symmetric, Granularity::per_row).label() == "w8_sym_row");
    QuantScheme fp;
    fp.bits = 16;
    CHECK(fp.label() == "fp16");
}

TEST_CASE("effective bits") {
    // 4-bit asym block32 with 16-bit params: 4 + 2*16/32 = 5
    QuantScheme s = scheme_of(4, QuantMode::asymmetric, Granularity::block, 32);
    CHECK(effective_bits(s, 32) == 5.0);

    // symmetric stores only the scale
    s.mode = QuantMode::symmetric;
    CHECK(effective_bits(s, 32) == 4.5);

    s = scheme_of(8, QuantMode::asymmetric, Granularity::per_row);
    CHECK(effective_bits(s, 128) == 8.0 + 2.0 * 16.0 / 128.0);

    s = scheme_of(3, QuantMode::asymmetric, Granularity::block, 64);
    s.param_storage_bits = 32;
    CHECK(effective_bits(s, 64) == 4.0);
}

TEST_CASE("quantize_tensor rejects passthrough") {
    QuantScheme s;
    s.bits = 16;
    CHECK_THROWS_AS(quantize_tensor(Matrix(2, 2), s), std::invalid_argument);
}

TEST_CASE("fake_quant is passthrough at 16 bits and idempotent otherwise") {
    const Matrix m = oracle::gaussian_matrix(8, 16, 700);
    QuantScheme fp;
    fp.bits = 16;
    CHECK(max_abs_diff(fake_quant(m, fp, TensorRole::weight), m) == 0.0);

    QuantScheme s = scheme_of(4, QuantMode::asymmetric, Granularity::per_row);
    const Matrix once = fake_quant(m, s, TensorRole::weight);
    const Matrix twice = fake_quant(once, s, TensorRole::weight);
    CHECK(max_abs_diff(once, twice) == 0.0);
}

TEST_CASE("reconstruction_error is mean squared error") {
    Matrix m(1, 4, {0.0f, 1.0f, 2.0f, 3.0f});
    QuantScheme s = scheme_of(2, QuantMode::asymmetric, Granularity::per_row);
    const QuantizedTensor q = quantize_tensor(m, s);
    const Matrix back = dequantize_tensor(q);
    double want = 0.0;
    for (size_t i = 0; i < 4; i++) {
        const double d = (double) m.values()[i] - (double) back.values()[i];
        want += d * d;
    }
    want /= 4.0;
    CHECK(reconstruction_error(m, q) == doctest::Approx(want).epsilon(1e-12));
}
