#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "ptq/sweep.hpp"

#include <json.hpp>

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

using namespace ptq;

namespace {

std::vector<std::string> lines_of(const std::string & text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        out.push_back(line);
    }
    return out;
}

SweepConfig tiny_sweep_config() {
    SweepConfig cfg;
    cfg.model.vocab_size = 64;
    cfg.model.d_model = 16;
    cfg.model.n_heads = 2;
    cfg.model.n_layers = 1;
    cfg.model.d_ff = 32;
    cfg.model.max_seq_len = 8;
    cfg.train.steps = 4;
    cfg.train.batch_size = 1;
    cfg.calib_samples = 2;
    cfg.calib_seq = 8;
    cfg.eval_tokens = 64;
    cfg.methods = {PtqMethod::rtn};
    cfg.bits = {4, 8};
    cfg.modes = {QuantMode::asymmetric};
    cfg.grans = {parse_granularity("per-row"), parse_granularity("block5")};
    cfg.acts = {parse_activation("none")};
    cfg.seeds = {3, 4};
    return cfg;
}

} // namespace

TEST_CASE("parse_granularity labels") {
    CHECK(parse_granularity("per-row").granularity == Granularity::per_row);
    CHECK(parse_granularity("per-tensor").granularity == Granularity::per_tensor);
    const GranSpec b = parse_granularity("block32");
    CHECK(b.granularity == Granularity::block);
    CHECK(b.block_size == 32);
    CHECK(b.label == "block32");

    for (const char * bad : {"row", "block", "block0", "block-4", "block8x", ""}) {
        try {
            parse_granularity(bad);
            FAIL("expected invalid_argument for ", bad);
        } catch (const std::invalid_argument & e) {
            CHECK(std::string(e.what()).find(bad) != std::string::npos);
        }
    }
}

TEST_CASE("parse_activation labels") {
    CHECK(!parse_activation("none").scheme.has_value());

    const ActSpec tok = parse_activation("token:8:asym");
    REQUIRE(tok.scheme.has_value());
    CHECK(tok.scheme->bits == 8);
    CHECK(tok.scheme->mode == QuantMode::asymmetric);
    CHECK(tok.scheme->granularity == Granularity::per_token);

    const ActSpec blk = parse_activation("block16:4:sym");
    REQUIRE(blk.scheme.has_value());
    CHECK(blk.scheme->bits == 4);
    CHECK(blk.scheme->mode == QuantMode::symmetric);
    CHECK(blk.scheme->granularity == Granularity::block);
    CHECK(blk.scheme->block_size == 16);

    CHECK_THROWS_AS(parse_activation("junk"), std::invalid_argument);
    CHECK_THROWS_AS(parse_activation("token:8"), std::invalid_argument);
    CHECK_THROWS_AS(parse_activation("row:8:asym"), std::invalid_argument);
    CHECK_THROWS_AS(parse_activation("token:8:weird"), std::invalid_argument);
    CHECK_THROWS_AS(parse_activation("token:9:asym"), std::invalid_argument);
}

TEST_CASE("SweepConfig::from_config reads every section") {
    const char * text = R"(
[model]
vocab_size = 64
d_model = 16
n_heads = 2
n_layers = 1
d_ff = 32
max_seq_len = 8

[train]
steps = 7
lr = 0.002
batch_size = 3
linear_decay = false

[calibration]
samples = 4
seq_len = 8

[sweep]
eval_tokens = 128
param_storage_bits = 32
methods = rtn, gptq
bits = 4, 8
modes = sym, asym
granularities = per-row, block8
activations = none, token:8:asym
seeds = 1, 2
output_dir = out_dir_x

[optimizer]
learning_rates = 0.001, 0.0001
iterations = 9
batch_size = 2
schedule = constant

[gptq]
damp_ratio = 0.05
)";
    const SweepConfig cfg = SweepConfig::from_config(ConfigFile::parse_string(text));
    CHECK(cfg.model.vocab_size == 64);
    CHECK(cfg.model.d_model == 16);
    CHECK(cfg.model.d_ff == 32);
    CHECK(cfg.train.steps == 7);
    CHECK(cfg.train.lr == 0.002);
    CHECK(cfg.train.batch_size == 3);
    CHECK(!cfg.train.linear_decay);
    CHECK(cfg.calib_samples == 4);
    CHECK(cfg.calib_seq == 8);
    CHECK(cfg.eval_tokens == 128);
    CHECK(cfg.param_storage_bits == 32);
    CHECK(cfg.methods == std::vector<PtqMethod>{PtqMethod::rtn, PtqMethod::gptq});
    CHECK(cfg.bits == std::vector<int>{4, 8});
    CHECK(cfg.modes ==
          std::vector<QuantMode>{QuantMode::symmetric, QuantMode::asymmetric});
    REQUIRE(cfg.grans.size() == 2);
    CHECK(cfg.grans[1].block_size == 8);
    REQUIRE(cfg.acts.size() == 2);
    CHECK(!cfg.acts[0].scheme.has_value());
    CHECK(cfg.acts[1].scheme->granularity == Granularity::per_token);
    CHECK(cfg.seeds == std::vector<uint64_t>{1, 2});
    CHECK(cfg.output_dir == "out_dir_x");
    CHECK(cfg.optimizer.learning_rates == std::vector<double>{0.001, 0.0001});
    CHECK(cfg.optimizer.iterations == 9);
    CHECK(cfg.optimizer.batch_size == 2);
    CHECK(cfg.optimizer.schedule == OptimizerOptions::Schedule::constant);
    CHECK(cfg.gptq_opts.damp_ratio == 0.05);
}

TEST_CASE("SweepConfig::from_config defaults") {
    const char * text = R"(
[sweep]
methods = rtn
bits = 8
granularities = per-row
seeds = 5
)";
    const SweepConfig cfg = SweepConfig::from_config(ConfigFile::parse_string(text));
    CHECK(cfg.model.d_model == 128);
    CHECK(cfg.train.steps == 500);
    CHECK(cfg.calib_samples == 16);
    CHECK(cfg.eval_tokens == 8192);
    CHECK(cfg.param_storage_bits == 16);
    CHECK(cfg.modes == std::vector<QuantMode>{QuantMode::asymmetric});
    REQUIRE(cfg.acts.size() == 1);
    CHECK(cfg.acts[0].label == "none");
    CHECK(cfg.output_dir == "sweep_out");
    CHECK(cfg.optimizer.iterations == 50);
    CHECK(cfg.optimizer.schedule == OptimizerOptions::Schedule::linear_decay);
    CHECK(cfg.gptq_opts.damp_ratio == 0.01);
}

TEST_CASE("SweepConfig::validate rejects bad grids") {
    SweepConfig cfg = tiny_sweep_config();
    CHECK_NOTHROW(cfg.validate());

    SweepConfig no_methods = cfg;
    no_methods.methods.clear();
    CHECK_THROWS_AS(no_methods.validate(), std::invalid_argument);

    SweepConfig bad_bits = cfg;
    bad_bits.bits = {9};
    CHECK_THROWS_AS(bad_bits.validate(), std::invalid_argument);

    SweepConfig bad_eval = cfg;
    bad_eval.eval_tokens = 1;
    CHECK_THROWS_AS(bad_eval.validate(), std::invalid_argument);
}

TEST_CASE("run_sweep covers the grid and reports failures per row") {
    const SweepConfig cfg = tiny_sweep_config();
    const auto corpus = oracle::random_tokens(512, 99, 64);
    const SweepOutput out = run_sweep(cfg, corpus);

    // 2 seeds x 1 method x 2 bits x 1 mode x 2 granularities x 1 activation
    REQUIRE(out.rows.size() == 8);
    REQUIRE(out.baselines.size() == 2);
    CHECK(out.baselines[0].first == 3);
    CHECK(out.baselines[1].first == 4);
    CHECK(out.fp16_bytes > 0.0);

    // row order: seed-major, then bits, then granularity
    CHECK(out.rows[0].seed == 3);
    CHECK(out.rows[0].bits == 4);
    CHECK(out.rows[0].gran == "per-row");
    CHECK(out.rows[1].gran == "block5");
    CHECK(out.rows[2].bits == 8);
    CHECK(out.rows[4].seed == 4);

    for (const SweepRow & r : out.rows) {
        CHECK(r.method == "rtn");
        CHECK(r.mode == "asym");
        CHECK(r.act == "none");
        if (r.gran == "block5") {
            // 5 does not tile the 16-wide rows
            CHECK(!r.ok);
            CHECK(!r.error.empty());
        } else {
            REQUIRE(r.ok);
            CHECK(r.ppl > 0.0);
            const double base =
                r.seed == 3 ? out.baselines[0].second : out.baselines[1].second;
            CHECK(r.delta_ppl == r.ppl - base);
            CHECK(r.cls == to_string(classify_delta(r.delta_ppl)));
            CHECK(r.model_bytes < out.fp16_bytes);
        }
    }

    // per-row asym at 16-bit params: len-16 rows cost bits+2, fc2's len-32 rows
    // bits+1; weighting 1536 elements at +2 against 512 at +1 gives +1.75
    CHECK(out.rows[0].eff_bits == doctest::Approx(5.75).epsilon(1e-12));
    CHECK(out.rows[2].eff_bits == doctest::Approx(9.75).epsilon(1e-12));

    // 2048 weight elements drop from 16 bits to the effective width
    const double w4_bytes = out.fp16_bytes - 2048.0 * (16.0 - 5.75) / 8.0;
    CHECK(out.rows[0].model_bytes == doctest::Approx(w4_bytes).epsilon(1e-12));

    SUBCASE("csv formatting") {
        const std::string csv = sweep_csv(out);
        const auto lines = lines_of(csv);
        REQUIRE(lines.size() == 9);
        CHECK(lines[0] ==
              "method,bits,mode,granularity,activation,seed,ppl,delta_ppl,class,"
              "eff_bits,model_bytes");
        CHECK(lines[2] == "rtn,4,asym,block5,none,3,N/A,N/A,N/A,N/A,N/A");
        for (const std::string & line : lines) {
            CHECK(std::count(line.begin(), line.end(), ',') == 10);
        }
        // ok rows print fixed-precision numbers
        CHECK(lines[1].find("rtn,4,asym,per-row,none,3,") == 0);
        CHECK(lines[1].find('.') != std::string::npos);
    }

    SUBCASE("json mirrors the rows and keeps errors") {
        const auto j = nlohmann::json::parse(sweep_json(out));
        REQUIRE(j["rows"].size() == 8);
        CHECK(j["baselines"].size() == 2);
        CHECK(j["fp16_bytes"].get<double>() == out.fp16_bytes);
        CHECK(j["rows"][0]["ok"].get<bool>());
        CHECK(j["rows"][0]["ppl"].get<double>() == out.rows[0].ppl);
        CHECK(j["rows"][0].contains("wall_time"));
        CHECK(!j["rows"][1]["ok"].get<bool>());
        CHECK(!j["rows"][1]["error"].get<std::string>().empty());
        CHECK(!j["rows"][1].contains("ppl"));
    }

    SUBCASE("pareto points skip failed rows and label the baselines") {
        const auto points = sweep_pareto_points(out);
        REQUIRE(points.size() == 2 + 4);
        CHECK(points[0].label == "fp16_seed3");
        CHECK(points[0].model_bytes == out.fp16_bytes);
        CHECK(points[2].label == "rtn_w4_asym_per-row_none_seed3");
    }
}

TEST_CASE("run_sweep rejects a corpus shorter than the eval reserve") {
    const SweepConfig cfg = tiny_sweep_config();
    const auto corpus = oracle::random_tokens(cfg.eval_tokens + 4, 1, 64);
    CHECK_THROWS_AS(run_sweep(cfg, corpus), std::invalid_argument);
}

TEST_CASE("best_method_csv picks the lowest perplexity per setting") {
    SweepOutput out;
    auto add = [&](const char * method, double ppl, bool ok = true, int bits = 4) {
        SweepRow r;
        r.method = method;
        r.bits = bits;
        r.mode = "asym";
        r.gran = "per-row";
        r.act = "none";
        r.seed = 1;
        r.ok = ok;
        r.ppl = ppl;
        out.rows.push_back(r);
    };
    add("rtn", 10.0);
    add("gptq", 8.0);
    add("zq-local", 8.0); // tie keeps the earlier method
    add("zq-global", 1.0, false);
    add("rtn", 7.5, true, 8);

    const auto lines = lines_of(best_method_csv(out));
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "bits,mode,granularity,activation,seed,best_method,ppl");
    CHECK(lines[1] == "4,asym,per-row,none,1,gptq,8.000000");
    CHECK(lines[2] == "8,asym,per-row,none,1,rtn,7.500000");
}

TEST_CASE("pareto_frontier keeps the non-dominated set") {
    auto pts = [](std::initializer_list<std::pair<double, double>> xs) {
        std::vector<ParetoPoint> v;
        for (const auto & [b, p] : xs) {
            v.push_back({b, p, ""});
        }
        return v;
    };

    SUBCASE("worked example") {
        const auto f = pareto_frontier(pts({{10, 5}, {8, 6}, {9, 7}}));
        REQUIRE(f.size() == 2);
        CHECK(f[0].model_bytes == 8);
        CHECK(f[0].ppl == 6);
        CHECK(f[1].model_bytes == 10);
        CHECK(f[1].ppl == 5);
    }

    SUBCASE("duplicates survive, weakly dominated points fall") {
        const auto f = pareto_frontier(pts({{8, 6}, {8, 6}, {9, 6}, {8, 7}}));
        REQUIRE(f.size() == 2);
        CHECK(f[0].model_bytes == 8);
        CHECK(f[1].model_bytes == 8);
    }

    SUBCASE("matches the quadratic oracle on random grids") {
        ptq::Rng rng(7);
        for (int trial = 0; trial < 50; trial++) {
            std::vector<ParetoPoint> points;
            std::vector<oracle::Point> ref;
            const size_t n = 1 + rng.index(24);
            for (size_t i = 0; i < n; i++) {
                const double b = (double) (1 + rng.index(8));
                const double p = (double) (1 + rng.index(8));
                points.push_back({b, p, "p" + std::to_string(i)});
                ref.push_back({b, p});
            }
            auto got = pareto_frontier(points);
            auto want = oracle::pareto(ref);
            auto key = [](double b, double p) {
                return std::make_pair(b, p);
            };
            std::vector<std::pair<double, double>> gk, wk;
            for (const auto & p : got) gk.push_back(key(p.model_bytes, p.ppl));
            for (const auto & p : want) wk.push_back(key(p.bytes, p.ppl));
            std::sort(gk.begin(), gk.end());
            std::sort(wk.begin(), wk.end());
            CHECK(gk == wk);
        }
    }
}

TEST_CASE("pareto_csv prints bytes, perplexity and label") {
    const std::vector<ParetoPoint> points{{8.0, 6.0, "a"}, {10.0, 5.0, "b"}};
    CHECK(pareto_csv(points) == "model_bytes,ppl,label\n"
                                "8.0,6.000000,a\n"
                                "10.0,5.000000,b\n");
}
