#pragma once

#include "ptq/algos.hpp"
#include "ptq/config.hpp"
#include "ptq/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ptq {

struct GranSpec {
    Granularity granularity = Granularity::per_row;
    int block_size = 0;
    std::string label; // "per-row", "per-tensor", "block32", ...
};

struct ActSpec {
    std::optional<QuantScheme> scheme; // empty = full-precision activations
    std::string label;                 // "none", "token:8:sym", "block32:8:asym"
};

// The sweep grid plus everything needed to produce its baseline model:
// the toy model is trained per seed, evaluated in full precision, then each
// grid point quantizes it and measures perplexity on the held-out tail.
struct SweepConfig {
    ToyModelConfig model;
    TrainOptions train;
    size_t calib_samples = 16;
    size_t calib_seq = 64;
    size_t eval_tokens = 8192;
    int param_storage_bits = 16;

    std::vector<PtqMethod> methods;
    std::vector<int> bits;
    std::vector<QuantMode> modes;
    std::vector<GranSpec> grans;
    std::vector<ActSpec> acts;
    std::vector<uint64_t> seeds;

    OptimizerOptions optimizer;
    GptqOptions gptq_opts;

    std::string output_dir = "sweep_out";

    static SweepConfig from_config(const ConfigFile & cfg);
    void validate() const;
};

GranSpec parse_granularity(const std::string & label);
ActSpec parse_activation(const std::string & label);

struct SweepRow {
    std::string method;
    int bits = 0;
    std::string mode;
    std::string gran;
    std::string act;
    uint64_t seed = 0;

    bool ok = false;
    std::string error; // set on skipped/failed grid points

    double ppl = 0.0;
    double delta_ppl = 0.0;
    std::string cls;
    double eff_bits = 0.0;
    double model_bytes = 0.0; // 16-bit-equivalent accounting
    double wall_time = 0.0;   // seconds; reported in JSON only so CSV stays reproducible
};

struct SweepOutput {
    std::vector<SweepRow> rows;                         // grid order
    std::vector<std::pair<uint64_t, double>> baselines; // (seed, full-precision ppl)
    double fp16_bytes = 0.0;
};

SweepOutput run_sweep(const SweepConfig & cfg, std::span<const int32_t> corpus);

// columns: method,bits,mode,granularity,activation,seed,ppl,delta_ppl,class,
//          eff_bits,model_bytes  (failed rows carry N/A in the value columns)
std::string sweep_csv(const SweepOutput & out);
std::string sweep_json(const SweepOutput & out);

// argmin-by-ppl over methods per (bits, mode, granularity, activation, seed)
std::string best_method_csv(const SweepOutput & out);

struct ParetoPoint {
    double model_bytes = 0.0;
    double ppl = 0.0;
    std::string label;
};

// Non-dominated subset (no other point with <= bytes and <= ppl, one strict),
// sorted by bytes then ppl then label. Duplicate points are all kept.
std::vector<ParetoPoint> pareto_frontier(std::vector<ParetoPoint> points);

std::vector<ParetoPoint> sweep_pareto_points(const SweepOutput & out);
std::string pareto_csv(const std::vector<ParetoPoint> & points);

} // namespace ptq
