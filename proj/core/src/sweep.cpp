#include "ptq/sweep.hpp"

#include "ptq/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <stdexcept>

using nlohmann::json;

namespace ptq {

namespace {

std::string fmt(double v, const char * spec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string mode_label(QuantMode m) {
    return m == QuantMode::symmetric ? "sym" : "asym";
}

QuantMode mode_from_label(const std::string & s) {
    if (s == "sym") return QuantMode::symmetric;
    if (s == "asym") return QuantMode::asymmetric;
    throw std::invalid_argument("sweep: unknown mode " + s);
}

// weighted mean effective bits across the plan's quantized linears
double aggregate_eff_bits(const ToyModel & model, const QuantizationPlan & plan) {
    double bits = 0.0;
    double elems = 0.0;
    for (const std::string & name : linear_names(model.config)) {
        const LayerQuantSpec spec = plan.spec_for(name);
        if (spec.weight_scheme.passthrough()) {
            continue;
        }
        const Matrix & w = linear_by_name(model, name).w;
        const auto spans =
            partition_groups(w.rows(), w.cols(), spec.weight_scheme, TensorRole::weight);
        const double n = (double) w.size();
        bits += n * effective_bits(spec.weight_scheme, spans.front().second);
        elems += n;
    }
    return elems > 0.0 ? bits / elems : 0.0;
}

} // namespace

GranSpec parse_granularity(const std::string & label) {
    GranSpec g;
    g.label = label;
    if (label == "per-row") {
        g.granularity = Granularity::per_row;
        return g;
    }
    if (label == "per-tensor") {
        g.granularity = Granularity::per_tensor;
        return g;
    }
    if (label.rfind("block", 0) == 0) {
        g.granularity = Granularity::block;
        try {
            size_t used = 0;
            g.block_size = std::stoi(label.substr(5), &used);
            if (used == label.size() - 5 && g.block_size > 0) {
                return g;
            }
        } catch (const std::exception &) {
        }
    }
    throw std::invalid_argument("sweep: unknown granularity '" + label +
                                "' (want per-row, per-tensor, or block<k>)");
}

ActSpec parse_activation(const std::string & label) {
    ActSpec a;
    a.label = label;
    if (label == "none") {
        return a;
    }
    // token:<bits>:<sym|asym> or block<k>:<bits>:<sym|asym>
    const auto c1 = label.find(':');
    const auto c2 = label.find(':', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
        throw std::invalid_argument("sweep: unknown activation '" + label +
                                    "' (want none, token:<bits>:<mode>, block<k>:<bits>:<mode>)");
    }
    const std::string gran = label.substr(0, c1);
    const std::string bits = label.substr(c1 + 1, c2 - c1 - 1);
    const std::string mode = label.substr(c2 + 1);

    QuantScheme s;
    s.bits = std::stoi(bits);
    s.mode = mode_from_label(mode);
    if (gran == "token") {
        s.granularity = Granularity::per_token;
    } else if (gran.rfind("block", 0) == 0) {
        s.granularity = Granularity::block;
        s.block_size = std::stoi(gran.substr(5));
    } else {
        throw std::invalid_argument("sweep: unknown activation granularity '" + gran + "'");
    }
    s.validate();
    a.scheme = s;
    return a;
}

SweepConfig SweepConfig::from_config(const ConfigFile & cfg) {
    SweepConfig out;

    out.model.vocab_size = (size_t) cfg.get_int("model", "vocab_size", 256);
    out.model.d_model = (size_t) cfg.get_int("model", "d_model", 128);
    out.model.n_heads = (size_t) cfg.get_int("model", "n_heads", 4);
    out.model.n_layers = (size_t) cfg.get_int("model", "n_layers", 2);
    out.model.d_ff = (size_t) cfg.get_int("model", "d_ff", (int64_t) (4 * out.model.d_model));
    out.model.max_seq_len = (size_t) cfg.get_int("model", "max_seq_len", 64);
    out.model.validate();

    out.train.steps = (size_t) cfg.get_int("train", "steps", 500);
    out.train.lr = cfg.get_real("train", "lr", 1e-3);
    out.train.batch_size = (size_t) cfg.get_int("train", "batch_size", 2);
    out.train.linear_decay = cfg.get_bool("train", "linear_decay", true);

    out.calib_samples = (size_t) cfg.get_int("calibration", "samples", 16);
    out.calib_seq = (size_t) cfg.get_int("calibration", "seq_len", 64);

    out.eval_tokens = (size_t) cfg.get_int("sweep", "eval_tokens", 8192);
    out.param_storage_bits = (int) cfg.get_int("sweep", "param_storage_bits", 16);

    for (const std::string & m : cfg.get_list("sweep", "methods")) {
        out.methods.push_back(ptq_method_from_string(m));
    }
    for (int64_t b : cfg.get_int_list("sweep", "bits")) {
        out.bits.push_back((int) b);
    }
    if (cfg.has("sweep", "modes")) {
        for (const std::string & m : cfg.get_list("sweep", "modes")) {
            out.modes.push_back(mode_from_label(m));
        }
    } else {
        out.modes.push_back(QuantMode::asymmetric);
    }
    for (const std::string & g : cfg.get_list("sweep", "granularities")) {
        out.grans.push_back(parse_granularity(g));
    }
    if (cfg.has("sweep", "activations")) {
        for (const std::string & a : cfg.get_list("sweep", "activations")) {
            out.acts.push_back(parse_activation(a));
        }
    } else {
        out.acts.push_back(parse_activation("none"));
    }
    for (int64_t s : cfg.get_int_list("sweep", "seeds")) {
        out.seeds.push_back((uint64_t) s);
    }

    if (cfg.has("optimizer", "learning_rates")) {
        out.optimizer.learning_rates = cfg.get_real_list("optimizer", "learning_rates");
    }
    out.optimizer.iterations = (size_t) cfg.get_int("optimizer", "iterations", 50);
    out.optimizer.batch_size = (size_t) cfg.get_int("optimizer", "batch_size", 1);
    out.optimizer.schedule = cfg.get_str("optimizer", "schedule", "linear_decay") == "constant"
                                 ? OptimizerOptions::Schedule::constant
                                 : OptimizerOptions::Schedule::linear_decay;

    out.gptq_opts.damp_ratio = cfg.get_real("gptq", "damp_ratio", 0.01);

    out.output_dir = cfg.get_str("sweep", "output_dir", "sweep_out");

    out.validate();
    return out;
}

void SweepConfig::validate() const {
    model.validate();
    if (methods.empty() || bits.empty() || modes.empty() || grans.empty() || acts.empty() ||
        seeds.empty()) {
        throw std::invalid_argument("sweep: every grid axis needs at least one entry");
    }
    for (int b : bits) {
        if (b < 2 || b > 8) {
            throw std::invalid_argument("sweep: bits must lie in [2,8]");
        }
    }
    if (eval_tokens < 2) {
        throw std::invalid_argument("sweep: eval_tokens must be at least 2");
    }
}

SweepOutput run_sweep(const SweepConfig & cfg, std::span<const int32_t> corpus) {
    cfg.validate();
    if (corpus.size() < cfg.eval_tokens + cfg.model.max_seq_len + 1) {
        throw std::invalid_argument("sweep: corpus too short for training plus eval reserve");
    }
    const std::span<const int32_t> train_slice = corpus.first(corpus.size() - cfg.eval_tokens);
    const std::span<const int32_t> eval_slice = corpus.last(cfg.eval_tokens);

    SweepOutput out;
    bool bytes_set = false;

    for (uint64_t seed : cfg.seeds) {
        ToyModelConfig mc = cfg.model;
        mc.seed = seed;
        TrainOptions topts = cfg.train;
        topts.seed = seed;

        const TrainResult tr = train_toy(mc, train_slice, topts);
        const ToyModel & base = tr.model;
        const double base_ppl = perplexity(base, eval_slice);
        out.baselines.emplace_back(seed, base_ppl);
        if (!bytes_set) {
            out.fp16_bytes = model_bytes(base).fp16_total;
            bytes_set = true;
        }

        const CalibrationSet calib =
            capture_calibration(base, train_slice, cfg.calib_samples, cfg.calib_seq, seed);

        for (PtqMethod method : cfg.methods) {
            for (int bits : cfg.bits) {
                for (QuantMode mode : cfg.modes) {
                    for (const GranSpec & gran : cfg.grans) {
                        for (const ActSpec & act : cfg.acts) {
                            SweepRow row;
                            row.method = to_string(method);
                            row.bits = bits;
                            row.mode = mode_label(mode);
                            row.gran = gran.label;
                            row.act = act.label;
                            row.seed = seed;

                            const auto t0 = std::chrono::steady_clock::now();
                            try {
                                QuantScheme scheme;
                                scheme.bits = bits;
                                scheme.mode = mode;
                                scheme.granularity = gran.granularity;
                                scheme.block_size = gran.block_size;
                                scheme.param_storage_bits = cfg.param_storage_bits;
                                scheme.validate();

                                QuantizationPlan plan;
                                plan.default_spec.weight_scheme = scheme;
                                plan.default_spec.method = method;
                                plan.act_scheme = act.scheme;

                                OptimizerOptions oopts = cfg.optimizer;
                                oopts.seed = seed;

                                QuantizeResult qr =
                                    quantize_model(base, plan, calib, cfg.gptq_opts, oopts);

                                QuantizationPlan eval_plan;
                                eval_plan.default_spec.weight_scheme.bits = 16;
                                eval_plan.act_scheme = act.scheme;

                                row.ppl = perplexity(qr.model, eval_slice, &eval_plan);
                                row.delta_ppl = row.ppl - base_ppl;
                                row.cls = to_string(classify_delta(row.delta_ppl));
                                row.eff_bits = aggregate_eff_bits(base, plan);
                                row.model_bytes = model_bytes(base, &plan).fp16_total;
                                row.ok = true;
                            } catch (const std::exception & e) {
                                row.error = e.what();
                            }
                            row.wall_time = std::chrono::duration<double>(
                                                std::chrono::steady_clock::now() - t0)
                                                .count();
                            out.rows.push_back(std::move(row));
                        }
                    }
                }
            }
        }
    }
    return out;
}

std::string sweep_csv(const SweepOutput & out) {
    std::string csv =
        "method,bits,mode,granularity,activation,seed,ppl,delta_ppl,class,eff_bits,model_bytes\n";
    for (const SweepRow & r : out.rows) {
        csv += r.method + "," + std::to_string(r.bits) + "," + r.mode + "," + r.gran + "," +
               r.act + "," + std::to_string(r.seed) + ",";
        if (r.ok) {
            csv += fmt(r.ppl, "%.6f") + "," + fmt(r.delta_ppl, "%.6f") + "," + r.cls + "," +
                   fmt(r.eff_bits, "%.4f") + "," + fmt(r.model_bytes, "%.1f");
        } else {
            csv += "N/A,N/A,N/A,N/A,N/A";
        }
        csv += "\n";
    }
    return csv;
}

std::string sweep_json(const SweepOutput & out) {
    json rows = json::array();
    for (const SweepRow & r : out.rows) {
        json row{{"method", r.method}, {"bits", r.bits},         {"mode", r.mode},
                 {"granularity", r.gran}, {"activation", r.act}, {"seed", r.seed},
                 {"ok", r.ok},            {"wall_time", r.wall_time}};
        if (r.ok) {
            row["ppl"] = r.ppl;
            row["delta_ppl"] = r.delta_ppl;
            row["class"] = r.cls;
            row["eff_bits"] = r.eff_bits;
            row["model_bytes"] = r.model_bytes;
        } else {
            row["error"] = r.error;
        }
        rows.push_back(std::move(row));
    }
    json baselines = json::array();
    for (const auto & [seed, ppl] : out.baselines) {
        baselines.push_back({{"seed", seed}, {"ppl", ppl}});
    }
    return json{{"baselines", baselines}, {"fp16_bytes", out.fp16_bytes}, {"rows", rows}}
        .dump(2);
}

std::string best_method_csv(const SweepOutput & out) {
    std::string csv = "bits,mode,granularity,activation,seed,best_method,ppl\n";
    // first minimal-ppl method per setting, preserving grid order
    std::vector<std::tuple<int, std::string, std::string, std::string, uint64_t>> keys;
    for (const SweepRow & r : out.rows) {
        if (!r.ok) {
            continue;
        }
        const auto key = std::make_tuple(r.bits, r.mode, r.gran, r.act, r.seed);
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
            keys.push_back(key);
        }
    }
    for (const auto & key : keys) {
        const SweepRow * best = nullptr;
        for (const SweepRow & r : out.rows) {
            if (!r.ok ||
                std::make_tuple(r.bits, r.mode, r.gran, r.act, r.seed) != key) {
                continue;
            }
            if (best == nullptr || r.ppl < best->ppl) {
                best = &r;
            }
        }
        csv += std::to_string(std::get<0>(key)) + "," + std::get<1>(key) + "," +
               std::get<2>(key) + "," + std::get<3>(key) + "," +
               std::to_string(std::get<4>(key)) + "," + best->method + "," +
               fmt(best->ppl, "%.6f") + "\n";
    }
    return csv;
}

std::vector<ParetoPoint> pareto_frontier(std::vector<ParetoPoint> points) {
    std::sort(points.begin(), points.end(), [](const ParetoPoint & a, const ParetoPoint & b) {
        if (a.model_bytes != b.model_bytes) return a.model_bytes < b.model_bytes;
        if (a.ppl != b.ppl) return a.ppl < b.ppl;
        return a.label < b.label;
    });
    std::vector<ParetoPoint> frontier;
    double best_ppl = 0.0;
    double best_bytes = 0.0;
    for (const ParetoPoint & p : points) {
        if (frontier.empty() || p.ppl < best_ppl ||
            (p.ppl == best_ppl && p.model_bytes == best_bytes)) {
            if (frontier.empty() || p.ppl < best_ppl) {
                best_ppl = p.ppl;
                best_bytes = p.model_bytes;
            }
            frontier.push_back(p);
        }
    }
    return frontier;
}

std::vector<ParetoPoint> sweep_pareto_points(const SweepOutput & out) {
    std::vector<ParetoPoint> points;
    for (const auto & [seed, ppl] : out.baselines) {
        points.push_back({out.fp16_bytes, ppl, "fp16_seed" + std::to_string(seed)});
    }
    for (const SweepRow & r : out.rows) {
        if (!r.ok) {
            continue;
        }
        points.push_back({r.model_bytes, r.ppl,
                          r.method + "_w" + std::to_string(r.bits) + "_" + r.mode + "_" +
                              r.gran + "_" + r.act + "_seed" + std::to_string(r.seed)});
    }
    return points;
}

std::string pareto_csv(const std::vector<ParetoPoint> & points) {
    std::string csv = "model_bytes,ppl,label\n";
    for (const ParetoPoint & p : points) {
        csv += fmt(p.model_bytes, "%.1f") + "," + fmt(p.ppl, "%.6f") + "," + p.label + "\n";
    }
    return csv;
}

} // namespace ptq
