#include "ptq/algos.hpp"
#include "ptq/config.hpp"
#include "ptq/errors.hpp"
#include "ptq/io.hpp"
#include "ptq/model.hpp"
#include "ptq/packing.hpp"
#include "ptq/rng.hpp"
#include "ptq/sweep.hpp"
#include "ptq/threading.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

using nlohmann::json;

namespace {

std::vector<int32_t> load_corpus(const std::string & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open corpus: " + path);
    }
    std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::vector<int32_t> tokens(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        tokens[i] = (int32_t) (unsigned char) raw[i];
    }
    return tokens;
}

std::string read_text(const std::string & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open file: " + path);
    }
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_text(const std::string & path, const std::string & text) {
    std::ofstream f(path, std::ios::binary);
    if (!f || !(f << text)) {
        throw std::runtime_error("cannot write file: " + path);
    }
}

// --set section.key=value
void apply_overrides(ptq::ConfigFile & cfg, const std::vector<std::string> & sets) {
    for (const std::string & s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("--set wants section.key=value, got: " + s);
        }
        const std::string lhs = s.substr(0, eq);
        const std::string value = s.substr(eq + 1);
        const auto dot = lhs.find('.');
        const std::string section = dot == std::string::npos ? "" : lhs.substr(0, dot);
        const std::string key = dot == std::string::npos ? lhs : lhs.substr(dot + 1);
        cfg.set(section, key, value);
    }
}

ptq::ToyModelConfig model_from_config(const ptq::ConfigFile & cfg, uint64_t seed) {
    ptq::ToyModelConfig mc;
    mc.vocab_size = (size_t) cfg.get_int("model", "vocab_size", 256);
    mc.d_model = (size_t) cfg.get_int("model", "d_model", 128);
    mc.n_heads = (size_t) cfg.get_int("model", "n_heads", 4);
    mc.n_layers = (size_t) cfg.get_int("model", "n_layers", 2);
    mc.d_ff = (size_t) cfg.get_int("model", "d_ff", (int64_t) (4 * mc.d_model));
    mc.max_seq_len = (size_t) cfg.get_int("model", "max_seq_len", 64);
    mc.seed = seed;
    mc.validate();
    return mc;
}

int cmd_train(const std::string & config_path, const std::vector<std::string> & sets,
              const std::string & corpus_path, const std::string & out_dir, uint64_t seed) {
    ptq::ConfigFile cfg = config_path.empty() ? ptq::ConfigFile::parse_string("")
                                              : ptq::ConfigFile::parse_file(config_path);
    apply_overrides(cfg, sets);

    const ptq::ToyModelConfig mc = model_from_config(cfg, seed);
    ptq::TrainOptions topts;
    topts.steps = (size_t) cfg.get_int("train", "steps", (int64_t) topts.steps);
    topts.lr = cfg.get_real("train", "lr", topts.lr);
    topts.batch_size = (size_t) cfg.get_int("train", "batch_size", (int64_t) topts.batch_size);
    topts.linear_decay = cfg.get_bool("train", "linear_decay", topts.linear_decay);
    topts.seed = seed;

    const std::vector<int32_t> corpus = load_corpus(corpus_path);
    const ptq::TrainResult result = ptq::train_toy(mc, corpus, topts);
    ptq::save_checkpoint(result.model, out_dir);

    std::cout << json{{"out", out_dir},
                      {"steps", topts.steps},
                      {"final_loss", result.final_loss}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_quantize(const std::string & ckpt_dir, const std::string & plan_path,
                 const std::string & out_dir, const std::string & corpus_path,
                 const std::string & report_path, size_t samples, size_t seq_len,
                 double damp_ratio, size_t iterations, uint64_t seed) {
    const ptq::Checkpoint ck = ptq::load_checkpoint(ckpt_dir);
    const ptq::QuantizationPlan plan = ptq::plan_from_json(read_text(plan_path));
    plan.validate();

    bool need_calib = false;
    for (const std::string & name : ptq::linear_names(ck.model.config)) {
        const ptq::LayerQuantSpec spec = plan.spec_for(name);
        if (!spec.weight_scheme.passthrough() && spec.method != ptq::PtqMethod::rtn) {
            need_calib = true;
        }
    }

    ptq::CalibrationSet calib;
    if (!corpus_path.empty()) {
        if (seq_len == 0) {
            seq_len = std::min<size_t>(64, ck.model.config.max_seq_len);
        }
        const std::vector<int32_t> corpus = load_corpus(corpus_path);
        calib = ptq::capture_calibration(ck.model, corpus, samples, seq_len, seed);
    } else if (need_calib) {
        throw std::invalid_argument("plan uses calibration-based methods; pass --corpus");
    }

    ptq::GptqOptions gopts;
    gopts.damp_ratio = damp_ratio;
    ptq::OptimizerOptions oopts;
    oopts.iterations = iterations;
    oopts.seed = seed;

    const ptq::QuantizeResult result = ptq::quantize_model(ck.model, plan, calib, gopts, oopts);
    ptq::save_checkpoint(result.model, out_dir, &plan, &result.tensors);

    json layers = json::array();
    for (const ptq::LayerReport & r : result.reports) {
        layers.push_back({{"name", r.name},
                          {"method", r.method},
                          {"objective_rtn", r.objective_rtn},
                          {"objective_after", r.objective_after},
                          {"recon_error", r.recon_error},
                          {"eff_bits", r.eff_bits}});
    }
    const ptq::ModelBytes fp = ptq::model_bytes(ck.model);
    const ptq::ModelBytes q = ptq::model_bytes(ck.model, &plan);
    const json report{{"layers", layers},
                      {"bytes_fp32", fp.fp32_total},
                      {"bytes_fp16", fp.fp16_total},
                      {"bytes_quantized", q.fp16_total}};
    const std::string rpath =
        report_path.empty() ? (std::filesystem::path(out_dir) / "report.json").string()
                            : report_path;
    write_text(rpath, report.dump(2) + "\n");

    std::cout << json{{"out", out_dir}, {"report", rpath}, {"layers", layers.size()}}.dump()
              << "\n";
    return 0;
}

int cmd_eval(const std::string & ckpt_dir, const std::string & corpus_path,
             const std::string & act_label) {
    const ptq::Checkpoint ck = ptq::load_checkpoint(ckpt_dir);
    const std::vector<int32_t> tokens = load_corpus(corpus_path);

    ptq::QuantizationPlan eval_plan;
    eval_plan.default_spec.weight_scheme.bits = 16; // weights are already baked
    if (!act_label.empty()) {
        eval_plan.act_scheme = ptq::parse_activation(act_label).scheme;
    } else if (ck.plan.has_value()) {
        eval_plan.act_scheme = ck.plan->act_scheme;
    }

    const double ppl = ptq::perplexity(ck.model, tokens, &eval_plan);
    std::cout << json{{"checkpoint", ckpt_dir}, {"tokens", tokens.size()}, {"ppl", ppl}}.dump()
              << "\n";
    return 0;
}

int cmd_sweep(const std::string & config_path, const std::vector<std::string> & sets,
              const std::string & corpus_path, const std::string & out_dir) {
    ptq::ConfigFile cfg = ptq::ConfigFile::parse_file(config_path);
    apply_overrides(cfg, sets);
    ptq::SweepConfig sc = ptq::SweepConfig::from_config(cfg);
    if (!out_dir.empty()) {
        sc.output_dir = out_dir;
    }

    const std::vector<int32_t> corpus = load_corpus(corpus_path);
    const ptq::SweepOutput out = ptq::run_sweep(sc, corpus);

    std::filesystem::create_directories(sc.output_dir);
    const std::filesystem::path dir(sc.output_dir);
    write_text((dir / "sweep.csv").string(), ptq::sweep_csv(out));
    write_text((dir / "sweep.json").string(), ptq::sweep_json(out) + "\n");
    write_text((dir / "best_method.csv").string(), ptq::best_method_csv(out));
    write_text((dir / "pareto.csv").string(),
               ptq::pareto_csv(ptq::pareto_frontier(ptq::sweep_pareto_points(out))));

    size_t failures = 0;
    for (const ptq::SweepRow & r : out.rows) {
        failures += r.ok ? 0 : 1;
    }
    std::cout << json{{"output_dir", sc.output_dir},
                      {"rows", out.rows.size()},
                      {"failures", failures}}
                     .dump()
              << "\n";
    return 0;
}

struct BenchCell {
    double seconds = 0.0;
    size_t reps = 0;
};

template <typename F> BenchCell time_reps(size_t payload, F && body) {
    constexpr size_t target_bytes = 8u << 20;
    BenchCell cell;
    cell.reps = payload == 0 ? 1 : std::clamp<size_t>(target_bytes / payload, 1, 1u << 20);
    const auto t0 = std::chrono::steady_clock::now();
    for (size_t r = 0; r < cell.reps; ++r) {
        body();
    }
    cell.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return cell;
}

double rate_mb_s(size_t payload, const BenchCell & cell) {
    if (payload == 0 || cell.seconds <= 0.0) {
        return 0.0;
    }
    return (double) payload * (double) cell.reps / cell.seconds / 1e6;
}

int cmd_pack_bench(const std::vector<size_t> & sizes, const std::vector<int> & bits,
                   uint64_t seed) {
    std::printf("%-6s %10s %12s %12s %12s %10s\n", "bits", "codes", "payload_b", "pack_mb_s",
                "unpack_mb_s", "roundtrip");
    for (size_t n : sizes) {
        for (int b : bits) {
            if (b < 2 || b > 8) {
                throw std::invalid_argument("pack-bench: bits must lie in [2,8]");
            }
            ptq::Rng rng(seed + (uint64_t) b * 1000003 + n);
            std::vector<uint32_t> values(n);
            for (uint32_t & v : values) {
                v = (uint32_t) (rng.next_u64() & ((1u << b) - 1));
            }
            const size_t payload = ptq::packed_payload_size(n, b);

            ptq::PackedCodes packed;
            const BenchCell pc = time_reps(payload, [&] { packed = ptq::pack_codes(values, b); });
            std::vector<uint32_t> restored;
            const BenchCell uc = time_reps(payload, [&] { restored = ptq::unpack_codes(packed); });

            const uint64_t sum_in = std::accumulate(values.begin(), values.end(), uint64_t{0});
            const uint64_t sum_out =
                std::accumulate(restored.begin(), restored.end(), uint64_t{0});
            const bool ok = restored == values && sum_in == sum_out;

            std::printf("%-6d %10zu %12zu %12.1f %12.1f %10s\n", b, n, payload,
                        rate_mb_s(payload, pc), rate_mb_s(payload, uc), ok ? "ok" : "FAIL");
            if (!ok) {
                return 1;
            }

            if (b == 5) {
                ptq::OddBitPlanes planes;
                const size_t plane_payload =
                    ptq::packed_payload_size(n, 4) + ptq::packed_payload_size(n, 1);
                const BenchCell sp =
                    time_reps(plane_payload, [&] { planes = ptq::split_odd(values); });
                std::vector<uint32_t> joined;
                const BenchCell jp =
                    time_reps(plane_payload, [&] { joined = ptq::join_odd(planes); });
                const bool pok = joined == values;
                std::printf("%-6s %10zu %12zu %12.1f %12.1f %10s\n", "5p", n, plane_payload,
                            rate_mb_s(plane_payload, sp), rate_mb_s(plane_payload, jp),
                            pok ? "ok" : "FAIL");
                if (!pok) {
                    return 1;
                }
            }
        }
    }
    return 0;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"post-training quantization toolkit for a toy byte-level language model"};
    app.require_subcommand(1);
    app.fallthrough(); // --seed/--threads may follow the subcommand

    uint64_t seed = 0;
    int threads = 0;
    app.add_option("--seed", seed, "global rng seed")->capture_default_str();
    app.add_option("--threads", threads, "worker threads, 0 = hardware default")
        ->envname("PTQ_THREADS")
        ->capture_default_str();

    auto * train = app.add_subcommand("train", "train the toy model and write a checkpoint");
    std::string t_config, t_corpus, t_out;
    std::vector<std::string> t_sets;
    train->add_option("--config", t_config, "config file ([model], [train] sections)");
    train->add_option("--corpus", t_corpus, "token corpus, one byte per token")->required();
    train->add_option("--out", t_out, "checkpoint output directory")->required();
    train->add_option("--set", t_sets, "config override, section.key=value");

    auto * quant = app.add_subcommand("quantize", "apply a quantization plan to a checkpoint");
    std::string q_ckpt, q_plan, q_out, q_corpus, q_report;
    size_t q_samples = 16, q_seq = 0, q_iters = 50;
    double q_damp = 0.01;
    quant->add_option("--checkpoint", q_ckpt, "input checkpoint directory")->required();
    quant->add_option("--plan", q_plan, "plan file (json)")->required();
    quant->add_option("--out", q_out, "quantized checkpoint output directory")->required();
    quant->add_option("--corpus", q_corpus, "calibration corpus (required for non-rtn methods)");
    quant->add_option("--report", q_report, "report path, default <out>/report.json");
    quant->add_option("--samples", q_samples, "calibration sample count")->capture_default_str();
    quant->add_option("--seq", q_seq, "calibration sequence length, 0 = min(64, max_seq_len)");
    quant->add_option("--damp-ratio", q_damp, "gptq hessian damping ratio")
        ->capture_default_str();
    quant->add_option("--iterations", q_iters, "optimizer iterations per learning rate")
        ->capture_default_str();

    auto * eval = app.add_subcommand("eval", "perplexity of a checkpoint on a corpus");
    std::string e_ckpt, e_corpus, e_act;
    eval->add_option("--checkpoint", e_ckpt, "checkpoint directory")->required();
    eval->add_option("--corpus", e_corpus, "evaluation corpus")->required();
    eval->add_option("--act", e_act,
                     "activation scheme override: none, token:<bits>:<mode>, block<k>:<bits>:<mode>");

    auto * sweep = app.add_subcommand("sweep", "method x scheme grid with csv/json/pareto output");
    std::string s_config, s_corpus, s_out;
    std::vector<std::string> s_sets;
    sweep->add_option("--config", s_config, "sweep config file")->required();
    sweep->add_option("--corpus", s_corpus, "corpus for training, calibration and eval")
        ->required();
    sweep->add_option("--out", s_out, "output directory, overrides [sweep] output_dir");
    sweep->add_option("--set", s_sets, "config override, section.key=value");

    auto * bench = app.add_subcommand("pack-bench", "bit-packing throughput table");
    std::vector<size_t> b_sizes{4096, 65536, 1048576};
    std::vector<int> b_bits{2, 3, 4, 5, 6, 7, 8};
    bench->add_option("--sizes", b_sizes, "code counts to bench")->delimiter(',');
    bench->add_option("--bits", b_bits, "field widths to bench")->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    ptq::set_thread_count(threads);
    try {
        if (*train) {
            return cmd_train(t_config, t_sets, t_corpus, t_out, seed);
        }
        if (*quant) {
            return cmd_quantize(q_ckpt, q_plan, q_out, q_corpus, q_report, q_samples, q_seq,
                                q_damp, q_iters, seed);
        }
        if (*eval) {
            return cmd_eval(e_ckpt, e_corpus, e_act);
        }
        if (*sweep) {
            return cmd_sweep(s_config, s_sets, s_corpus, s_out);
        }
        if (*bench) {
            return cmd_pack_bench(b_sizes, b_bits, seed);
        }
    } catch (const std::exception & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
