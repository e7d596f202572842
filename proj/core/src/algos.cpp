#include "ptq/algos.hpp"

#include "ptq/errors.hpp"
#include "ptq/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace ptq {

namespace {

// Accumulates X[:, c0:c1) X[:, c0:c1)^T by recursive midpoint halving so the
// per-element sums for [X X] are exactly twice the sums for X.
std::vector<double> gram_pairwise(const Matrix & x, size_t c0, size_t c1) {
    const size_t d = x.rows();
    if (c1 - c0 <= 64) {
        std::vector<double> h(d * d, 0.0);
        for (size_t c = c0; c < c1; c++) {
            for (size_t i = 0; i < d; i++) {
                const double xi = (double) x.at(i, c);
                for (size_t j = i; j < d; j++) {
                    h[i * d + j] += xi * (double) x.at(j, c);
                }
            }
        }
        for (size_t i = 0; i < d; i++) {
            for (size_t j = 0; j < i; j++) {
                h[i * d + j] = h[j * d + i];
            }
        }
        return h;
    }
    const size_t mid = c0 + (c1 - c0) / 2;
    std::vector<double> h = gram_pairwise(x, c0, mid);
    const std::vector<double> right = gram_pairwise(x, mid, c1);
    for (size_t i = 0; i < h.size(); i++) {
        h[i] += right[i];
    }
    return h;
}

// Damped H = 2XX^T / n_samples. The sample-count normalization cancels in
// the compensation ratios and keeps H bit-identical under duplicated
// calibration columns.
Matrix damped_hessian(const Matrix & x, double damp_ratio) {
    const size_t d = x.rows();
    std::vector<double> h = gram_pairwise(x, 0, x.cols());
    const double n = (double) x.cols();
    for (double & v : h) {
        v = (v * 2.0) / n;
    }
    double diag_sum = 0.0;
    for (size_t i = 0; i < d; i++) {
        diag_sum += h[i * d + i];
    }
    const double damp = damp_ratio * (diag_sum / (double) d);
    for (size_t i = 0; i < d; i++) {
        h[i * d + i] += damp;
    }
    Matrix out(d, d);
    for (size_t i = 0; i < d * d; i++) {
        out.values()[i] = (float) h[i];
    }
    return out;
}

int32_t quantize_one(float v, const QuantParams & p) {
    const double t = ((double) v - (double) p.zero) / (double) p.scale;
    const int32_t c = (int32_t) std::nearbyint(t);
    return std::clamp(c, p.qmin, p.qmax);
}

float dequantize_one(int32_t c, const QuantParams & p) {
    return (float) ((double) p.scale * (double) c + (double) p.zero);
}

void check_calibration_shape(const Matrix & w, const Matrix & x, const char * who) {
    if (x.rows() != w.cols()) {
        throw std::invalid_argument(std::string(who) +
                                    ": calibration rows must match weight columns");
    }
    if (x.cols() < 1) {
        throw std::invalid_argument(std::string(who) + ": need at least one sample column");
    }
}

// Fake-quant with group params recomputed from v; mask[i] = 1 where the
// unclipped code lands inside [qmin, qmax] (straight-through pass region).
Matrix fake_quant_ste(const Matrix & v, const QuantScheme & scheme,
                      std::vector<uint8_t> * mask) {
    const QuantizedTensor q = quantize_tensor(v, scheme, TensorRole::weight);
    Matrix out = dequantize_tensor(q);
    if (mask != nullptr) {
        mask->assign(v.size(), 0);
        for (const auto & g : q.groups) {
            for (size_t i = g.offset; i < g.offset + g.len; i++) {
                const double t =
                    ((double) v.values()[i] - (double) g.params.zero) / (double) g.params.scale;
                (*mask)[i] = (t >= (double) g.params.qmin && t <= (double) g.params.qmax) ? 1 : 0;
            }
        }
    }
    return out;
}

double lr_at(const OptimizerOptions & opts, double lr, size_t it) {
    if (opts.schedule == OptimizerOptions::Schedule::constant) {
        return lr;
    }
    return lr * (1.0 - (double) it / (double) opts.iterations);
}

struct AdamFlat {
    double beta1, beta2, eps;
    size_t step = 0;
    std::vector<double> m, v;

    AdamFlat(size_t n, const OptimizerOptions & opts)
        : beta1(opts.adam_beta1), beta2(opts.adam_beta2), eps(opts.adam_eps), m(n, 0.0),
          v(n, 0.0) {}

    void update(std::span<float> params, std::span<const float> grads, double lr) {
        step++;
        const double c1 = 1.0 - std::pow(beta1, (double) step);
        const double c2 = 1.0 - std::pow(beta2, (double) step);
        for (size_t j = 0; j < params.size(); j++) {
            const double g = (double) grads[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            params[j] = (float) ((double) params[j] -
                                 lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps));
        }
    }
};

} // namespace

const Matrix * CalibrationSet::find(const std::string & name) const {
    for (size_t i = 0; i < names.size(); i++) {
        if (names[i] == name) {
            return &inputs[i];
        }
    }
    return nullptr;
}

CalibrationSet capture_calibration(const ToyModel & model, std::span<const int32_t> corpus,
                                   size_t samples, size_t seq_len, uint64_t seed) {
    if (samples < 1 || seq_len < 1) {
        throw std::invalid_argument("capture_calibration: samples and seq_len must be >= 1");
    }
    if (seq_len > model.config.max_seq_len) {
        throw std::invalid_argument("capture_calibration: seq_len exceeds max_seq_len");
    }
    if (corpus.size() < seq_len + samples - 1) {
        throw std::invalid_argument("capture_calibration: corpus too short for requested windows");
    }

    CalibrationSet set;
    set.seed = seed;
    set.samples = samples;
    set.seq_len = seq_len;
    set.names = linear_names(model.config);
    set.inputs.reserve(set.names.size());
    for (const std::string & name : set.names) {
        const Linear & lin = linear_by_name(model, name);
        set.inputs.emplace_back(lin.w.cols(), samples * seq_len);
    }
    set.layer_batches.resize(model.config.n_layers);

    std::map<std::string, size_t> index;
    for (size_t i = 0; i < set.names.size(); i++) {
        index[set.names[i]] = i;
    }

    Rng rng(seed);
    const size_t n_starts = corpus.size() - seq_len + 1;
    size_t window = 0;

    ForwardHooks hooks;
    hooks.on_linear_input = [&](const std::string & name, const Matrix & x) {
        Matrix & dst = set.inputs[index.at(name)];
        for (size_t t = 0; t < x.rows(); t++) {
            const float * src = x.row(t);
            const size_t col = window * seq_len + t;
            for (size_t i = 0; i < x.cols(); i++) {
                dst.at(i, col) = src[i];
            }
        }
    };
    hooks.on_layer_input = [&](size_t layer, const Matrix & x) {
        set.layer_batches[layer].push_back(x);
    };

    for (window = 0; window < samples; window++) {
        const size_t start = rng.index(n_starts);
        (void) forward(model, corpus.subspan(start, seq_len), nullptr, &hooks);
    }
    return set;
}

QuantizedTensor rtn(const Matrix & w, const QuantScheme & scheme) {
    return quantize_tensor(w, scheme, TensorRole::weight);
}

double layer_objective(const Matrix & w, const QuantizedTensor & q, const Matrix & x) {
    if (w.rows() != q.rows || w.cols() != q.cols) {
        throw std::invalid_argument("layer_objective: weight/tensor shape mismatch");
    }
    check_calibration_shape(w, x, "layer_objective");
    const Matrix what = dequantize_tensor(q);
    Matrix diff(w.rows(), w.cols());
    for (size_t i = 0; i < w.size(); i++) {
        diff.values()[i] = w.values()[i] - what.values()[i];
    }
    return frobenius_norm_sq(matmul(diff, x));
}

QuantizedTensor gptq(const Matrix & w, const Matrix & x, const QuantScheme & scheme,
                     const GptqOptions & opts) {
    scheme.validate();
    if (scheme.passthrough()) {
        throw std::invalid_argument("gptq: passthrough scheme has no codes");
    }
    if (opts.damp_ratio <= 0.0) {
        throw std::invalid_argument("gptq: damp_ratio must be positive");
    }
    check_calibration_shape(w, x, "gptq");

    const Matrix h = damped_hessian(x, opts.damp_ratio);
    Matrix u;
    try {
        const Matrix hinv = inverse_spd(h);
        u = transpose(cholesky(hinv));
    } catch (const DecompositionError & e) {
        throw NumericalError(std::string("gptq: Hessian factorization failed (") + e.what() +
                             "); increase damp_ratio");
    }

    // grid from the original weights; codes overwritten by the sweep
    QuantizedTensor q = quantize_tensor(w, scheme, TensorRole::weight);
    const size_t rows = w.rows();
    const size_t cols = w.cols();
    const size_t group_len = q.group_len();

    Matrix work = w;
    std::vector<float> err(rows);
    for (size_t j = 0; j < cols; j++) {
        const double ujj = (double) u.at(j, j);
        for (size_t r = 0; r < rows; r++) {
            const size_t flat = r * cols + j;
            const QuantParams & p = q.groups[flat / group_len].params;
            const int32_t c = quantize_one(work.at(r, j), p);
            q.codes[flat] = c;
            err[r] = (float) (((double) work.at(r, j) - (double) dequantize_one(c, p)) / ujj);
        }
        const float * urow = u.row(j);
        for (size_t r = 0; r < rows; r++) {
            float * wrow = work.row(r);
            const float e = err[r];
            for (size_t l = j + 1; l < cols; l++) {
                wrow[l] -= e * urow[l];
            }
        }
    }
    return q;
}

QuantizedTensor zq_local(const Matrix & w, const Matrix & x, const QuantScheme & scheme,
                         const OptimizerOptions & opts) {
    scheme.validate();
    if (scheme.passthrough()) {
        throw std::invalid_argument("zq_local: passthrough scheme has no codes");
    }
    if (opts.learning_rates.empty()) {
        throw std::invalid_argument("zq_local: learning rate sweep is empty");
    }
    check_calibration_shape(w, x, "zq_local");
    const size_t batch = std::max<size_t>(1, opts.batch_size);

    QuantizedTensor best = rtn(w, scheme);
    double best_obj = layer_objective(w, best, x);

    for (size_t lr_idx = 0; lr_idx < opts.learning_rates.size(); lr_idx++) {
        const double lr = opts.learning_rates[lr_idx];
        Matrix latent = w;
        AdamFlat adam(w.size(), opts);
        Rng rng(opts.seed + 0x9e3779b97f4a7c15ull * (lr_idx + 1));

        Matrix xb(x.rows(), batch);
        for (size_t it = 0; it < opts.iterations; it++) {
            for (size_t b = 0; b < batch; b++) {
                const size_t col = rng.index(x.cols());
                for (size_t i = 0; i < x.rows(); i++) {
                    xb.at(i, b) = x.at(i, col);
                }
            }
            std::vector<uint8_t> mask;
            const Matrix vq = fake_quant_ste(latent, scheme, &mask);
            Matrix diff(w.rows(), w.cols());
            for (size_t i = 0; i < w.size(); i++) {
                diff.values()[i] = vq.values()[i] - w.values()[i];
            }
            const Matrix err = matmul(diff, xb); // rows x batch
            Matrix grad = matmul_nt(err, xb);    // rows x in_dim
            for (size_t i = 0; i < grad.size(); i++) {
                grad.values()[i] = mask[i] ? 2.0f * grad.values()[i] : 0.0f;
            }
            adam.update(latent.values(), grad.values(), lr_at(opts, lr, it));

            const QuantizedTensor cand = quantize_tensor(latent, scheme, TensorRole::weight);
            const double obj = layer_objective(w, cand, x);
            if (obj < best_obj) {
                best_obj = obj;
                best = cand;
            }
        }
    }
    return best;
}

namespace {

const std::array<const char *, 6> k_slot_names = {"q", "k", "v", "o", "fc1", "fc2"};

Linear * slot_of(TransformerLayer & layer, size_t s) {
    Linear * slots[6] = {&layer.q, &layer.k, &layer.v, &layer.o, &layer.fc1, &layer.fc2};
    return slots[s];
}

const Linear * slot_of(const TransformerLayer & layer, size_t s) {
    const Linear * slots[6] = {&layer.q, &layer.k, &layer.v, &layer.o, &layer.fc1, &layer.fc2};
    return slots[s];
}

double layer_mse(const TransformerLayer & a, const std::vector<Matrix> & inputs,
                 const std::vector<Matrix> & teacher_out, size_t n_heads) {
    double total = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < inputs.size(); i++) {
        const Matrix out = layer_forward(a, inputs[i], n_heads);
        for (size_t j = 0; j < out.size(); j++) {
            const double d = (double) out.values()[j] - (double) teacher_out[i].values()[j];
            total += d * d;
        }
        count += out.size();
    }
    return total / (double) count;
}

// student with every linear weight fake-quantized from the latent layer
TransformerLayer bake_student(const TransformerLayer & latent, const QuantScheme & scheme,
                              std::vector<std::vector<uint8_t>> * masks) {
    TransformerLayer student = latent;
    if (masks != nullptr) {
        masks->assign(6, {});
    }
    for (size_t s = 0; s < 6; s++) {
        Linear * lin = slot_of(student, s);
        lin->w = fake_quant_ste(slot_of(latent, s)->w, scheme,
                                masks != nullptr ? &(*masks)[s] : nullptr);
    }
    return student;
}

} // namespace

ZqGlobalResult zq_global(const TransformerLayer & layer, const std::vector<Matrix> & layer_inputs,
                         size_t n_heads, const QuantScheme & scheme, const OptimizerOptions & opts,
                         bool freeze_ln) {
    scheme.validate();
    if (layer_inputs.empty()) {
        throw std::invalid_argument("zq_global: no layer input batches");
    }
    if (opts.learning_rates.empty()) {
        throw std::invalid_argument("zq_global: learning rate sweep is empty");
    }

    std::vector<Matrix> teacher_out;
    teacher_out.reserve(layer_inputs.size());
    for (const Matrix & x : layer_inputs) {
        teacher_out.push_back(layer_forward(layer, x, n_heads));
    }

    ZqGlobalResult result;
    if (scheme.passthrough()) {
        result.layer = layer;
        result.best_mse = 0.0;
        result.init_mse = 0.0;
        return result;
    }

    // RTN initialization is the baseline iterate.
    TransformerLayer best_latent = layer;
    {
        const TransformerLayer student = bake_student(layer, scheme, nullptr);
        result.init_mse = layer_mse(student, layer_inputs, teacher_out, n_heads);
        result.best_mse = result.init_mse;
    }

    for (size_t lr_idx = 0; lr_idx < opts.learning_rates.size(); lr_idx++) {
        const double lr = opts.learning_rates[lr_idx];
        TransformerLayer latent = layer;
        Rng rng(opts.seed + 0x9e3779b97f4a7c15ull * (lr_idx + 1));

        // parameter order: 6 weight matrices, then LN/bias when trainable
        size_t n_params = 0;
        for (size_t s = 0; s < 6; s++) {
            n_params += slot_of(latent, s)->w.size();
        }
        if (!freeze_ln) {
            n_params += latent.ln_attn.gamma.size() * 2 + latent.ln_mlp.gamma.size() * 2;
            for (size_t s = 0; s < 6; s++) {
                n_params += slot_of(latent, s)->b.size();
            }
        }
        AdamFlat adam(n_params, opts);
        std::vector<float> flat_grad(n_params);
        std::vector<float> flat_param(n_params);

        auto gather = [&](TransformerLayer & from, std::vector<float> & to) {
            size_t o = 0;
            for (size_t s = 0; s < 6; s++) {
                auto vals = slot_of(from, s)->w.values();
                std::copy(vals.begin(), vals.end(), to.begin() + o);
                o += vals.size();
            }
            if (!freeze_ln) {
                for (std::vector<float> * v :
                     {&from.ln_attn.gamma, &from.ln_attn.beta, &from.ln_mlp.gamma,
                      &from.ln_mlp.beta}) {
                    std::copy(v->begin(), v->end(), to.begin() + o);
                    o += v->size();
                }
                for (size_t s = 0; s < 6; s++) {
                    auto & b = slot_of(from, s)->b;
                    std::copy(b.begin(), b.end(), to.begin() + o);
                    o += b.size();
                }
            }
        };
        auto scatter = [&](const std::vector<float> & from, TransformerLayer & to) {
            size_t o = 0;
            for (size_t s = 0; s < 6; s++) {
                auto vals = slot_of(to, s)->w.values();
                std::copy(from.begin() + o, from.begin() + o + vals.size(), vals.begin());
                o += vals.size();
            }
            if (!freeze_ln) {
                for (std::vector<float> * v :
                     {&to.ln_attn.gamma, &to.ln_attn.beta, &to.ln_mlp.gamma, &to.ln_mlp.beta}) {
                    std::copy(from.begin() + o, from.begin() + o + v->size(), v->begin());
                    o += v->size();
                }
                for (size_t s = 0; s < 6; s++) {
                    auto & b = slot_of(to, s)->b;
                    std::copy(from.begin() + o, from.begin() + o + b.size(), b.begin());
                    o += b.size();
                }
            }
        };

        for (size_t it = 0; it < opts.iterations; it++) {
            const size_t pick = rng.index(layer_inputs.size());
            std::vector<std::vector<uint8_t>> masks;
            TransformerLayer student = bake_student(latent, scheme, &masks);

            LayerCache cache;
            const Matrix out = layer_forward(student, layer_inputs[pick], n_heads, &cache);
            const Matrix & target = teacher_out[pick];
            const double inv_n = 1.0 / (double) out.size();
            Matrix dout(out.rows(), out.cols());
            for (size_t i = 0; i < out.size(); i++) {
                dout.values()[i] = (float) (2.0 * inv_n *
                                            ((double) out.values()[i] -
                                             (double) target.values()[i]));
            }

            TransformerLayer grads = zero_grads_like(student);
            (void) layer_backward(student, cache, dout, n_heads, grads);

            // straight-through: weight grads masked by in-range region
            for (size_t s = 0; s < 6; s++) {
                auto gv = slot_of(grads, s)->w.values();
                const auto & mask = masks[s];
                for (size_t i = 0; i < gv.size(); i++) {
                    if (!mask[i]) {
                        gv[i] = 0.0f;
                    }
                }
            }

            gather(latent, flat_param);
            gather(grads, flat_grad);
            adam.update(flat_param, flat_grad, lr_at(opts, lr, it));
            scatter(flat_param, latent);

            const TransformerLayer cand = bake_student(latent, scheme, nullptr);
            const double mse = layer_mse(cand, layer_inputs, teacher_out, n_heads);
            if (mse < result.best_mse) {
                result.best_mse = mse;
                best_latent = latent;
            }
        }
    }

    result.layer = bake_student(best_latent, scheme, nullptr);
    for (size_t s = 0; s < 6; s++) {
        result.weights[k_slot_names[s]] =
            quantize_tensor(slot_of(best_latent, s)->w, scheme, TensorRole::weight);
    }
    return result;
}

QuantizeResult quantize_model(const ToyModel & model, const QuantizationPlan & plan,
                              const CalibrationSet & calib, const GptqOptions & gopts,
                              const OptimizerOptions & oopts) {
    plan.validate();
    QuantizeResult result;
    result.model = model;

    const auto names = linear_names(model.config);

    // zq-global runs once per transformer layer and must cover it uniformly
    std::vector<bool> layer_is_global(model.config.n_layers, false);
    for (size_t l = 0; l < model.config.n_layers; l++) {
        size_t global_count = 0;
        const LayerQuantSpec first = plan.spec_for(names[l * 6]);
        bool uniform = true;
        for (size_t s = 0; s < 6; s++) {
            const LayerQuantSpec spec = plan.spec_for(names[l * 6 + s]);
            if (spec.method == PtqMethod::zq_global && !spec.weight_scheme.passthrough()) {
                global_count++;
            }
            if (spec.method != first.method ||
                spec.weight_scheme.bits != first.weight_scheme.bits ||
                spec.weight_scheme.mode != first.weight_scheme.mode ||
                spec.weight_scheme.granularity != first.weight_scheme.granularity ||
                spec.weight_scheme.block_size != first.weight_scheme.block_size) {
                uniform = false;
            }
        }
        if (global_count > 0) {
            if (global_count != 6 || !uniform) {
                throw std::invalid_argument(
                    "quantize_model: zq-global requires one method and scheme across layer " +
                    std::to_string(l));
            }
            layer_is_global[l] = true;
        }
    }

    for (size_t l = 0; l < model.config.n_layers; l++) {
        if (layer_is_global[l]) {
            const LayerQuantSpec spec = plan.spec_for(names[l * 6]);
            if (calib.layer_batches.size() <= l || calib.layer_batches[l].empty()) {
                throw std::invalid_argument("quantize_model: zq-global needs layer batches for layer " +
                                            std::to_string(l));
            }
            ZqGlobalResult zr = zq_global(model.layers[l], calib.layer_batches[l],
                                          model.config.n_heads, spec.weight_scheme, oopts,
                                          plan.freeze_ln);
            result.model.layers[l] = zr.layer;
            for (size_t s = 0; s < 6; s++) {
                const std::string name = names[l * 6 + s];
                const QuantizedTensor & q = zr.weights.at(k_slot_names[s]);
                const Matrix & w = slot_of(model.layers[l], s)->w;

                LayerReport report;
                report.name = name;
                report.method = to_string(PtqMethod::zq_global);
                report.recon_error = reconstruction_error(w, q);
                report.eff_bits = effective_bits(spec.weight_scheme, q.group_len());
                if (const Matrix * x = calib.find(name)) {
                    report.objective_rtn = layer_objective(w, rtn(w, spec.weight_scheme), *x);
                    report.objective_after = layer_objective(w, q, *x);
                }
                result.reports.push_back(std::move(report));
                result.tensors[name] = q;
            }
            continue;
        }

        for (size_t s = 0; s < 6; s++) {
            const std::string name = names[l * 6 + s];
            const LayerQuantSpec spec = plan.spec_for(name);
            if (spec.weight_scheme.passthrough()) {
                continue;
            }
            const Matrix & w = slot_of(model.layers[l], s)->w;
            const Matrix * x = calib.find(name);
            if (spec.method != PtqMethod::rtn && x == nullptr) {
                throw std::invalid_argument("quantize_model: method " + to_string(spec.method) +
                                            " needs calibration for " + name);
            }

            QuantizedTensor q;
            try {
                switch (spec.method) {
                    case PtqMethod::rtn:      q = rtn(w, spec.weight_scheme); break;
                    case PtqMethod::gptq:     q = gptq(w, *x, spec.weight_scheme, gopts); break;
                    case PtqMethod::zq_local: q = zq_local(w, *x, spec.weight_scheme, oopts); break;
                    case PtqMethod::zq_global: break; // handled above
                }
            } catch (const IndivisibleBlockError & e) {
                throw IndivisibleBlockError("layer " + name + ": " + e.what());
            }

            LayerReport report;
            report.name = name;
            report.method = to_string(spec.method);
            report.recon_error = reconstruction_error(w, q);
            report.eff_bits = effective_bits(spec.weight_scheme, q.group_len());
            if (x != nullptr) {
                report.objective_rtn = layer_objective(w, rtn(w, spec.weight_scheme), *x);
                report.objective_after = layer_objective(w, q, *x);
            }
            result.reports.push_back(std::move(report));

            linear_by_name(result.model, name).w = dequantize_tensor(q);
            result.tensors[name] = std::move(q);
        }
    }
    return result;
}

} // namespace ptq
