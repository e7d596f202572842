#include "ptq/model.hpp"

#include "ptq/errors.hpp"
#include "ptq/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ptq {

namespace {

constexpr double k_ln_eps = 1e-5;
constexpr double k_gelu_c = 0.7978845608028654; // sqrt(2/pi)
constexpr double k_gelu_a = 0.044715;

Matrix slice_cols(const Matrix & m, size_t c0, size_t width) {
    Matrix out(m.rows(), width);
    for (size_t r = 0; r < m.rows(); r++) {
        const float * src = m.row(r) + c0;
        std::copy(src, src + width, out.row(r));
    }
    return out;
}

void add_into_cols(Matrix & dst, const Matrix & src, size_t c0) {
    for (size_t r = 0; r < src.rows(); r++) {
        float * d = dst.row(r) + c0;
        const float * s = src.row(r);
        for (size_t c = 0; c < src.cols(); c++) {
            d[c] += s[c];
        }
    }
}

void copy_into_cols(Matrix & dst, const Matrix & src, size_t c0) {
    for (size_t r = 0; r < src.rows(); r++) {
        std::copy(src.row(r), src.row(r) + src.cols(), dst.row(r) + c0);
    }
}

void add_bias(Matrix & m, const std::vector<float> & b) {
    for (size_t r = 0; r < m.rows(); r++) {
        float * row = m.row(r);
        for (size_t c = 0; c < m.cols(); c++) {
            row[c] += b[c];
        }
    }
}

Matrix add(const Matrix & a, const Matrix & b) {
    Matrix out(a.rows(), a.cols());
    for (size_t i = 0; i < a.size(); i++) {
        out.values()[i] = a.values()[i] + b.values()[i];
    }
    return out;
}

// keeps dst's storage alive (gradient buffers are aliased by optimizer views)
void add_inplace(Matrix & dst, const Matrix & src) {
    for (size_t i = 0; i < dst.size(); i++) {
        dst.values()[i] += src.values()[i];
    }
}

// y = x * w^T + b, with the product routed through the vector-friendly
// matmul kernel via an explicit transpose.
Matrix linear_forward(const Linear & lin, const Matrix & x) {
    Matrix y = matmul(x, transpose(lin.w));
    add_bias(y, lin.b);
    return y;
}

Matrix maybe_quant_input(const Matrix & x, const QuantScheme * act) {
    if (act == nullptr || act->passthrough()) {
        return x;
    }
    return fake_quant(x, *act, TensorRole::activation);
}

void colsum_into(const Matrix & m, std::vector<float> & out) {
    std::vector<double> acc(m.cols(), 0.0);
    for (size_t r = 0; r < m.rows(); r++) {
        const float * row = m.row(r);
        for (size_t c = 0; c < m.cols(); c++) {
            acc[c] += (double) row[c];
        }
    }
    for (size_t c = 0; c < m.cols(); c++) {
        out[c] += (float) acc[c];
    }
}

const char * linear_short_name(size_t slot) {
    static const char * names[6] = {"q", "k", "v", "o", "fc1", "fc2"};
    return names[slot];
}

std::string linear_full_name(size_t layer_idx, size_t slot) {
    return "layer" + std::to_string(layer_idx) + "." + linear_short_name(slot);
}

void fire_linear_hook(const ForwardHooks * hooks, size_t layer_idx, size_t slot,
                      const Matrix & x) {
    if (hooks != nullptr && hooks->on_linear_input) {
        hooks->on_linear_input(linear_full_name(layer_idx, slot), x);
    }
}

} // namespace

void ToyModelConfig::validate() const {
    if (vocab_size < 2 || d_model < 1 || n_heads < 1 || n_layers < 1 || d_ff < 1 ||
        max_seq_len < 1) {
        throw std::invalid_argument("model config: all sizes must be at least 1 (vocab >= 2)");
    }
    if (d_model % n_heads != 0) {
        throw std::invalid_argument("model config: d_model must be divisible by n_heads");
    }
}

ToyModel init_model(const ToyModelConfig & config) {
    config.validate();
    Rng rng(config.seed);
    auto gauss_fill = [&](Matrix & m) {
        for (float & v : m.values()) {
            v = 0.02f * rng.gaussian();
        }
    };

    ToyModel model;
    model.config = config;
    model.tok_emb = Matrix(config.vocab_size, config.d_model);
    gauss_fill(model.tok_emb);
    model.pos_emb = Matrix(config.max_seq_len, config.d_model);
    gauss_fill(model.pos_emb);

    auto make_linear = [&](size_t out, size_t in) {
        Linear lin;
        lin.w = Matrix(out, in);
        gauss_fill(lin.w);
        lin.b.assign(out, 0.0f);
        return lin;
    };
    auto make_ln = [&](size_t d) {
        LayerNorm ln;
        ln.gamma.assign(d, 1.0f);
        ln.beta.assign(d, 0.0f);
        return ln;
    };

    model.layers.resize(config.n_layers);
    for (auto & layer : model.layers) {
        layer.ln_attn = make_ln(config.d_model);
        layer.q = make_linear(config.d_model, config.d_model);
        layer.k = make_linear(config.d_model, config.d_model);
        layer.v = make_linear(config.d_model, config.d_model);
        layer.o = make_linear(config.d_model, config.d_model);
        layer.ln_mlp = make_ln(config.d_model);
        layer.fc1 = make_linear(config.d_ff, config.d_model);
        layer.fc2 = make_linear(config.d_model, config.d_ff);
    }
    model.ln_final = make_ln(config.d_model);
    model.head = Matrix(config.vocab_size, config.d_model);
    gauss_fill(model.head);
    return model;
}

std::string to_string(PtqMethod m) {
    switch (m) {
        case PtqMethod::rtn:       return "rtn";
        case PtqMethod::gptq:      return "gptq";
        case PtqMethod::zq_local:  return "zq-local";
        case PtqMethod::zq_global: return "zq-global";
    }
    return "?";
}

PtqMethod ptq_method_from_string(const std::string & s) {
    if (s == "rtn")       return PtqMethod::rtn;
    if (s == "gptq")      return PtqMethod::gptq;
    if (s == "zq-local")  return PtqMethod::zq_local;
    if (s == "zq-global") return PtqMethod::zq_global;
    throw std::invalid_argument("unknown ptq method: " + s);
}

LayerQuantSpec QuantizationPlan::spec_for(const std::string & name) const {
    auto it = overrides.find(name);
    return it != overrides.end() ? it->second : default_spec;
}

bool QuantizationPlan::quantizes_weights() const {
    if (!default_spec.weight_scheme.passthrough()) {
        return true;
    }
    for (const auto & [name, spec] : overrides) {
        if (!spec.weight_scheme.passthrough()) {
            return true;
        }
    }
    return false;
}

void QuantizationPlan::validate() const {
    default_spec.weight_scheme.validate();
    if (!default_spec.weight_scheme.passthrough() &&
        default_spec.weight_scheme.granularity == Granularity::per_token) {
        throw std::invalid_argument("plan: per_token granularity is activation-only");
    }
    for (const auto & [name, spec] : overrides) {
        spec.weight_scheme.validate();
    }
    if (act_scheme) {
        act_scheme->validate();
        if (!act_scheme->passthrough() &&
            act_scheme->granularity != Granularity::per_token &&
            act_scheme->granularity != Granularity::block) {
            throw std::invalid_argument("plan: activation scheme must be per_token or block");
        }
    }
}

std::vector<std::string> linear_names(const ToyModelConfig & config) {
    std::vector<std::string> names;
    names.reserve(config.n_layers * 6);
    for (size_t l = 0; l < config.n_layers; l++) {
        for (size_t s = 0; s < 6; s++) {
            names.push_back(linear_full_name(l, s));
        }
    }
    return names;
}

Linear & linear_by_name(ToyModel & model, const std::string & name) {
    return const_cast<Linear &>(linear_by_name(const_cast<const ToyModel &>(model), name));
}

const Linear & linear_by_name(const ToyModel & model, const std::string & name) {
    const auto dot = name.find('.');
    if (dot == std::string::npos || name.rfind("layer", 0) != 0) {
        throw std::invalid_argument("unknown linear name: " + name);
    }
    const size_t idx = std::stoul(name.substr(5, dot - 5));
    if (idx >= model.layers.size()) {
        throw std::invalid_argument("linear name out of range: " + name);
    }
    const TransformerLayer & layer = model.layers[idx];
    const std::string slot = name.substr(dot + 1);
    if (slot == "q")   return layer.q;
    if (slot == "k")   return layer.k;
    if (slot == "v")   return layer.v;
    if (slot == "o")   return layer.o;
    if (slot == "fc1") return layer.fc1;
    if (slot == "fc2") return layer.fc2;
    throw std::invalid_argument("unknown linear name: " + name);
}

float gelu_tanh(float x) {
    const double xd = (double) x;
    const double t = std::tanh(k_gelu_c * (xd + k_gelu_a * xd * xd * xd));
    return (float) (0.5 * xd * (1.0 + t));
}

float gelu_tanh_grad(float x) {
    const double xd = (double) x;
    const double a = k_gelu_c * (xd + k_gelu_a * xd * xd * xd);
    const double th = std::tanh(a);
    const double da = k_gelu_c * (1.0 + 3.0 * k_gelu_a * xd * xd);
    return (float) (0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * da);
}

Matrix layer_norm_forward(const Matrix & x, const LayerNorm & ln, Matrix * xhat_out,
                          std::vector<float> * inv_std_out) {
    const size_t d = x.cols();
    Matrix out(x.rows(), d);
    if (xhat_out != nullptr) {
        *xhat_out = Matrix(x.rows(), d);
    }
    if (inv_std_out != nullptr) {
        inv_std_out->assign(x.rows(), 0.0f);
    }
    for (size_t r = 0; r < x.rows(); r++) {
        const float * row = x.row(r);
        double mean = 0.0;
        for (size_t c = 0; c < d; c++) {
            mean += (double) row[c];
        }
        mean /= (double) d;
        double var = 0.0;
        for (size_t c = 0; c < d; c++) {
            const double diff = (double) row[c] - mean;
            var += diff * diff;
        }
        var /= (double) d;
        const double inv_std = 1.0 / std::sqrt(var + k_ln_eps);
        if (inv_std_out != nullptr) {
            (*inv_std_out)[r] = (float) inv_std;
        }
        float * dst = out.row(r);
        for (size_t c = 0; c < d; c++) {
            const float xhat = (float) (((double) row[c] - mean) * inv_std);
            if (xhat_out != nullptr) {
                xhat_out->at(r, c) = xhat;
            }
            dst[c] = xhat * ln.gamma[c] + ln.beta[c];
        }
    }
    return out;
}

Matrix layer_norm_backward(const Matrix & xhat, const std::vector<float> & inv_std,
                           const LayerNorm & ln, const Matrix & dy, LayerNorm & grads) {
    const size_t d = xhat.cols();
    Matrix dx(xhat.rows(), d);
    std::vector<double> dgamma(d, 0.0);
    std::vector<double> dbeta(d, 0.0);
    for (size_t r = 0; r < xhat.rows(); r++) {
        const float * xh = xhat.row(r);
        const float * dyr = dy.row(r);
        double m1 = 0.0; // mean of dxhat
        double m2 = 0.0; // mean of dxhat * xhat
        for (size_t c = 0; c < d; c++) {
            const double dxhat = (double) dyr[c] * (double) ln.gamma[c];
            m1 += dxhat;
            m2 += dxhat * (double) xh[c];
            dgamma[c] += (double) dyr[c] * (double) xh[c];
            dbeta[c] += (double) dyr[c];
        }
        m1 /= (double) d;
        m2 /= (double) d;
        float * dst = dx.row(r);
        const double is = (double) inv_std[r];
        for (size_t c = 0; c < d; c++) {
            const double dxhat = (double) dyr[c] * (double) ln.gamma[c];
            dst[c] = (float) (is * (dxhat - m1 - (double) xh[c] * m2));
        }
    }
    for (size_t c = 0; c < d; c++) {
        grads.gamma[c] += (float) dgamma[c];
        grads.beta[c] += (float) dbeta[c];
    }
    return dx;
}

namespace {

// Causal softmax over s (seq x seq): row i attends to columns <= i.
Matrix causal_softmax(const Matrix & s) {
    Matrix p(s.rows(), s.cols());
    std::fill(p.values().begin(), p.values().end(), 0.0f);
    std::vector<double> e(s.cols());
    for (size_t i = 0; i < s.rows(); i++) {
        const float * row = s.row(i);
        double mx = (double) row[0];
        for (size_t j = 1; j <= i; j++) {
            mx = std::max(mx, (double) row[j]);
        }
        double sum = 0.0;
        for (size_t j = 0; j <= i; j++) {
            e[j] = std::exp((double) row[j] - mx);
            sum += e[j];
        }
        float * dst = p.row(i);
        for (size_t j = 0; j <= i; j++) {
            dst[j] = (float) (e[j] / sum);
        }
    }
    return p;
}

} // namespace

Matrix layer_forward(const TransformerLayer & layer, const Matrix & x, size_t n_heads,
                     LayerCache * cache, const QuantScheme * act, const ForwardHooks * hooks,
                     size_t layer_idx) {
    const size_t d = x.cols();
    if (d % n_heads != 0) {
        throw std::invalid_argument("layer_forward: width not divisible by head count");
    }
    const size_t dh = d / n_heads;
    const double scale = 1.0 / std::sqrt((double) dh);

    Matrix xhat1;
    std::vector<float> inv_std1;
    Matrix u = layer_norm_forward(x, layer.ln_attn, cache ? &xhat1 : nullptr,
                                  cache ? &inv_std1 : nullptr);

    fire_linear_hook(hooks, layer_idx, 0, u);
    fire_linear_hook(hooks, layer_idx, 1, u);
    fire_linear_hook(hooks, layer_idx, 2, u);
    const Matrix uq = maybe_quant_input(u, act);
    Matrix qm = linear_forward(layer.q, uq);
    Matrix km = linear_forward(layer.k, uq);
    Matrix vm = linear_forward(layer.v, uq);

    Matrix attn_concat(x.rows(), d);
    std::vector<Matrix> probs;
    if (cache != nullptr) {
        probs.reserve(n_heads);
    }
    for (size_t h = 0; h < n_heads; h++) {
        const Matrix qh = slice_cols(qm, h * dh, dh);
        const Matrix kh = slice_cols(km, h * dh, dh);
        const Matrix vh = slice_cols(vm, h * dh, dh);
        Matrix s = matmul(qh, transpose(kh));
        for (float & v : s.values()) {
            v = (float) ((double) v * scale);
        }
        Matrix p = causal_softmax(s);
        Matrix ah = matmul(p, vh);
        copy_into_cols(attn_concat, ah, h * dh);
        if (cache != nullptr) {
            probs.push_back(std::move(p));
        }
    }

    fire_linear_hook(hooks, layer_idx, 3, attn_concat);
    Matrix attn_out = linear_forward(layer.o, maybe_quant_input(attn_concat, act));
    Matrix x_mid = add(x, attn_out);

    Matrix xhat2;
    std::vector<float> inv_std2;
    Matrix m = layer_norm_forward(x_mid, layer.ln_mlp, cache ? &xhat2 : nullptr,
                                  cache ? &inv_std2 : nullptr);

    fire_linear_hook(hooks, layer_idx, 4, m);
    Matrix z1 = linear_forward(layer.fc1, maybe_quant_input(m, act));
    Matrix g(z1.rows(), z1.cols());
    for (size_t i = 0; i < z1.size(); i++) {
        g.values()[i] = gelu_tanh(z1.values()[i]);
    }

    fire_linear_hook(hooks, layer_idx, 5, g);
    Matrix mlp_out = linear_forward(layer.fc2, maybe_quant_input(g, act));
    Matrix x_out = add(x_mid, mlp_out);

    if (cache != nullptr) {
        cache->x_in = x;
        cache->xhat1 = std::move(xhat1);
        cache->inv_std1 = std::move(inv_std1);
        cache->u = std::move(u);
        cache->qm = std::move(qm);
        cache->km = std::move(km);
        cache->vm = std::move(vm);
        cache->probs = std::move(probs);
        cache->attn_concat = std::move(attn_concat);
        cache->x_mid = std::move(x_mid);
        cache->xhat2 = std::move(xhat2);
        cache->inv_std2 = std::move(inv_std2);
        cache->m = std::move(m);
        cache->z1 = std::move(z1);
        cache->g = std::move(g);
    }
    return x_out;
}

TransformerLayer zero_grads_like(const TransformerLayer & layer) {
    TransformerLayer g;
    auto zero_linear = [](const Linear & lin) {
        Linear z;
        z.w = Matrix(lin.w.rows(), lin.w.cols());
        z.b.assign(lin.b.size(), 0.0f);
        return z;
    };
    auto zero_ln = [](const LayerNorm & ln) {
        LayerNorm z;
        z.gamma.assign(ln.gamma.size(), 0.0f);
        z.beta.assign(ln.beta.size(), 0.0f);
        return z;
    };
    g.ln_attn = zero_ln(layer.ln_attn);
    g.q = zero_linear(layer.q);
    g.k = zero_linear(layer.k);
    g.v = zero_linear(layer.v);
    g.o = zero_linear(layer.o);
    g.ln_mlp = zero_ln(layer.ln_mlp);
    g.fc1 = zero_linear(layer.fc1);
    g.fc2 = zero_linear(layer.fc2);
    return g;
}

Matrix layer_backward(const TransformerLayer & layer, const LayerCache & cache,
                      const Matrix & dout, size_t n_heads, TransformerLayer & grads) {
    const size_t d = cache.x_in.cols();
    const size_t dh = d / n_heads;
    const double scale = 1.0 / std::sqrt((double) dh);

    // mlp branch: x_out = x_mid + fc2(gelu(fc1(m)))
    add_inplace(grads.fc2.w, matmul_tn(dout, cache.g));
    colsum_into(dout, grads.fc2.b);
    Matrix dg = matmul(dout, layer.fc2.w);

    Matrix dz1(dg.rows(), dg.cols());
    for (size_t i = 0; i < dg.size(); i++) {
        dz1.values()[i] = dg.values()[i] * gelu_tanh_grad(cache.z1.values()[i]);
    }

    add_inplace(grads.fc1.w, matmul_tn(dz1, cache.m));
    colsum_into(dz1, grads.fc1.b);
    Matrix dm = matmul(dz1, layer.fc1.w);

    Matrix dx_mid = layer_norm_backward(cache.xhat2, cache.inv_std2, layer.ln_mlp, dm,
                                        grads.ln_mlp);
    dx_mid = add(dx_mid, dout); // residual

    // attention branch: x_mid = x_in + o(concat_heads)
    add_inplace(grads.o.w, matmul_tn(dx_mid, cache.attn_concat));
    colsum_into(dx_mid, grads.o.b);
    Matrix da = matmul(dx_mid, layer.o.w);

    Matrix dq(cache.qm.rows(), d);
    Matrix dk(cache.qm.rows(), d);
    Matrix dv(cache.qm.rows(), d);
    std::fill(dq.values().begin(), dq.values().end(), 0.0f);
    std::fill(dk.values().begin(), dk.values().end(), 0.0f);
    std::fill(dv.values().begin(), dv.values().end(), 0.0f);

    for (size_t h = 0; h < n_heads; h++) {
        const Matrix qh = slice_cols(cache.qm, h * dh, dh);
        const Matrix kh = slice_cols(cache.km, h * dh, dh);
        const Matrix vh = slice_cols(cache.vm, h * dh, dh);
        const Matrix & p = cache.probs[h];
        const Matrix dah = slice_cols(da, h * dh, dh);

        Matrix dp = matmul(dah, transpose(vh));
        Matrix dvh = matmul_tn(p, dah);

        // softmax rows: ds = p .* (dp - sum(dp .* p)); masked entries keep p = 0
        Matrix ds(p.rows(), p.cols());
        for (size_t i = 0; i < p.rows(); i++) {
            const float * pr = p.row(i);
            const float * dpr = dp.row(i);
            double dot = 0.0;
            for (size_t j = 0; j <= i; j++) {
                dot += (double) dpr[j] * (double) pr[j];
            }
            float * dst = ds.row(i);
            for (size_t j = 0; j < p.cols(); j++) {
                dst[j] = j <= i ? (float) ((double) pr[j] * ((double) dpr[j] - dot) * scale)
                                : 0.0f;
            }
        }

        Matrix dqh = matmul(ds, kh);
        Matrix dkh = matmul_tn(ds, qh);
        copy_into_cols(dq, dqh, h * dh);
        copy_into_cols(dk, dkh, h * dh);
        copy_into_cols(dv, dvh, h * dh);
    }

    add_inplace(grads.q.w, matmul_tn(dq, cache.u));
    colsum_into(dq, grads.q.b);
    add_inplace(grads.k.w, matmul_tn(dk, cache.u));
    colsum_into(dk, grads.k.b);
    add_inplace(grads.v.w, matmul_tn(dv, cache.u));
    colsum_into(dv, grads.v.b);

    Matrix du = add(add(matmul(dq, layer.q.w), matmul(dk, layer.k.w)),
                    matmul(dv, layer.v.w));
    Matrix dx = layer_norm_backward(cache.xhat1, cache.inv_std1, layer.ln_attn, du,
                                    grads.ln_attn);
    return add(dx, dx_mid); // residual
}

ToyModel apply_plan_weights(const ToyModel & model, const QuantizationPlan & plan) {
    plan.validate();
    ToyModel out = model;
    for (const std::string & name : linear_names(model.config)) {
        const LayerQuantSpec spec = plan.spec_for(name);
        if (spec.weight_scheme.passthrough()) {
            continue;
        }
        Linear & lin = linear_by_name(out, name);
        lin.w = fake_quant(lin.w, spec.weight_scheme, TensorRole::weight);
    }
    return out;
}

namespace {

Matrix embed(const ToyModel & model, std::span<const int32_t> tokens) {
    const size_t d = model.config.d_model;
    Matrix x((size_t) tokens.size(), d);
    for (size_t t = 0; t < tokens.size(); t++) {
        const float * te = model.tok_emb.row((size_t) tokens[t]);
        const float * pe = model.pos_emb.row(t);
        float * dst = x.row(t);
        for (size_t c = 0; c < d; c++) {
            dst[c] = te[c] + pe[c];
        }
    }
    return x;
}

void check_tokens(const ToyModel & model, std::span<const int32_t> tokens) {
    if (tokens.empty()) {
        throw std::invalid_argument("forward: empty token sequence");
    }
    if (tokens.size() > model.config.max_seq_len) {
        throw std::invalid_argument("forward: sequence longer than max_seq_len");
    }
    for (int32_t t : tokens) {
        if (t < 0 || (size_t) t >= model.config.vocab_size) {
            throw std::invalid_argument("forward: token id out of vocabulary");
        }
    }
}

Matrix forward_on(const ToyModel & model, std::span<const int32_t> tokens,
                  const QuantScheme * act, const ForwardHooks * hooks) {
    check_tokens(model, tokens);
    Matrix x = embed(model, tokens);
    for (size_t l = 0; l < model.layers.size(); l++) {
        if (hooks != nullptr && hooks->on_layer_input) {
            hooks->on_layer_input(l, x);
        }
        x = layer_forward(model.layers[l], x, model.config.n_heads, nullptr, act, hooks, l);
    }
    Matrix y = layer_norm_forward(x, model.ln_final);
    return matmul(y, transpose(model.head));
}

// Sum of next-token NLL over the window plus the transition count.
std::pair<double, size_t> window_nll(const ToyModel & model, std::span<const int32_t> window,
                                     const QuantScheme * act) {
    const Matrix logits = forward_on(model, window, act, nullptr);
    double nll = 0.0;
    for (size_t t = 0; t + 1 < window.size(); t++) {
        const float * row = logits.row(t);
        double mx = (double) row[0];
        for (size_t c = 1; c < logits.cols(); c++) {
            mx = std::max(mx, (double) row[c]);
        }
        double sum = 0.0;
        for (size_t c = 0; c < logits.cols(); c++) {
            sum += std::exp((double) row[c] - mx);
        }
        const double lse = mx + std::log(sum);
        nll += lse - (double) row[(size_t) window[t + 1]];
    }
    return {nll, window.size() - 1};
}

} // namespace

Matrix forward(const ToyModel & model, std::span<const int32_t> tokens,
               const QuantizationPlan * plan, const ForwardHooks * hooks) {
    if (plan == nullptr) {
        return forward_on(model, tokens, nullptr, hooks);
    }
    plan->validate();
    const QuantScheme * act =
        plan->act_scheme.has_value() ? &plan->act_scheme.value() : nullptr;
    if (!plan->quantizes_weights()) {
        return forward_on(model, tokens, act, hooks);
    }
    const ToyModel quantized = apply_plan_weights(model, *plan);
    return forward_on(quantized, tokens, act, hooks);
}

double perplexity(const ToyModel & model, std::span<const int32_t> tokens,
                  const QuantizationPlan * plan) {
    if (tokens.size() < 2) {
        throw std::invalid_argument("perplexity: need at least 2 tokens");
    }
    const ToyModel * net = &model;
    ToyModel quantized;
    const QuantScheme * act = nullptr;
    if (plan != nullptr) {
        plan->validate();
        if (plan->act_scheme.has_value()) {
            act = &plan->act_scheme.value();
        }
        if (plan->quantizes_weights()) {
            quantized = apply_plan_weights(model, *plan);
            net = &quantized;
        }
    }

    const size_t t = model.config.max_seq_len;
    double nll = 0.0;
    size_t transitions = 0;
    for (size_t off = 0; off + 1 < tokens.size(); off += t) {
        const size_t len = std::min(t, tokens.size() - off);
        if (len < 2) {
            break;
        }
        auto [w_nll, w_count] = window_nll(*net, tokens.subspan(off, len), act);
        nll += w_nll;
        transitions += w_count;
    }
    return std::exp(nll / (double) transitions);
}

std::string to_string(DegradationClass c) {
    switch (c) {
        case DegradationClass::class1: return "Class1";
        case DegradationClass::class2: return "Class2";
        case DegradationClass::class3: return "Class3";
    }
    return "?";
}

DegradationClass classify_delta(double delta_ppl) {
    if (std::isnan(delta_ppl)) {
        throw std::invalid_argument("classify_delta: NaN perplexity delta");
    }
    if (delta_ppl <= 0.1) {
        return DegradationClass::class1;
    }
    if (delta_ppl <= 0.5) {
        return DegradationClass::class2;
    }
    return DegradationClass::class3;
}

namespace {

// Flat views over every trainable tensor, in a fixed order shared by the
// model and its gradient mirror.
std::vector<std::span<float>> param_views(ToyModel & m) {
    std::vector<std::span<float>> out;
    out.push_back(m.tok_emb.values());
    out.push_back(m.pos_emb.values());
    for (auto & layer : m.layers) {
        out.push_back(std::span<float>(layer.ln_attn.gamma));
        out.push_back(std::span<float>(layer.ln_attn.beta));
        for (Linear * lin : {&layer.q, &layer.k, &layer.v, &layer.o}) {
            out.push_back(lin->w.values());
            out.push_back(std::span<float>(lin->b));
        }
        out.push_back(std::span<float>(layer.ln_mlp.gamma));
        out.push_back(std::span<float>(layer.ln_mlp.beta));
        for (Linear * lin : {&layer.fc1, &layer.fc2}) {
            out.push_back(lin->w.values());
            out.push_back(std::span<float>(lin->b));
        }
    }
    out.push_back(std::span<float>(m.ln_final.gamma));
    out.push_back(std::span<float>(m.ln_final.beta));
    out.push_back(m.head.values());
    return out;
}

ToyModel zero_model_like(const ToyModel & m) {
    ToyModel z;
    z.config = m.config;
    z.tok_emb = Matrix(m.tok_emb.rows(), m.tok_emb.cols());
    z.pos_emb = Matrix(m.pos_emb.rows(), m.pos_emb.cols());
    z.layers.reserve(m.layers.size());
    for (const auto & layer : m.layers) {
        z.layers.push_back(zero_grads_like(layer));
    }
    z.ln_final.gamma.assign(m.ln_final.gamma.size(), 0.0f);
    z.ln_final.beta.assign(m.ln_final.beta.size(), 0.0f);
    z.head = Matrix(m.head.rows(), m.head.cols());
    return z;
}

struct Adam {
    double beta1, beta2, eps;
    size_t step = 0;
    std::vector<std::vector<double>> m, v;

    Adam(const std::vector<std::span<float>> & params, const TrainOptions & opts)
        : beta1(opts.adam_beta1), beta2(opts.adam_beta2), eps(opts.adam_eps) {
        m.reserve(params.size());
        v.reserve(params.size());
        for (const auto & p : params) {
            m.emplace_back(p.size(), 0.0);
            v.emplace_back(p.size(), 0.0);
        }
    }

    void update(std::vector<std::span<float>> & params,
                const std::vector<std::span<float>> & grads, double lr) {
        step++;
        const double c1 = 1.0 - std::pow(beta1, (double) step);
        const double c2 = 1.0 - std::pow(beta2, (double) step);
        for (size_t i = 0; i < params.size(); i++) {
            auto & mi = m[i];
            auto & vi = v[i];
            auto p = params[i];
            auto g = grads[i];
            for (size_t j = 0; j < p.size(); j++) {
                const double gj = (double) g[j];
                mi[j] = beta1 * mi[j] + (1.0 - beta1) * gj;
                vi[j] = beta2 * vi[j] + (1.0 - beta2) * gj * gj;
                const double mhat = mi[j] / c1;
                const double vhat = vi[j] / c2;
                p[j] = (float) ((double) p[j] - lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

} // namespace

TrainResult train_toy(const ToyModelConfig & config, std::span<const int32_t> corpus,
                      const TrainOptions & opts) {
    config.validate();
    if (corpus.size() < 2) {
        throw std::invalid_argument("train_toy: corpus needs at least 2 tokens");
    }
    if (opts.batch_size < 1) {
        throw std::invalid_argument("train_toy: batch_size must be at least 1");
    }

    TrainResult result;
    result.model = init_model(config);
    ToyModel & model = result.model;
    if (opts.steps == 0) {
        return result;
    }

    const size_t t_win = std::min(config.max_seq_len, corpus.size() - 1);
    const size_t n_starts = corpus.size() - t_win; // window spans t_win + 1 tokens

    auto params = param_views(model);
    ToyModel grad_mirror = zero_model_like(model);
    auto grads = param_views(grad_mirror);
    Adam adam(params, opts);
    Rng rng(opts.seed);

    const size_t vocab = config.vocab_size;
    const size_t n_heads = config.n_heads;

    for (size_t step = 0; step < opts.steps; step++) {
        for (auto g : grads) {
            std::fill(g.begin(), g.end(), 0.0f);
        }

        double loss_acc = 0.0;
        size_t positions = 0;
        const double inv_total = 1.0 / (double) (opts.batch_size * t_win);

        for (size_t b = 0; b < opts.batch_size; b++) {
            const size_t start = rng.index(n_starts);
            std::span<const int32_t> inputs = corpus.subspan(start, t_win);
            std::span<const int32_t> targets = corpus.subspan(start + 1, t_win);

            // forward with caches
            Matrix x = embed(model, inputs);
            std::vector<LayerCache> caches(model.layers.size());
            for (size_t l = 0; l < model.layers.size(); l++) {
                x = layer_forward(model.layers[l], x, n_heads, &caches[l]);
            }
            Matrix xhat_f;
            std::vector<float> inv_std_f;
            Matrix y = layer_norm_forward(x, model.ln_final, &xhat_f, &inv_std_f);
            Matrix logits = matmul(y, transpose(model.head));

            // loss and dlogits
            Matrix dlogits(t_win, vocab);
            for (size_t t = 0; t < t_win; t++) {
                const float * row = logits.row(t);
                double mx = (double) row[0];
                for (size_t c = 1; c < vocab; c++) {
                    mx = std::max(mx, (double) row[c]);
                }
                double sum = 0.0;
                for (size_t c = 0; c < vocab; c++) {
                    sum += std::exp((double) row[c] - mx);
                }
                const double lse = mx + std::log(sum);
                const size_t target = (size_t) targets[t];
                loss_acc += lse - (double) row[target];
                positions++;
                float * drow = dlogits.row(t);
                for (size_t c = 0; c < vocab; c++) {
                    const double p = std::exp((double) row[c] - mx) / sum;
                    drow[c] = (float) ((p - (c == target ? 1.0 : 0.0)) * inv_total);
                }
            }

            // backward
            add_inplace(grad_mirror.head, matmul_tn(dlogits, y));
            Matrix dy = matmul(dlogits, model.head);
            Matrix dx = layer_norm_backward(xhat_f, inv_std_f, model.ln_final, dy,
                                            grad_mirror.ln_final);
            for (size_t l = model.layers.size(); l-- > 0;) {
                dx = layer_backward(model.layers[l], caches[l], dx, n_heads,
                                    grad_mirror.layers[l]);
            }
            // embedding scatter
            for (size_t t = 0; t < t_win; t++) {
                const float * src = dx.row(t);
                float * te = grad_mirror.tok_emb.row((size_t) inputs[t]);
                float * pe = grad_mirror.pos_emb.row(t);
                for (size_t c = 0; c < config.d_model; c++) {
                    te[c] += src[c];
                    pe[c] += src[c];
                }
            }
        }

        const double loss = loss_acc / (double) positions;
        if (!std::isfinite(loss)) {
            throw TrainingError("train_toy: loss diverged at step " + std::to_string(step));
        }
        result.losses.push_back(loss);

        const double lr = opts.linear_decay
                              ? opts.lr * (1.0 - (double) step / (double) opts.steps)
                              : opts.lr;
        adam.update(params, grads, lr);
    }

    result.final_loss = result.losses.back();
    return result;
}

namespace {

double quantized_bits(size_t rows, size_t cols, const QuantScheme * scheme) {
    if (scheme == nullptr || scheme->passthrough()) {
        return 0.0;
    }
    const auto spans = partition_groups(rows, cols, *scheme, TensorRole::weight);
    return (double) (rows * cols) * effective_bits(*scheme, spans.front().second);
}

} // namespace

ModelBytes model_bytes(const ToyModel & model, const QuantizationPlan * plan) {
    double q_bits = 0.0;   // planned linears
    double fp_elems = 0.0; // everything else

    fp_elems += (double) model.tok_emb.size();
    fp_elems += (double) model.pos_emb.size();
    fp_elems += (double) model.head.size();
    fp_elems += (double) (model.ln_final.gamma.size() + model.ln_final.beta.size());

    for (size_t l = 0; l < model.layers.size(); l++) {
        const auto & layer = model.layers[l];
        fp_elems += (double) (layer.ln_attn.gamma.size() + layer.ln_attn.beta.size());
        fp_elems += (double) (layer.ln_mlp.gamma.size() + layer.ln_mlp.beta.size());
        const Linear * lins[6] = {&layer.q, &layer.k, &layer.v, &layer.o, &layer.fc1,
                                  &layer.fc2};
        for (size_t s = 0; s < 6; s++) {
            fp_elems += (double) lins[s]->b.size();
            const QuantScheme * scheme = nullptr;
            LayerQuantSpec spec;
            if (plan != nullptr) {
                spec = plan->spec_for("layer" + std::to_string(l) + "." +
                                      linear_short_name(s));
                scheme = &spec.weight_scheme;
            }
            q_bits += quantized_bits(lins[s]->w.rows(), lins[s]->w.cols(), scheme);
            if (scheme == nullptr || scheme->passthrough()) {
                fp_elems += (double) lins[s]->w.size();
            }
        }
    }

    ModelBytes out;
    out.fp32_total = (fp_elems * 32.0 + q_bits) / 8.0;
    out.fp16_total = (fp_elems * 16.0 + q_bits) / 8.0;
    return out;
}

} // namespace ptq
