#pragma once

#include "ptq/matrix.hpp"
#include "ptq/quant.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ptq {

struct ToyModelConfig {
    size_t vocab_size = 256; // byte-level
    size_t d_model = 128;
    size_t n_heads = 4;
    size_t n_layers = 2;
    size_t d_ff = 512;
    size_t max_seq_len = 64;
    uint64_t seed = 0;

    void validate() const; // throws std::invalid_argument
};

// y = x * w^T + b with w stored (out, in)
struct Linear {
    Matrix w;
    std::vector<float> b;
};

struct LayerNorm {
    std::vector<float> gamma;
    std::vector<float> beta;
};

// Pre-layernorm decoder block: x + attn(ln1(x)), then x + mlp(ln2(x)).
struct TransformerLayer {
    LayerNorm ln_attn;
    Linear q, k, v, o;
    LayerNorm ln_mlp;
    Linear fc1, fc2;
};

struct ToyModel {
    ToyModelConfig config;
    Matrix tok_emb; // vocab x d_model
    Matrix pos_emb; // max_seq_len x d_model
    std::vector<TransformerLayer> layers;
    LayerNorm ln_final;
    Matrix head; // vocab x d_model, untied, no bias
};

// Weights drawn N(0, 0.02), biases and layernorm betas zero, gammas one.
// Seeded by config.seed.
ToyModel init_model(const ToyModelConfig & config);

enum class PtqMethod : uint8_t { rtn, gptq, zq_local, zq_global };

std::string to_string(PtqMethod m);
PtqMethod ptq_method_from_string(const std::string & s);

struct LayerQuantSpec {
    QuantScheme weight_scheme; // bits 16 leaves the layer in full precision
    PtqMethod method = PtqMethod::rtn;
};

// Which linears get quantized and how. Embeddings and the output head stay
// full precision. The activation scheme, when set, fake-quantizes every
// linear input dynamically (params from the live tensor each forward).
struct QuantizationPlan {
    LayerQuantSpec default_spec;
    std::map<std::string, LayerQuantSpec> overrides; // by linear name
    std::optional<QuantScheme> act_scheme;
    bool freeze_ln = false; // zq_global: keep layernorm/bias at teacher values

    LayerQuantSpec spec_for(const std::string & name) const;
    bool quantizes_weights() const;
    void validate() const;
};

// Linear names are "layer<i>.<q|k|v|o|fc1|fc2>".
std::vector<std::string> linear_names(const ToyModelConfig & config);
Linear & linear_by_name(ToyModel & model, const std::string & name);
const Linear & linear_by_name(const ToyModel & model, const std::string & name);

struct ForwardHooks {
    // fires with each linear's full-precision input rows (name, x: seq x in_dim)
    std::function<void(const std::string &, const Matrix &)> on_linear_input;
    // fires with each transformer layer's input (layer index, x: seq x d_model)
    std::function<void(size_t, const Matrix &)> on_layer_input;
};

// Logits (seq_len x vocab). A plan replaces each planned linear weight with
// its dequantized round-to-nearest form and fake-quantizes linear inputs;
// optimizer-based methods bake their weights into a model copy upstream
// (see quantize_model) and evaluate with a passthrough weight plan.
Matrix forward(const ToyModel & model, std::span<const int32_t> tokens,
               const QuantizationPlan * plan = nullptr,
               const ForwardHooks * hooks = nullptr);

// Model copy with every planned linear weight replaced by fake_quant(w).
ToyModel apply_plan_weights(const ToyModel & model, const QuantizationPlan & plan);

// exp(mean next-token NLL) over non-overlapping windows of max_seq_len,
// teacher forcing; a trailing window shorter than 2 tokens is dropped.
double perplexity(const ToyModel & model, std::span<const int32_t> tokens,
                  const QuantizationPlan * plan = nullptr);

enum class DegradationClass : uint8_t { class1 = 1, class2 = 2, class3 = 3 };

std::string to_string(DegradationClass c);

// <= 0.1 Class1 (negatives included), <= 0.5 Class2, else Class3; NaN rejected.
DegradationClass classify_delta(double delta_ppl);

struct TrainOptions {
    size_t steps = 400;
    double lr = 1e-3;
    size_t batch_size = 2;
    uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    bool linear_decay = true;
};

struct TrainResult {
    ToyModel model;
    double final_loss = 0.0;
    std::vector<double> losses; // per step, mean next-token NLL
};

// Adam on next-token cross-entropy over seeded random corpus windows.
// Deterministic given (config, corpus, options). Model init comes from
// config.seed; options.seed drives batch sampling.
TrainResult train_toy(const ToyModelConfig & config, std::span<const int32_t> corpus,
                      const TrainOptions & opts);

struct ModelBytes {
    double fp32_total = 0.0; // full-precision tensors at 32 bits/element
    double fp16_total = 0.0; // same tally with full-precision tensors at 16 bits
};

// Planned linears count effective_bits(scheme, group_len) bits per element;
// everything else counts full precision.
ModelBytes model_bytes(const ToyModel & model, const QuantizationPlan * plan = nullptr);

// Single transformer block on x (seq x d_model); cache, activation scheme
// and hooks are optional. Exposed for the trainer and layer-wise distillation.
struct LayerCache {
    Matrix x_in;
    Matrix xhat1;
    std::vector<float> inv_std1;
    Matrix u; // ln_attn output
    Matrix qm, km, vm;
    std::vector<Matrix> probs; // per head, seq x seq
    Matrix attn_concat;
    Matrix x_mid;
    Matrix xhat2;
    std::vector<float> inv_std2;
    Matrix m; // ln_mlp output
    Matrix z1; // pre-gelu
    Matrix g;  // gelu output
};

Matrix layer_forward(const TransformerLayer & layer, const Matrix & x, size_t n_heads,
                     LayerCache * cache = nullptr, const QuantScheme * act = nullptr,
                     const ForwardHooks * hooks = nullptr, size_t layer_idx = 0);

// Gradient wrt the layer input; parameter grads accumulate into `grads`
// (a zeroed same-shape TransformerLayer).
Matrix layer_backward(const TransformerLayer & layer, const LayerCache & cache,
                      const Matrix & dout, size_t n_heads, TransformerLayer & grads);

TransformerLayer zero_grads_like(const TransformerLayer & layer);

// 0.5x(1 + tanh(0.7978845608028654 (x + 0.044715 x^3)))
float gelu_tanh(float x);
float gelu_tanh_grad(float x);

// Row-wise layernorm with eps 1e-5. Optionally records the normalized rows
// and per-row 1/std for the backward pass.
Matrix layer_norm_forward(const Matrix & x, const LayerNorm & ln, Matrix * xhat_out = nullptr,
                          std::vector<float> * inv_std_out = nullptr);

Matrix layer_norm_backward(const Matrix & xhat, const std::vector<float> & inv_std,
                           const LayerNorm & ln, const Matrix & dy, LayerNorm & grads);

} // namespace ptq
