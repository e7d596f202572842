#pragma once

#include "ptq/matrix.hpp"
#include "ptq/model.hpp"
#include "ptq/quant.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ptq {

// Per-linear calibration inputs X (in_dim x samples*seq_len, Eq-style column
// samples) plus per-transformer-layer input batches for layer distillation.
struct CalibrationSet {
    uint64_t seed = 0;
    size_t samples = 0;
    size_t seq_len = 0;
    std::vector<std::string> names; // parallel to inputs
    std::vector<Matrix> inputs;
    std::vector<std::vector<Matrix>> layer_batches; // [layer][sample]: seq x d_model

    const Matrix * find(const std::string & name) const;
};

// Full-precision forward passes over `samples` seeded random corpus windows
// (windows may overlap), recording every linear input and layer input.
CalibrationSet capture_calibration(const ToyModel & model, std::span<const int32_t> corpus,
                                   size_t samples, size_t seq_len, uint64_t seed);

struct GptqOptions {
    double damp_ratio = 0.01; // relative diagonal regularization
};

struct OptimizerOptions {
    std::vector<double> learning_rates = {1e-3, 1e-4, 1e-5, 1e-6};
    size_t iterations = 50;
    enum class Schedule : uint8_t { linear_decay, constant };
    Schedule schedule = Schedule::linear_decay;
    size_t batch_size = 1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
};

// Plain round-to-nearest onto the per-group grid. No calibration.
QuantizedTensor rtn(const Matrix & w, const QuantScheme & scheme);

// Squared Frobenius norm of (W - What) X.
double layer_objective(const Matrix & w, const QuantizedTensor & q, const Matrix & x);

// Hessian-compensated column sweep: H = 2XX^T (sample-count normalized),
// relative damping, U the upper Cholesky factor of H^-1; each column is
// quantized against the grid computed from the ORIGINAL weights and its
// rounding error propagated to later columns through U.
QuantizedTensor gptq(const Matrix & w, const Matrix & x, const QuantScheme & scheme,
                     const GptqOptions & opts = {});

// Straight-through Adam on latent weights V (initialized to W) minimizing
// ||fake_quant(V) X_b - W X_b||^2 over sampled calibration columns; group
// params recomputed from V each step; per learning rate the best full-X
// objective iterate is kept, and the global best across the sweep returned.
QuantizedTensor zq_local(const Matrix & w, const Matrix & x, const QuantScheme & scheme,
                         const OptimizerOptions & opts);

struct ZqGlobalResult {
    TransformerLayer layer; // best-iterate LN/biases with dequantized weights baked
    std::map<std::string, QuantizedTensor> weights; // "q","k","v","o","fc1","fc2"
    double best_mse = 0.0;  // teacher-student MSE over all batches
    double init_mse = 0.0;  // same measure for the RTN initialization
};

// Layer-wise distillation: frozen teacher, student with latent fake-quant
// linear weights (layernorm/bias trainable in full precision unless frozen),
// MSE on layer outputs, Adam with the configured LR sweep and best-iterate
// selection across the whole sweep.
ZqGlobalResult zq_global(const TransformerLayer & layer, const std::vector<Matrix> & layer_inputs,
                         size_t n_heads, const QuantScheme & scheme, const OptimizerOptions & opts,
                         bool freeze_ln = false);

struct LayerReport {
    std::string name;
    std::string method;
    double objective_rtn = 0.0;   // layer objective of the RTN baseline
    double objective_after = 0.0; // layer objective of the returned tensor
    double recon_error = 0.0;
    double eff_bits = 0.0;
};

struct QuantizeResult {
    ToyModel model; // dequantized weights baked in; zq-global also updates LN/bias
    std::map<std::string, QuantizedTensor> tensors;
    std::vector<LayerReport> reports;
};

// Applies a plan to every planned linear. Methods other than rtn require a
// calibration entry for each planned linear; zq_global additionally requires
// that all linears of a transformer layer share the method and scheme.
QuantizeResult quantize_model(const ToyModel & model, const QuantizationPlan & plan,
                              const CalibrationSet & calib, const GptqOptions & gopts = {},
                              const OptimizerOptions & oopts = {});

} // namespace ptq
