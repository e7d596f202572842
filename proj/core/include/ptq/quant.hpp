#pragma once

#include "ptq/matrix.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ptq {

enum class QuantMode : uint8_t { symmetric, asymmetric };

enum class Granularity : uint8_t { per_tensor, per_row, block, per_token };

enum class TensorRole : uint8_t { weight, activation };

// Uniform affine grid description. bits in [2,8] selects a real grid;
// bits 16 is the passthrough marker: values flow through untouched and no
// integer representation exists.
struct QuantScheme {
    int bits = 8;
    QuantMode mode = QuantMode::asymmetric;
    Granularity granularity = Granularity::per_row;
    int block_size = 0;          // used when granularity == block
    int param_storage_bits = 16; // size accounting for scale/zero storage

    bool passthrough() const { return bits == 16; }
    void validate() const; // throws std::invalid_argument
    std::string label() const;
};

// One group's affine grid: x ~ scale * code + zero with code in [qmin, qmax].
struct QuantParams {
    float scale = 1.0f;
    float zero = 0.0f;
    int qmin = 0;
    int qmax = 0;
};

struct QuantGroup {
    size_t offset = 0;
    size_t len = 0;
    QuantParams params;
};

// Integer codes plus per-group grids. Groups tile [0, rows*cols) exactly
// once in ascending offset order and all share the same length.
struct QuantizedTensor {
    size_t rows = 0;
    size_t cols = 0;
    QuantScheme scheme;
    std::vector<int32_t> codes; // one per element, row-major
    std::vector<QuantGroup> groups;

    size_t size() const { return rows * cols; }
    size_t group_len() const { return groups.empty() ? 0 : groups.front().len; }
};

// [qmin, qmax] for a bit width and mode. Symmetric grids drop the extra
// negative code: qmin = -qmax = -(2^(bits-1) - 1).
std::pair<int, int> quant_range(int bits, QuantMode mode);

// Scale/zero from the data range. Symmetric: scale = max|x| / qmax, zero 0.
// Asymmetric: scale = (max - min) / qmax, zero = min. Constant input
// degenerates to scale 1 so every code lands on 0.
QuantParams compute_qparams(std::span<const float> values, const QuantScheme & scheme);

// code = clamp(round_half_even((x - zero) / scale), qmin, qmax)
void quantize_group(std::span<const float> values, const QuantParams & p,
                    std::span<int32_t> out);

// x_hat = scale * code + zero; codes outside [qmin, qmax] are rejected.
void dequantize_group(std::span<const int32_t> codes, const QuantParams & p,
                      std::span<float> out);

// Contiguous (offset, len) ranges tiling the row-major element space.
std::vector<std::pair<size_t, size_t>> partition_groups(size_t rows, size_t cols,
                                                        const QuantScheme & scheme,
                                                        TensorRole role);

QuantizedTensor quantize_tensor(const Matrix & m, const QuantScheme & scheme,
                                TensorRole role = TensorRole::weight);

Matrix dequantize_tensor(const QuantizedTensor & q);

// dequantize(quantize(x)) per group; params computed from the live data.
Matrix fake_quant(const Matrix & m, const QuantScheme & scheme, TensorRole role);

// Stored bits per element: code bits plus amortized group parameters
// (scale, and zero for asymmetric grids) at param_storage_bits each.
double effective_bits(const QuantScheme & scheme, size_t group_len);

// Mean squared elementwise error between w and the dequantized q.
double reconstruction_error(const Matrix & w, const QuantizedTensor & q);

} // namespace ptq
