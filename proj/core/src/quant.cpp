#include "ptq/quant.hpp"

#include "ptq/errors.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ptq {

void QuantScheme::validate() const {
    if (bits == 16) {
        return; // passthrough, nothing else applies
    }
    if (bits < 2 || bits > 8) {
        throw std::invalid_argument("quant scheme: bits must be in [2,8] or 16");
    }
    if (granularity == Granularity::block) {
        if (block_size <= 0) {
            throw std::invalid_argument("quant scheme: block granularity needs block_size > 0");
        }
    }
    if (param_storage_bits <= 0) {
        throw std::invalid_argument("quant scheme: param_storage_bits must be positive");
    }
}

std::string QuantScheme::label() const {
    if (passthrough()) {
        return "fp16";
    }
    std::string s = "w" + std::to_string(bits);
    s += mode == QuantMode::symmetric ? "_sym" : "_asym";
    switch (granularity) {
        case Granularity::per_tensor: s += "_tensor"; break;
        case Granularity::per_row:    s += "_row"; break;
        case Granularity::block:      s += "_block" + std::to_string(block_size); break;
        case Granularity::per_token:  s += "_token"; break;
    }
    return s;
}

std::pair<int, int> quant_range(int bits, QuantMode mode) {
    if (mode == QuantMode::symmetric) {
        const int qmax = (1 << (bits - 1)) - 1;
        return {-qmax, qmax};
    }
    return {0, (1 << bits) - 1};
}

QuantParams compute_qparams(std::span<const float> values, const QuantScheme & scheme) {
    if (values.empty()) {
        throw std::invalid_argument("compute_qparams: empty group");
    }
    auto [qmin, qmax] = quant_range(scheme.bits, scheme.mode);
    QuantParams p;
    p.qmin = qmin;
    p.qmax = qmax;

    if (scheme.mode == QuantMode::symmetric) {
        float amax = 0.0f;
        for (float v : values) {
            amax = std::max(amax, std::fabs(v));
        }
        p.scale = amax > 0.0f ? amax / (float) qmax : 1.0f;
        p.zero = 0.0f;
    } else {
        float lo = values[0];
        float hi = values[0];
        for (float v : values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const float range = hi - lo;
        p.scale = range > 0.0f ? range / (float) qmax : 1.0f;
        p.zero = lo;
    }
    return p;
}

namespace {

// round half to even, computed in double so float ties stay exact
inline int32_t round_code(double x) {
    return (int32_t) std::nearbyint(x);
}

} // namespace

void quantize_group(std::span<const float> values, const QuantParams & p,
                    std::span<int32_t> out) {
    if (values.size() != out.size()) {
        throw std::invalid_argument("quantize_group: size mismatch");
    }
    const double scale = (double) p.scale;
    const double zero = (double) p.zero;
    for (size_t i = 0; i < values.size(); i++) {
        const double t = ((double) values[i] - zero) / scale;
        int32_t c = round_code(t);
        c = std::clamp(c, p.qmin, p.qmax);
        out[i] = c;
    }
}

void dequantize_group(std::span<const int32_t> codes, const QuantParams & p,
                      std::span<float> out) {
    if (codes.size() != out.size()) {
        throw std::invalid_argument("dequantize_group: size mismatch");
    }
    for (size_t i = 0; i < codes.size(); i++) {
        if (codes[i] < p.qmin || codes[i] > p.qmax) {
            throw std::out_of_range("dequantize_group: code outside quant range");
        }
        out[i] = (float) ((double) p.scale * (double) codes[i] + (double) p.zero);
    }
}

std::vector<std::pair<size_t, size_t>> partition_groups(size_t rows, size_t cols,
                                                        const QuantScheme & scheme,
                                                        TensorRole role) {
    scheme.validate();
    const size_t n = rows * cols;
    std::vector<std::pair<size_t, size_t>> spans;

    switch (scheme.granularity) {
        case Granularity::per_tensor:
            spans.emplace_back(0, n);
            break;
        case Granularity::per_row:
            for (size_t r = 0; r < rows; r++) {
                spans.emplace_back(r * cols, cols);
            }
            break;
        case Granularity::per_token:
            if (role != TensorRole::activation) {
                throw std::invalid_argument("partition_groups: per_token is activation-only");
            }
            for (size_t r = 0; r < rows; r++) {
                spans.emplace_back(r * cols, cols);
            }
            break;
        case Granularity::block: {
            const size_t b = (size_t) scheme.block_size;
            if (cols % b != 0) {
                throw IndivisibleBlockError(
                    "block size " + std::to_string(b) + " does not divide row length " +
                    std::to_string(cols));
            }
            for (size_t r = 0; r < rows; r++) {
                for (size_t c = 0; c < cols; c += b) {
                    spans.emplace_back(r * cols + c, b);
                }
            }
            break;
        }
    }
    return spans;
}

QuantizedTensor quantize_tensor(const Matrix & m, const QuantScheme & scheme, TensorRole role) {
    scheme.validate();
    if (scheme.passthrough()) {
        throw std::invalid_argument("quantize_tensor: passthrough scheme has no codes");
    }
    QuantizedTensor q;
    q.rows = m.rows();
    q.cols = m.cols();
    q.scheme = scheme;
    q.codes.resize(m.size());

    const auto spans = partition_groups(m.rows(), m.cols(), scheme, role);
    q.groups.reserve(spans.size());
    const float * src = m.values().data();
    for (auto [off, len] : spans) {
        QuantGroup g;
        g.offset = off;
        g.len = len;
        g.params = compute_qparams({src + off, len}, scheme);
        quantize_group({src + off, len}, g.params, {q.codes.data() + off, len});
        q.groups.push_back(g);
    }
    return q;
}

Matrix dequantize_tensor(const QuantizedTensor & q) {
    Matrix m(q.rows, q.cols);
    float * dst = m.values().data();
    for (const auto & g : q.groups) {
        dequantize_group({q.codes.data() + g.offset, g.len}, g.params, {dst + g.offset, g.len});
    }
    return m;
}

Matrix fake_quant(const Matrix & m, const QuantScheme & scheme, TensorRole role) {
    if (scheme.passthrough()) {
        return m;
    }
    return dequantize_tensor(quantize_tensor(m, scheme, role));
}

double effective_bits(const QuantScheme & scheme, size_t group_len) {
    if (scheme.passthrough()) {
        return 16.0;
    }
    if (group_len == 0) {
        throw std::invalid_argument("effective_bits: empty group");
    }
    const int params_per_group = scheme.mode == QuantMode::asymmetric ? 2 : 1;
    return (double) scheme.bits +
           (double) scheme.param_storage_bits * params_per_group / (double) group_len;
}

double reconstruction_error(const Matrix & w, const QuantizedTensor & q) {
    if (w.rows() != q.rows || w.cols() != q.cols) {
        throw std::invalid_argument("reconstruction_error: shape mismatch");
    }
    const Matrix what = dequantize_tensor(q);
    double acc = 0.0;
    for (size_t i = 0; i < w.size(); i++) {
        const double d = (double) w.values()[i] - (double) what.values()[i];
        acc += d * d;
    }
    return acc / (double) w.size();
}

} // namespace ptq
