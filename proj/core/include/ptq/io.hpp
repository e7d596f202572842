#pragma once

#include "ptq/matrix.hpp"
#include "ptq/model.hpp"
#include "ptq/quant.hpp"

#include <map>
#include <optional>
#include <string>
#include <variant>

namespace ptq {

// Tensor file layout (all integers little-endian):
//   magic "PTQT" | u32 format_version (= 1) | u32 header_len
//   | header_len bytes of UTF-8 JSON | payload
// real32 payload: 4 bytes/element, row-major.
// codes payload: packed codes biased by -qmin (5-bit widths as a 4-bit plane
// followed by a 1-bit plane, others dense LSB-first), then one (scale, zero)
// real32 pair per group in ascending group order.
inline constexpr uint32_t k_tensor_format_version = 1;

using TensorData = std::variant<Matrix, QuantizedTensor>;

struct TensorMeta {
    std::string name;
    std::string role; // "weight" or "activation"
};

void write_tensor(const std::string & path, const Matrix & m, const TensorMeta & meta = {});
void write_tensor(const std::string & path, const QuantizedTensor & q,
                  const TensorMeta & meta = {});

TensorData read_tensor(const std::string & path, TensorMeta * meta = nullptr);

// Checkpoint directory: manifest.json plus one tensor file per parameter.
// Linears present in `tensors` are persisted as codes; loading dequantizes
// them, reproducing the in-memory baked weights bit-exactly.
void save_checkpoint(const ToyModel & model, const std::string & dir,
                     const QuantizationPlan * plan = nullptr,
                     const std::map<std::string, QuantizedTensor> * tensors = nullptr);

struct Checkpoint {
    ToyModel model;
    std::optional<QuantizationPlan> plan;
};

Checkpoint load_checkpoint(const std::string & dir);

// JSON (de)serialization shared by manifests and plan files.
std::string scheme_to_json(const QuantScheme & s);
QuantScheme scheme_from_json(const std::string & j);
std::string plan_to_json(const QuantizationPlan & p);
QuantizationPlan plan_from_json(const std::string & j);

} // namespace ptq
