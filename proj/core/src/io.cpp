#include "ptq/io.hpp"

#include "ptq/errors.hpp"
#include "ptq/packing.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

using nlohmann::json;

namespace ptq {

namespace {

void put_u32(std::string & out, uint32_t v) {
    out.push_back((char) (v & 0xFF));
    out.push_back((char) ((v >> 8) & 0xFF));
    out.push_back((char) ((v >> 16) & 0xFF));
    out.push_back((char) ((v >> 24) & 0xFF));
}

uint32_t get_u32(const std::string & buf, size_t off) {
    return (uint32_t) (uint8_t) buf[off] | ((uint32_t) (uint8_t) buf[off + 1] << 8) |
           ((uint32_t) (uint8_t) buf[off + 2] << 16) |
           ((uint32_t) (uint8_t) buf[off + 3] << 24);
}

void put_f32(std::string & out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

float get_f32(const std::string & buf, size_t off) {
    const uint32_t bits = get_u32(buf, off);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

std::string mode_name(QuantMode m) {
    return m == QuantMode::symmetric ? "sym" : "asym";
}

QuantMode mode_from_name(const std::string & s) {
    if (s == "sym") return QuantMode::symmetric;
    if (s == "asym") return QuantMode::asymmetric;
    throw FormatError(FormatFault::bad_header, "unknown quant mode: " + s);
}

std::string gran_name(Granularity g) {
    switch (g) {
        case Granularity::per_tensor: return "per_tensor";
        case Granularity::per_row:    return "per_row";
        case Granularity::block:      return "block";
        case Granularity::per_token:  return "per_token";
    }
    return "?";
}

Granularity gran_from_name(const std::string & s) {
    if (s == "per_tensor") return Granularity::per_tensor;
    if (s == "per_row")    return Granularity::per_row;
    if (s == "block")      return Granularity::block;
    if (s == "per_token")  return Granularity::per_token;
    throw FormatError(FormatFault::bad_header, "unknown granularity: " + s);
}

json scheme_json(const QuantScheme & s) {
    return json{{"bits", s.bits},
                {"mode", mode_name(s.mode)},
                {"granularity", gran_name(s.granularity)},
                {"block_size", s.block_size},
                {"param_storage_bits", s.param_storage_bits}};
}

QuantScheme scheme_from(const json & j) {
    QuantScheme s;
    s.bits = j.at("bits").get<int>();
    s.mode = mode_from_name(j.at("mode").get<std::string>());
    s.granularity = gran_from_name(j.at("granularity").get<std::string>());
    s.block_size = j.at("block_size").get<int>();
    s.param_storage_bits = j.at("param_storage_bits").get<int>();
    s.validate();
    return s;
}

void write_file(const std::string & path, const std::string & bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open for writing: " + path);
    }
    out.write(bytes.data(), (std::streamsize) bytes.size());
    if (!out) {
        throw std::runtime_error("write failed: " + path);
    }
}

std::string read_file(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open: " + path);
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

std::string frame(const json & header, const std::string & payload) {
    std::string out = "PTQT";
    put_u32(out, k_tensor_format_version);
    const std::string h = header.dump();
    put_u32(out, (uint32_t) h.size());
    out += h;
    out += payload;
    return out;
}

TensorRole role_from_name(const std::string & s) {
    return s == "activation" ? TensorRole::activation : TensorRole::weight;
}

} // namespace

void write_tensor(const std::string & path, const Matrix & m, const TensorMeta & meta) {
    json header{{"name", meta.name},
                {"role", meta.role.empty() ? "weight" : meta.role},
                {"dtype", "real32"},
                {"shape", {m.rows(), m.cols()}}};
    std::string payload;
    payload.reserve(m.size() * 4);
    for (float v : m.values()) {
        put_f32(payload, v);
    }
    write_file(path, frame(header, payload));
}

void write_tensor(const std::string & path, const QuantizedTensor & q, const TensorMeta & meta) {
    q.scheme.validate();
    const bool planes = q.scheme.bits == 5;
    json header{{"name", meta.name},
                {"role", meta.role.empty() ? "weight" : meta.role},
                {"dtype", "codes"},
                {"shape", {q.rows, q.cols}},
                {"scheme", scheme_json(q.scheme)},
                {"packing", planes ? "planes5" : "dense"}};

    const auto [qmin, qmax] = quant_range(q.scheme.bits, q.scheme.mode);
    (void) qmax;
    const auto biased = codes_to_unsigned(q.codes, qmin, q.scheme.bits);

    std::string payload;
    if (planes) {
        const OddBitPlanes split = split_odd(biased);
        payload.append((const char *) split.low.bytes.data(), split.low.bytes.size());
        payload.append((const char *) split.high.bytes.data(), split.high.bytes.size());
    } else {
        const PackedCodes packed = pack_codes(biased, q.scheme.bits);
        payload.append((const char *) packed.bytes.data(), packed.bytes.size());
    }
    for (const auto & g : q.groups) {
        put_f32(payload, g.params.scale);
        put_f32(payload, g.params.zero);
    }
    write_file(path, frame(header, payload));
}

TensorData read_tensor(const std::string & path, TensorMeta * meta) {
    const std::string buf = read_file(path);
    if (buf.size() < 12) {
        throw FormatError(FormatFault::bad_length, path + ": truncated before header");
    }
    if (buf.compare(0, 4, "PTQT") != 0) {
        throw FormatError(FormatFault::bad_magic, path + ": bad magic");
    }
    const uint32_t version = get_u32(buf, 4);
    if (version != k_tensor_format_version) {
        throw FormatError(FormatFault::bad_version,
                          path + ": unsupported format version " + std::to_string(version));
    }
    const uint32_t header_len = get_u32(buf, 8);
    if (buf.size() < 12 + (size_t) header_len) {
        throw FormatError(FormatFault::bad_length, path + ": truncated header");
    }

    json header;
    try {
        header = json::parse(buf.substr(12, header_len));
    } catch (const json::exception & e) {
        throw FormatError(FormatFault::bad_header, path + ": header is not valid JSON");
    }

    size_t rows, cols;
    std::string dtype;
    try {
        rows = header.at("shape").at(0).get<size_t>();
        cols = header.at("shape").at(1).get<size_t>();
        dtype = header.at("dtype").get<std::string>();
        if (meta != nullptr) {
            meta->name = header.value("name", "");
            meta->role = header.value("role", "weight");
        }
    } catch (const json::exception & e) {
        throw FormatError(FormatFault::bad_header, path + ": missing header field");
    }

    const std::string payload = buf.substr(12 + header_len);
    const size_t n = rows * cols;

    if (dtype == "real32") {
        if (payload.size() != n * 4) {
            throw FormatError(FormatFault::bad_length,
                              path + ": payload length does not match shape");
        }
        Matrix m(rows, cols);
        for (size_t i = 0; i < n; i++) {
            m.values()[i] = get_f32(payload, i * 4);
        }
        return m;
    }
    if (dtype != "codes") {
        throw FormatError(FormatFault::bad_header, path + ": unknown dtype " + dtype);
    }

    QuantizedTensor q;
    q.rows = rows;
    q.cols = cols;
    std::string role;
    std::string packing;
    try {
        q.scheme = scheme_from(header.at("scheme"));
        role = header.value("role", "weight");
        packing = header.at("packing").get<std::string>();
    } catch (const json::exception & e) {
        throw FormatError(FormatFault::bad_header, path + ": missing scheme/packing field");
    }
    const bool planes = q.scheme.bits == 5;
    if (packing != (planes ? "planes5" : "dense")) {
        throw FormatError(FormatFault::bad_header,
                          path + ": packing does not match bit width");
    }

    const auto spans = partition_groups(rows, cols, q.scheme, role_from_name(role));
    const size_t codes_bytes = planes ? packed_payload_size(n, 4) + packed_payload_size(n, 1)
                                      : packed_payload_size(n, q.scheme.bits);
    if (payload.size() != codes_bytes + spans.size() * 8) {
        throw FormatError(FormatFault::bad_length,
                          path + ": payload length does not match shape/bits/groups");
    }

    std::vector<uint32_t> biased;
    if (planes) {
        OddBitPlanes split;
        split.count = n;
        const size_t low_bytes = packed_payload_size(n, 4);
        split.low = {4, n, std::vector<uint8_t>(payload.begin(), payload.begin() + (long) low_bytes)};
        split.high = {1, n,
                      std::vector<uint8_t>(payload.begin() + (long) low_bytes,
                                           payload.begin() + (long) codes_bytes)};
        biased = join_odd(split);
    } else {
        PackedCodes packed;
        packed.bits = q.scheme.bits;
        packed.count = n;
        packed.bytes.assign(payload.begin(), payload.begin() + (long) codes_bytes);
        biased = unpack_codes(packed);
    }

    const auto [qmin, qmax] = quant_range(q.scheme.bits, q.scheme.mode);
    q.codes = unsigned_to_codes(biased, qmin, q.scheme.bits);
    q.groups.reserve(spans.size());
    size_t off = codes_bytes;
    for (auto [g_off, g_len] : spans) {
        QuantGroup g;
        g.offset = g_off;
        g.len = g_len;
        g.params.scale = get_f32(payload, off);
        g.params.zero = get_f32(payload, off + 4);
        g.params.qmin = qmin;
        g.params.qmax = qmax;
        off += 8;
        q.groups.push_back(g);
    }
    for (int32_t c : q.codes) {
        if (c < qmin || c > qmax) {
            throw FormatError(FormatFault::bad_length, path + ": code outside quant range");
        }
    }
    return q;
}

std::string scheme_to_json(const QuantScheme & s) {
    return scheme_json(s).dump();
}

QuantScheme scheme_from_json(const std::string & j) {
    try {
        return scheme_from(json::parse(j));
    } catch (const json::exception & e) {
        throw FormatError(FormatFault::bad_header, "scheme json malformed");
    }
}

namespace {

json plan_json(const QuantizationPlan & p) {
    json overrides = json::object();
    for (const auto & [name, spec] : p.overrides) {
        overrides[name] = {{"scheme", scheme_json(spec.weight_scheme)},
                           {"method", to_string(spec.method)}};
    }
    json j{{"default", {{"scheme", scheme_json(p.default_spec.weight_scheme)},
                        {"method", to_string(p.default_spec.method)}}},
           {"overrides", overrides},
           {"freeze_ln", p.freeze_ln}};
    if (p.act_scheme) {
        j["act_scheme"] = scheme_json(*p.act_scheme);
    } else {
        j["act_scheme"] = nullptr;
    }
    return j;
}

QuantizationPlan plan_from(const json & j) {
    QuantizationPlan p;
    p.default_spec.weight_scheme = scheme_from(j.at("default").at("scheme"));
    p.default_spec.method = ptq_method_from_string(j.at("default").at("method"));
    for (auto it = j.at("overrides").begin(); it != j.at("overrides").end(); ++it) {
        LayerQuantSpec spec;
        spec.weight_scheme = scheme_from(it.value().at("scheme"));
        spec.method = ptq_method_from_string(it.value().at("method"));
        p.overrides[it.key()] = spec;
    }
    if (j.contains("act_scheme") && !j.at("act_scheme").is_null()) {
        p.act_scheme = scheme_from(j.at("act_scheme"));
    }
    p.freeze_ln = j.value("freeze_ln", false);
    p.validate();
    return p;
}

} // namespace

std::string plan_to_json(const QuantizationPlan & p) {
    return plan_json(p).dump(2);
}

QuantizationPlan plan_from_json(const std::string & s) {
    try {
        return plan_from(json::parse(s));
    } catch (const json::exception & e) {
        throw FormatError(FormatFault::bad_header, "plan json malformed");
    }
}

namespace {

Matrix vec_matrix(const std::vector<float> & v) {
    return Matrix(1, v.size(), std::vector<float>(v));
}

std::vector<float> matrix_vec(const Matrix & m) {
    return std::vector<float>(m.values().begin(), m.values().end());
}

struct NamedTensor {
    std::string name;
    const Matrix * matrix = nullptr;            // real32 tensors
    const QuantizedTensor * quantized = nullptr; // codes tensors
    Matrix holder;                               // storage for vector params
};

// fixed checkpoint order: embeddings, per-layer params, final LN, head
std::vector<NamedTensor> checkpoint_tensors(const ToyModel & model,
                                            const std::map<std::string, QuantizedTensor> * tensors) {
    std::vector<NamedTensor> out;
    auto add_matrix = [&](const std::string & name, const Matrix & m) {
        NamedTensor t;
        t.name = name;
        t.matrix = &m;
        out.push_back(std::move(t));
    };
    auto add_vec = [&](const std::string & name, const std::vector<float> & v) {
        NamedTensor t;
        t.name = name;
        t.holder = vec_matrix(v);
        out.push_back(std::move(t));
    };
    // quantized entries are keyed by linear name; the stored tensor keeps
    // the parameter name ("layer0.q" -> "layer0.q.w")
    auto add_weight = [&](const std::string & lin_name, const Matrix & m) {
        if (tensors != nullptr) {
            auto it = tensors->find(lin_name);
            if (it != tensors->end()) {
                NamedTensor t;
                t.name = lin_name + ".w";
                t.quantized = &it->second;
                out.push_back(std::move(t));
                return;
            }
        }
        add_matrix(lin_name + ".w", m);
    };

    add_matrix("tok_emb", model.tok_emb);
    add_matrix("pos_emb", model.pos_emb);
    for (size_t l = 0; l < model.layers.size(); l++) {
        const auto & layer = model.layers[l];
        const std::string prefix = "layer" + std::to_string(l) + ".";
        add_vec(prefix + "ln_attn.gamma", layer.ln_attn.gamma);
        add_vec(prefix + "ln_attn.beta", layer.ln_attn.beta);
        const std::pair<std::string, const Linear *> lins[6] = {
            {"q", &layer.q}, {"k", &layer.k}, {"v", &layer.v},
            {"o", &layer.o}, {"fc1", &layer.fc1}, {"fc2", &layer.fc2}};
        for (const auto & [slot, lin] : lins) {
            add_weight(prefix + slot, lin->w);
            add_vec(prefix + slot + ".b", lin->b);
        }
        add_vec(prefix + "ln_mlp.gamma", layer.ln_mlp.gamma);
        add_vec(prefix + "ln_mlp.beta", layer.ln_mlp.beta);
    }
    add_vec("ln_final.gamma", model.ln_final.gamma);
    add_vec("ln_final.beta", model.ln_final.beta);
    add_matrix("head", model.head);
    return out;
}

} // namespace

void save_checkpoint(const ToyModel & model, const std::string & dir,
                     const QuantizationPlan * plan,
                     const std::map<std::string, QuantizedTensor> * tensors) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    const auto list = checkpoint_tensors(model, tensors);
    json manifest_tensors = json::array();
    for (const auto & t : list) {
        const std::string file = t.name + ".ptqt";
        const std::string path = (fs::path(dir) / file).string();
        TensorMeta meta{t.name, "weight"};
        if (t.quantized != nullptr) {
            write_tensor(path, *t.quantized, meta);
        } else if (t.matrix != nullptr) {
            write_tensor(path, *t.matrix, meta);
        } else {
            write_tensor(path, t.holder, meta);
        }
        manifest_tensors.push_back({{"file", file},
                                    {"name", t.name},
                                    {"dtype", t.quantized != nullptr ? "codes" : "real32"}});
    }

    json manifest{{"config",
                   {{"vocab_size", model.config.vocab_size},
                    {"d_model", model.config.d_model},
                    {"n_heads", model.config.n_heads},
                    {"n_layers", model.config.n_layers},
                    {"d_ff", model.config.d_ff},
                    {"max_seq_len", model.config.max_seq_len},
                    {"seed", model.config.seed}}},
                  {"tensors", manifest_tensors},
                  {"plan", plan != nullptr ? plan_json(*plan) : json(nullptr)}};
    write_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2));
}

Checkpoint load_checkpoint(const std::string & dir) {
    namespace fs = std::filesystem;
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    if (!fs::exists(manifest_path)) {
        throw FormatError(FormatFault::bad_manifest, "missing manifest: " + manifest_path);
    }

    json manifest;
    try {
        manifest = json::parse(read_file(manifest_path));
    } catch (const json::exception & e) {
        throw FormatError(FormatFault::bad_manifest, manifest_path + " is not valid JSON");
    }

    Checkpoint ck;
    try {
        const json & c = manifest.at("config");
        ck.model.config.vocab_size = c.at("vocab_size").get<size_t>();
        ck.model.config.d_model = c.at("d_model").get<size_t>();
        ck.model.config.n_heads = c.at("n_heads").get<size_t>();
        ck.model.config.n_layers = c.at("n_layers").get<size_t>();
        ck.model.config.d_ff = c.at("d_ff").get<size_t>();
        ck.model.config.max_seq_len = c.at("max_seq_len").get<size_t>();
        ck.model.config.seed = c.at("seed").get<uint64_t>();
        if (!manifest.at("plan").is_null()) {
            ck.plan = plan_from(manifest.at("plan"));
        }
    } catch (const json::exception & e) {
        throw FormatError(FormatFault::bad_manifest, manifest_path + ": missing field");
    }
    ck.model.config.validate();

    std::map<std::string, Matrix> loaded;
    for (const json & entry : manifest.at("tensors")) {
        std::string file, name;
        try {
            file = entry.at("file").get<std::string>();
            name = entry.at("name").get<std::string>();
        } catch (const json::exception & e) {
            throw FormatError(FormatFault::bad_manifest, manifest_path + ": bad tensor entry");
        }
        const std::string path = (fs::path(dir) / file).string();
        if (!fs::exists(path)) {
            throw FormatError(FormatFault::bad_manifest, "manifest lists missing file: " + file);
        }
        TensorData data = read_tensor(path);
        if (std::holds_alternative<Matrix>(data)) {
            loaded.emplace(name, std::move(std::get<Matrix>(data)));
        } else {
            loaded.emplace(name, dequantize_tensor(std::get<QuantizedTensor>(data)));
        }
    }

    auto take_matrix = [&](const std::string & name, size_t rows, size_t cols) {
        auto it = loaded.find(name);
        if (it == loaded.end()) {
            throw FormatError(FormatFault::bad_manifest, "manifest missing tensor: " + name);
        }
        if (it->second.rows() != rows || it->second.cols() != cols) {
            throw FormatError(FormatFault::bad_manifest, "tensor shape mismatch: " + name);
        }
        return std::move(it->second);
    };
    auto take_vec = [&](const std::string & name, size_t n) {
        return matrix_vec(take_matrix(name, 1, n));
    };

    ToyModel & m = ck.model;
    const auto & cfg = m.config;
    m.tok_emb = take_matrix("tok_emb", cfg.vocab_size, cfg.d_model);
    m.pos_emb = take_matrix("pos_emb", cfg.max_seq_len, cfg.d_model);
    m.layers.resize(cfg.n_layers);
    for (size_t l = 0; l < cfg.n_layers; l++) {
        auto & layer = m.layers[l];
        const std::string prefix = "layer" + std::to_string(l) + ".";
        layer.ln_attn.gamma = take_vec(prefix + "ln_attn.gamma", cfg.d_model);
        layer.ln_attn.beta = take_vec(prefix + "ln_attn.beta", cfg.d_model);
        auto load_linear = [&](const std::string & slot, size_t out, size_t in) {
            Linear lin;
            lin.w = take_matrix(prefix + slot + ".w", out, in);
            lin.b = take_vec(prefix + slot + ".b", out);
            return lin;
        };
        layer.q = load_linear("q", cfg.d_model, cfg.d_model);
        layer.k = load_linear("k", cfg.d_model, cfg.d_model);
        layer.v = load_linear("v", cfg.d_model, cfg.d_model);
        layer.o = load_linear("o", cfg.d_model, cfg.d_model);
        layer.fc1 = load_linear("fc1", cfg.d_ff, cfg.d_model);
        layer.fc2 = load_linear("fc2", cfg.d_model, cfg.d_ff);
        layer.ln_mlp.gamma = take_vec(prefix + "ln_mlp.gamma", cfg.d_model);
        layer.ln_mlp.beta = take_vec(prefix + "ln_mlp.beta", cfg.d_model);
    }
    m.ln_final.gamma = take_vec("ln_final.gamma", cfg.d_model);
    m.ln_final.beta = take_vec("ln_final.beta", cfg.d_model);
    m.head = take_matrix("head", cfg.vocab_size, cfg.d_model);
    return ck;
}

} // namespace ptq
