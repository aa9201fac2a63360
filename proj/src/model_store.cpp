#include "hermes/model_store.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "hermes/util.hpp"

namespace hermes::store {

using json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[4] = {'P', 'L', 'L', 'D'};
constexpr uint64_t kTensorBookkeeping = 48;  // name/dims vectors + struct overhead, per tensor
constexpr uint64_t kRecordBookkeeping = 64;

size_t dtype_width(DataType t) { return t == DataType::FP32 ? 4 : 2; }

}  // namespace

const char* role_name(Role r) {
    switch (r) {
        case Role::Embedding: return "embedding";
        case Role::Encoder: return "encoder";
        case Role::Decoder: return "decoder";
        case Role::Pooling: return "pooling";
        case Role::LmHead: return "lm_head";
    }
    return "?";
}

Role role_from_name(const std::string& s) {
    if (s == "embedding") return Role::Embedding;
    if (s == "encoder") return Role::Encoder;
    if (s == "decoder") return Role::Decoder;
    if (s == "pooling") return Role::Pooling;
    if (s == "lm_head") return Role::LmHead;
    throw ParseError("unknown layer role: " + s);
}

const char* dtype_name(DataType t) { return t == DataType::FP32 ? "FP32" : "FP16"; }

DataType dtype_from_name(const std::string& s) {
    if (s == "FP32") return DataType::FP32;
    if (s == "FP16") return DataType::FP16;
    throw ParseError("unknown data type: " + s);
}

int LayerManifest::n_enc_dec() const {
    int n = 0;
    for (const auto& r : layers)
        if (is_enc_dec(r.role)) n++;
    return n;
}

const LayerRecord& LayerManifest::record(int k) const {
    for (const auto& r : layers)
        if (r.index == k) return r;
    throw OutOfRange("no layer with index " + std::to_string(k) + " in manifest of " + model_name);
}

void LayerManifest::validate() const {
    if (layers.empty()) throw InvalidConfig("manifest has no layers");
    if (hidden_dim <= 0 || num_heads <= 0 || seq_len <= 0)
        throw InvalidConfig("manifest dims must be positive");
    if (hidden_dim % num_heads != 0)
        throw InvalidConfig("hidden_dim must be divisible by num_heads");

    int embeddings = 0;
    for (const auto& r : layers)
        if (r.role == Role::Embedding) embeddings++;
    if (embeddings != 1) throw InvalidConfig("manifest must have exactly one embedding record");

    // Encoder/decoder records contiguous, indexed 1..N in manifest order.
    int expect = 1;
    bool enc_dec_done = false;
    for (const auto& r : layers) {
        if (is_enc_dec(r.role)) {
            if (enc_dec_done) throw InvalidConfig("encoder/decoder records are not contiguous");
            if (r.index != expect)
                throw InvalidConfig("encoder/decoder record out of order: expected index " +
                                    std::to_string(expect) + ", got " + std::to_string(r.index));
            expect++;
        } else if (expect > 1) {
            enc_dec_done = true;
        }
    }

    uint64_t next_offset = 0;
    int prev_index = -1;
    for (const auto& r : layers) {
        if (r.byte_len == 0) throw InvalidConfig("zero-length layer record " + std::to_string(r.index));
        if (r.index <= prev_index) throw InvalidConfig("layer indices must strictly increase");
        if (r.byte_offset != next_offset)
            throw InvalidConfig("layer records must pack without gaps");
        prev_index = r.index;
        next_offset = r.byte_offset + r.byte_len;
    }
}

const Tensor& LayerWeights::tensor(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw OutOfRange("layer " + std::to_string(record.index) + " has no tensor " + name);
}

bool LayerWeights::has(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return true;
    return false;
}

uint64_t accounted_bytes(const LayerHeaderInfo& info) {
    uint64_t total = kRecordBookkeeping;
    for (const auto& [name, dims] : info.tensors) {
        uint64_t elems = 1;
        for (auto d : dims) elems *= d;
        total += elems * 4;  // widened storage
        total += name.size() + 4ull * dims.size() + kTensorBookkeeping;
    }
    return total;
}

GenConfig gen_config_from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    json j;
    try {
        in >> j;
        GenConfig cfg;
        cfg.model_name = j.at("model_name").get<std::string>();
        const std::string kind = j.at("layer_kind").get<std::string>();
        cfg.layer_role = role_from_name(kind);
        if (!is_enc_dec(cfg.layer_role)) throw ParseError("layer_kind must be encoder or decoder");
        cfg.num_layers = j.at("num_layers").get<int>();
        cfg.hidden_dim = j.at("hidden_dim").get<int>();
        cfg.num_heads = j.at("num_heads").get<int>();
        cfg.seq_len = j.value("seq_len", 16);
        cfg.data_type = dtype_from_name(j.value("data_type", "FP32"));
        cfg.head_role = role_from_name(j.value("head", cfg.layer_role == Role::Decoder ? "lm_head" : "pooling"));
        return cfg;
    } catch (const json::exception& e) {
        throw ParseError("bad model config " + path.string() + ": " + e.what());
    }
}

std::vector<Tensor> generate_layer_tensors(const GenConfig& cfg, int k, uint64_t seed) {
    const int d = cfg.hidden_dim;
    const int ffn = d * kFfnMult;
    std::vector<std::pair<std::string, std::vector<uint32_t>>> shapes;

    if (k == 0) {
        shapes = {{"tok_table", {kVocabSize, (uint32_t)d}}, {"pos_table", {(uint32_t)cfg.seq_len, (uint32_t)d}}};
    } else if (k >= 1 && k <= cfg.num_layers) {
        shapes = {{"w_q", {(uint32_t)d, (uint32_t)d}}, {"w_k", {(uint32_t)d, (uint32_t)d}},
                  {"w_v", {(uint32_t)d, (uint32_t)d}}, {"w_o", {(uint32_t)d, (uint32_t)d}},
                  {"ln1_g", {(uint32_t)d}},            {"ln1_b", {(uint32_t)d}},
                  {"w_1", {(uint32_t)d, (uint32_t)ffn}}, {"b_1", {(uint32_t)ffn}},
                  {"w_2", {(uint32_t)ffn, (uint32_t)d}}, {"b_2", {(uint32_t)d}},
                  {"ln2_g", {(uint32_t)d}},            {"ln2_b", {(uint32_t)d}}};
    } else if (k == cfg.num_layers + 1) {
        if (cfg.head_role == Role::Pooling)
            shapes = {{"w", {(uint32_t)d, (uint32_t)d}}, {"b", {(uint32_t)d}}};
        else
            shapes = {{"w", {(uint32_t)d, kVocabSize}}, {"b", {kVocabSize}}};
    } else {
        throw OutOfRange("generate_layer_tensors: no layer " + std::to_string(k));
    }

    std::vector<Tensor> out;
    out.reserve(shapes.size());
    for (auto& [name, dims] : shapes) {
        Tensor t;
        t.name = name;
        t.dims = dims;
        t.data.resize(t.elem_count());
        WeightRng rng(tensor_seed(seed, k, name));
        rng.fill(t.data);
        if (cfg.data_type == DataType::FP16)
            for (auto& v : t.data) v = half_to_float(float_to_half(v));
        out.push_back(std::move(t));
    }
    return out;
}

void ShardWriter::add_layer(Role role, int index, const std::vector<Tensor>& tensors, DataType dtype,
                            bool synthetic, double load_delay_ms, double compute_delay_ms) {
    LayerRecord rec;
    rec.index = index;
    rec.role = role;
    rec.byte_offset = bytes_.size();
    rec.synthetic = synthetic;
    rec.load_delay_ms = load_delay_ms;
    rec.compute_delay_ms = compute_delay_ms;

    bytes_.insert(bytes_.end(), kMagic, kMagic + 4);
    append_le<uint16_t>(bytes_, kShardVersion);
    bytes_.push_back(static_cast<uint8_t>(role));
    append_le<uint32_t>(bytes_, static_cast<uint32_t>(index));
    append_le<uint16_t>(bytes_, static_cast<uint16_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 255) throw InvalidConfig("tensor name too long: " + t.name);
        bytes_.push_back(static_cast<uint8_t>(t.name.size()));
        bytes_.insert(bytes_.end(), t.name.begin(), t.name.end());
        bytes_.push_back(static_cast<uint8_t>(t.dims.size()));
        for (auto dim : t.dims) append_le<uint32_t>(bytes_, dim);
    }

    const size_t payload_start = bytes_.size();
    for (const auto& t : tensors) {
        if (t.data.size() != t.elem_count())
            throw InvalidConfig("tensor " + t.name + " data/dims mismatch");
        for (float v : t.data) {
            if (dtype == DataType::FP32) {
                uint32_t bits;
                std::memcpy(&bits, &v, 4);
                append_le<uint32_t>(bytes_, bits);
            } else {
                append_le<uint16_t>(bytes_, float_to_half(v));
            }
        }
    }

    rec.byte_len = bytes_.size() - rec.byte_offset;
    rec.checksum = fnv1a64(bytes_.data() + payload_start, bytes_.size() - payload_start);
    records_.push_back(rec);
}

LayerManifest ShardWriter::finish(std::string model_name, DataType dtype, int hidden_dim,
                                  int num_heads, int seq_len, const std::filesystem::path& out_dir) {
    LayerManifest m;
    m.model_name = std::move(model_name);
    m.data_type = dtype;
    m.hidden_dim = hidden_dim;
    m.num_heads = num_heads;
    m.seq_len = seq_len;
    m.layers = records_;
    m.validate();

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    const auto shard = shard_path(out_dir);
    std::ofstream out(shard, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write shard " + shard.string());
    out.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw IoError("short write to " + shard.string());
    out.close();

    write_manifest(m, manifest_path(out_dir));
    return m;
}

LayerManifest partition_model(const GenConfig& cfg, uint64_t seed, const std::filesystem::path& out_dir) {
    if (cfg.num_layers <= 0) throw InvalidConfig("model must have at least one encoder/decoder layer");
    if (cfg.hidden_dim <= 0 || cfg.num_heads <= 0 || cfg.seq_len <= 0)
        throw InvalidConfig("model dims must be positive");
    if (cfg.hidden_dim % cfg.num_heads != 0)
        throw InvalidConfig("hidden_dim must be divisible by num_heads");
    if (!is_enc_dec(cfg.layer_role)) throw InvalidConfig("layer_role must be encoder or decoder");
    if (cfg.head_role != Role::Pooling && cfg.head_role != Role::LmHead)
        throw InvalidConfig("head must be pooling or lm_head");

    ShardWriter w;
    w.add_layer(Role::Embedding, 0, generate_layer_tensors(cfg, 0, seed), cfg.data_type);
    for (int k = 1; k <= cfg.num_layers; ++k)
        w.add_layer(cfg.layer_role, k, generate_layer_tensors(cfg, k, seed), cfg.data_type);
    w.add_layer(cfg.head_role, cfg.num_layers + 1,
                generate_layer_tensors(cfg, cfg.num_layers + 1, seed), cfg.data_type);
    return w.finish(cfg.model_name, cfg.data_type, cfg.hidden_dim, cfg.num_heads, cfg.seq_len, out_dir);
}

void write_manifest(const LayerManifest& m, const std::filesystem::path& path) {
    json j;
    j["model_name"] = m.model_name;
    j["data_type"] = dtype_name(m.data_type);
    j["hidden_dim"] = m.hidden_dim;
    j["num_heads"] = m.num_heads;
    j["seq_len"] = m.seq_len;
    j["layers"] = json::array();
    for (const auto& r : m.layers) {
        json rec;
        rec["index"] = r.index;
        rec["role"] = role_name(r.role);
        rec["byte_offset"] = r.byte_offset;
        rec["byte_len"] = r.byte_len;
        rec["checksum"] = to_hex(r.checksum);
        rec["synthetic"] = r.synthetic;
        rec["load_delay_ms"] = r.load_delay_ms;
        rec["compute_delay_ms"] = r.compute_delay_ms;
        j["layers"].push_back(std::move(rec));
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << j.dump(2) << "\n";
}

LayerManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    json j;
    try {
        in >> j;
        LayerManifest m;
        m.model_name = j.at("model_name").get<std::string>();
        m.data_type = dtype_from_name(j.at("data_type").get<std::string>());
        m.hidden_dim = j.at("hidden_dim").get<int>();
        m.num_heads = j.at("num_heads").get<int>();
        m.seq_len = j.at("seq_len").get<int>();
        for (const auto& rec : j.at("layers")) {
            LayerRecord r;
            r.index = rec.at("index").get<int>();
            r.role = role_from_name(rec.at("role").get<std::string>());
            r.byte_offset = rec.at("byte_offset").get<uint64_t>();
            r.byte_len = rec.at("byte_len").get<uint64_t>();
            r.checksum = from_hex(rec.at("checksum").get<std::string>());
            r.synthetic = rec.value("synthetic", false);
            r.load_delay_ms = rec.value("load_delay_ms", 0.0);
            r.compute_delay_ms = rec.value("compute_delay_ms", 0.0);
            m.layers.push_back(r);
        }
        m.validate();
        return m;
    } catch (const json::exception& e) {
        throw ParseError("bad manifest " + path.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw ParseError("bad manifest " + path.string() + ": " + e.what());
    }
}

Model open_model(const std::filesystem::path& dir) {
    Model m;
    m.manifest = read_manifest(manifest_path(dir));
    m.shard_path = shard_path(dir);
    if (!std::filesystem::exists(m.shard_path))
        throw IoError("missing shard file " + m.shard_path.string());
    return m;
}

namespace {

// Parses the fixed header at the start of a record span. `buf` must hold at
// least the header bytes.
LayerHeaderInfo parse_header(const uint8_t* buf, size_t len, const LayerRecord& rec, DataType dtype) {
    LayerHeaderInfo info;
    size_t pos = 0;
    auto need = [&](size_t n) {
        if (pos + n > len)
            throw IntegrityError("truncated layer header for layer " + std::to_string(rec.index));
    };
    need(4 + 2 + 1 + 4 + 2);
    if (std::memcmp(buf, kMagic, 4) != 0)
        throw IntegrityError("bad magic in layer " + std::to_string(rec.index));
    pos = 4;
    const uint16_t version = read_le<uint16_t>(buf + pos);
    pos += 2;
    if (version != kShardVersion)
        throw IntegrityError("unsupported shard version " + std::to_string(version));
    info.role = static_cast<Role>(buf[pos]);
    pos += 1;
    info.index = static_cast<int>(read_le<uint32_t>(buf + pos));
    pos += 4;
    const uint16_t n_tensors = read_le<uint16_t>(buf + pos);
    pos += 2;
    if (info.index != rec.index || info.role != rec.role)
        throw IntegrityError("layer header does not match manifest record " + std::to_string(rec.index));

    uint64_t elems_total = 0;
    for (uint16_t i = 0; i < n_tensors; ++i) {
        need(1);
        const uint8_t name_len = buf[pos];
        pos += 1;
        need(name_len + 1);
        std::string name(reinterpret_cast<const char*>(buf + pos), name_len);
        pos += name_len;
        const uint8_t rank = buf[pos];
        pos += 1;
        need(4ull * rank);
        std::vector<uint32_t> dims(rank);
        uint64_t elems = 1;
        for (int r = 0; r < rank; ++r) {
            dims[r] = read_le<uint32_t>(buf + pos);
            pos += 4;
            elems *= dims[r];
        }
        elems_total += elems;
        info.tensors.emplace_back(std::move(name), std::move(dims));
    }
    info.header_bytes = pos;
    info.payload_bytes = elems_total * dtype_width(dtype);
    if (info.header_bytes + info.payload_bytes != rec.byte_len)
        throw IntegrityError("layer " + std::to_string(rec.index) +
                             " length mismatch between header and manifest");
    return info;
}

}  // namespace

LayerHeaderInfo read_layer_header(const std::filesystem::path& shard, const LayerRecord& rec,
                                  DataType dtype) {
    std::ifstream in(shard, std::ios::binary);
    if (!in) throw IoError("cannot open shard " + shard.string());
    // Headers are small; 64 KiB covers any sane tensor table.
    const size_t want = static_cast<size_t>(std::min<uint64_t>(rec.byte_len, 64 * 1024));
    std::vector<uint8_t> buf(want);
    in.seekg(static_cast<std::streamoff>(rec.byte_offset));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(want));
    if (in.gcount() != static_cast<std::streamsize>(want))
        throw IoError("short read in " + shard.string());
    return parse_header(buf.data(), buf.size(), rec, dtype);
}

LayerWeights read_layer(const LayerManifest& manifest, const std::filesystem::path& shard, int k) {
    const LayerRecord& rec = manifest.record(k);

    std::ifstream in(shard, std::ios::binary);
    if (!in) throw IoError("cannot open shard " + shard.string());
    std::vector<uint8_t> buf(rec.byte_len);
    in.seekg(static_cast<std::streamoff>(rec.byte_offset));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(rec.byte_len));
    if (in.gcount() != static_cast<std::streamsize>(rec.byte_len))
        throw IoError("short read of layer " + std::to_string(k) + " from " + shard.string());

    LayerHeaderInfo info = parse_header(buf.data(), buf.size(), rec, manifest.data_type);
    const uint8_t* payload = buf.data() + info.header_bytes;
    if (fnv1a64(payload, info.payload_bytes) != rec.checksum)
        throw IntegrityError("checksum mismatch for layer " + std::to_string(k));

    LayerWeights w;
    w.record = rec;
    w.num_heads = manifest.num_heads;
    size_t pos = 0;
    for (auto& [name, dims] : info.tensors) {
        Tensor t;
        t.name = name;
        t.dims = dims;
        t.data.resize(t.elem_count());
        if (manifest.data_type == DataType::FP32) {
            for (auto& v : t.data) {
                const uint32_t bits = read_le<uint32_t>(payload + pos);
                std::memcpy(&v, &bits, 4);
                pos += 4;
            }
        } else {
            for (auto& v : t.data) {
                v = half_to_float(read_le<uint16_t>(payload + pos));
                pos += 2;
            }
        }
        w.tensors.push_back(std::move(t));
    }
    w.accounted_bytes = accounted_bytes(info);

    if (rec.synthetic && rec.load_delay_ms > 0)
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(rec.load_delay_ms));
    return w;
}

}  // namespace hermes::store
