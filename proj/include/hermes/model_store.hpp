#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hermes/errors.hpp"

namespace hermes::store {

enum class Role : uint8_t { Embedding = 0, Encoder = 1, Decoder = 2, Pooling = 3, LmHead = 4 };
enum class DataType : uint8_t { FP32 = 0, FP16 = 1 };

const char* role_name(Role r);
Role role_from_name(const std::string& s);
const char* dtype_name(DataType t);
DataType dtype_from_name(const std::string& s);

inline bool is_enc_dec(Role r) { return r == Role::Encoder || r == Role::Decoder; }

// Generated models use a fixed small vocabulary and the conventional 4x FFN
// expansion.
inline constexpr int kVocabSize = 256;
inline constexpr int kFfnMult = 4;
inline constexpr uint16_t kShardVersion = 1;

// One layer's span in the shard. byte_len covers header + payload; checksum
// digests the payload only. Synthetic records additionally carry injected
// load/compute delays honored by the read and forward paths.
struct LayerRecord {
    int index = 0;
    Role role = Role::Encoder;
    uint64_t byte_offset = 0;
    uint64_t byte_len = 0;
    uint64_t checksum = 0;
    bool synthetic = false;
    double load_delay_ms = 0.0;
    double compute_delay_ms = 0.0;
};

struct LayerManifest {
    std::string model_name;
    DataType data_type = DataType::FP32;
    int hidden_dim = 0;
    int num_heads = 0;
    int seq_len = 0;
    std::vector<LayerRecord> layers;

    // Count of encoder/decoder records (indexed 1..N in manifest order).
    int n_enc_dec() const;
    const LayerRecord& record(int k) const;  // by layer index, OutOfRange on miss
    void validate() const;                   // all manifest invariants
};

struct Tensor {
    std::string name;
    std::vector<uint32_t> dims;
    std::vector<float> data;  // row-major, widened to f32

    size_t elem_count() const {
        size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

struct LayerWeights {
    LayerRecord record;
    int num_heads = 1;  // stamped from the manifest; attention needs it
    std::vector<Tensor> tensors;
    uint64_t accounted_bytes = 0;  // materialized footprint charged to the ledger

    const Tensor& tensor(const std::string& name) const;
    bool has(const std::string& name) const;
};

// Tensor table parsed from a per-layer shard header; enough to predict the
// materialized footprint before paying for the payload read.
struct LayerHeaderInfo {
    int index = 0;
    Role role = Role::Embedding;
    std::vector<std::pair<std::string, std::vector<uint32_t>>> tensors;
    uint64_t header_bytes = 0;
    uint64_t payload_bytes = 0;
};

uint64_t accounted_bytes(const LayerHeaderInfo& info);

// Hyperparameters for a generated model. Weights are seeded uniform in
// [-0.1, 0.1]; same config + seed reproduces the files byte for byte.
struct GenConfig {
    std::string model_name = "toy";
    Role layer_role = Role::Encoder;  // encoder or decoder stack
    int num_layers = 0;
    int hidden_dim = 0;
    int num_heads = 0;
    int seq_len = 16;
    DataType data_type = DataType::FP32;
    Role head_role = Role::Pooling;  // pooling or lm_head
};

GenConfig gen_config_from_json_file(const std::filesystem::path& path);

// Canonical tensor set for layer k of a generated model, quantized through
// the storage data type so it equals what read_layer returns.
std::vector<Tensor> generate_layer_tensors(const GenConfig& cfg, int k, uint64_t seed);

// Writes manifest.json + weights.shard under out_dir.
LayerManifest partition_model(const GenConfig& cfg, uint64_t seed, const std::filesystem::path& out_dir);

// Incremental shard writer, shared by partition_model and the synthetic
// model generator.
class ShardWriter {
public:
    void add_layer(Role role, int index, const std::vector<Tensor>& tensors, DataType dtype,
                   bool synthetic = false, double load_delay_ms = 0.0, double compute_delay_ms = 0.0);
    LayerManifest finish(std::string model_name, DataType dtype, int hidden_dim, int num_heads,
                         int seq_len, const std::filesystem::path& out_dir);

private:
    std::vector<uint8_t> bytes_;
    std::vector<LayerRecord> records_;
};

void write_manifest(const LayerManifest& m, const std::filesystem::path& path);
LayerManifest read_manifest(const std::filesystem::path& path);

// Model directory = manifest.json + weights.shard.
struct Model {
    LayerManifest manifest;
    std::filesystem::path shard_path;
};
Model open_model(const std::filesystem::path& dir);
inline std::filesystem::path manifest_path(const std::filesystem::path& dir) { return dir / "manifest.json"; }
inline std::filesystem::path shard_path(const std::filesystem::path& dir) { return dir / "weights.shard"; }

LayerHeaderInfo read_layer_header(const std::filesystem::path& shard, const LayerRecord& rec,
                                  DataType dtype);

// Integrity-checked read of one layer; safe to call concurrently on distinct
// records. Honors the record's injected load delay.
LayerWeights read_layer(const LayerManifest& manifest, const std::filesystem::path& shard, int k);

}  // namespace hermes::store
