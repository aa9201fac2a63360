#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hermes/model_store.hpp"

namespace hermes::profiler {

// Per-layer measurement: medians over the post-warmup reps of one full
// sequential pass each. mem_bytes is the accounted materialized footprint
// (widened payload + tensor bookkeeping), not process RSS.
struct LayerProfileEntry {
    int k = 0;
    store::Role role = store::Role::Encoder;
    double load_ms = 0.0;
    double compute_ms = 0.0;
    uint64_t mem_bytes = 0;
    double load_cv = 0.0;  // coefficient of variation of load_ms across reps
};

struct ModelProfile {
    std::string model_name;
    store::DataType data_type = store::DataType::FP32;
    int hidden_dim = 0;
    int num_heads = 0;
    int seq_len = 0;
    int reps = 0;
    int warmup = 0;
    bool cold_cache = true;
    std::string environment;
    uint64_t activation_bytes = 0;      // one in-flight activation, counted once
    uint64_t resident_other_bytes = 0;  // embedding + head footprints + activation
    std::vector<LayerProfileEntry> layers;  // one per manifest record, index order

    int n_enc_dec() const;
    const LayerProfileEntry& entry(int k) const;  // OutOfRange on miss
    uint64_t max_enc_dec_bytes() const;
    uint64_t total_enc_dec_bytes() const;
};

// One full sequential inference pass per rep (warmup passes discarded),
// measuring wall time of each layer's read+materialize and forward call.
// Refuses to run while an engine run is active in this process.
ModelProfile profile_model(const store::Model& model, const std::vector<int>& sample_input,
                           int reps, int warmup, bool cold_cache);

void write_profile(const ModelProfile& p, const std::filesystem::path& path);
ModelProfile read_profile(const std::filesystem::path& path);  // malformed -> ParseError

// Digest of the canonical serialized form; schedules carry it so a schedule
// can be rejected when paired with a different profile.
std::string profile_fingerprint(const ModelProfile& p);

}  // namespace hermes::profiler
