#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hermes/model_store.hpp"

namespace hermes::synth {

// Calibration model: a real (tiny) embedding and head wrap N synthetic
// records whose read path sleeps load_delay_ms and whose forward sleeps
// compute_delay_ms before applying a fixed deterministic transform. Payload
// bytes are real so loads do real I/O and the ledger sees realistic sizes.
struct SynthSpec {
    std::string name = "synth";
    int n_layers = 0;
    double load_ms = 0.0;
    double comp_ms = 0.0;
    double layer_mb = 4.0;  // payload size per synthetic layer, MiB
    store::Role layer_role = store::Role::Encoder;
    store::Role head_role = store::Role::Pooling;
    // Optional per-layer overrides; when nonempty each must have n_layers entries.
    std::vector<double> per_layer_load_ms;
    std::vector<double> per_layer_comp_ms;
};

// Writes manifest.json + weights.shard under out_dir. The embedding/head are
// seeded real weights (hidden_dim 8, 2 heads, seq_len 16), so decoding with
// an lm_head produces meaningful deterministic tokens.
store::LayerManifest make_synth_model(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace hermes::synth
