#include "hermes/synth.hpp"

#include <cmath>

#include "hermes/errors.hpp"
#include "hermes/util.hpp"

namespace hermes::synth {

namespace {

// Cheap deterministic payload filler; the bytes are loaded and accounted but
// never used by the synthetic forward transform.
void fill_pattern(std::vector<float>& v) {
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i % 251) * 1e-3f;
}

}  // namespace

store::LayerManifest make_synth_model(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    if (spec.n_layers < 1) throw InvalidConfig("synthetic model needs at least one layer");
    if (spec.load_ms < 0 || spec.comp_ms < 0) throw InvalidConfig("delays must be >= 0");
    if (spec.layer_mb <= 0) throw InvalidConfig("layer size must be positive");
    if (!store::is_enc_dec(spec.layer_role))
        throw InvalidConfig("synthetic layers must be encoder or decoder records");
    if (!spec.per_layer_load_ms.empty() &&
        spec.per_layer_load_ms.size() != static_cast<size_t>(spec.n_layers))
        throw InvalidConfig("per-layer load delays must cover every layer");
    if (!spec.per_layer_comp_ms.empty() &&
        spec.per_layer_comp_ms.size() != static_cast<size_t>(spec.n_layers))
        throw InvalidConfig("per-layer compute delays must cover every layer");

    store::GenConfig cfg;
    cfg.model_name = spec.name;
    cfg.layer_role = spec.layer_role;
    cfg.num_layers = spec.n_layers;
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.seq_len = 16;
    cfg.data_type = store::DataType::FP32;
    cfg.head_role = spec.head_role;
    const uint64_t seed = fnv1a64(spec.name);

    store::ShardWriter writer;
    writer.add_layer(store::Role::Embedding, 0, store::generate_layer_tensors(cfg, 0, seed),
                     cfg.data_type);

    const size_t elems = static_cast<size_t>(spec.layer_mb * static_cast<double>(kMiB)) / 4;
    store::Tensor payload;
    payload.name = "payload";
    payload.dims = {static_cast<uint32_t>(elems)};
    payload.data.resize(elems);
    fill_pattern(payload.data);
    for (int k = 1; k <= spec.n_layers; ++k) {
        const double load =
            spec.per_layer_load_ms.empty() ? spec.load_ms : spec.per_layer_load_ms[k - 1];
        const double comp =
            spec.per_layer_comp_ms.empty() ? spec.comp_ms : spec.per_layer_comp_ms[k - 1];
        writer.add_layer(spec.layer_role, k, {payload}, cfg.data_type,
                         /*synthetic=*/true, load, comp);
    }

    writer.add_layer(cfg.head_role, spec.n_layers + 1,
                     store::generate_layer_tensors(cfg, spec.n_layers + 1, seed), cfg.data_type);
    return writer.finish(spec.name, cfg.data_type, cfg.hidden_dim, cfg.num_heads, cfg.seq_len,
                         out_dir);
}

}  // namespace hermes::synth
