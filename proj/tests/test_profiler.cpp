#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hermes/errors.hpp"
#include "hermes/model_store.hpp"
#include "hermes/profiler.hpp"
#include "hermes/synth.hpp"
#include "hermes/util.hpp"

namespace fs = std::filesystem;
using namespace hermes;
using namespace hermes::profiler;

namespace {

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("hermes_prof_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

store::Model tiny_real_model(const fs::path& dir) {
    store::GenConfig cfg;
    cfg.model_name = "proftiny";
    cfg.num_layers = 3;
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.seq_len = 16;
    store::partition_model(cfg, 3, dir);
    return store::open_model(dir);
}

const std::vector<int> kInput = {1, 2, 3, 4};

}  // namespace

TEST_CASE("injected delays dominate the measured medians") {
    const auto dir = temp_dir("delays");
    synth::SynthSpec spec;
    spec.name = "prof_delay";
    spec.n_layers = 4;
    spec.load_ms = 50.0;
    spec.comp_ms = 5.0;
    spec.layer_mb = 0.0625;  // tiny payload so the sleep dominates the read
    synth::make_synth_model(spec, dir);
    const auto model = store::open_model(dir);

    const auto p = profile_model(model, kInput, 3, 1, false);
    REQUIRE(p.n_enc_dec() == 4);
    for (int k = 1; k <= 4; ++k) {
        const auto& e = p.entry(k);
        CHECK(e.load_ms >= 50.0);
        CHECK(e.load_ms <= 65.0);
        CHECK(e.compute_ms >= 5.0);
        CHECK(e.compute_ms <= 12.0);
        CHECK(e.load_cv >= 0.0);
        CHECK(e.load_cv < 0.5);
    }
    CHECK(p.reps == 3);
    CHECK(p.warmup == 1);
    CHECK_FALSE(p.cold_cache);
    CHECK_FALSE(p.environment.empty());
}

TEST_CASE("profile covers every record with sane metrics") {
    const auto dir = temp_dir("real");
    const auto model = tiny_real_model(dir);
    const auto p = profile_model(model, kInput, 3, 1, false);

    REQUIRE(p.layers.size() == model.manifest.layers.size());
    CHECK(p.model_name == "proftiny");
    CHECK(p.hidden_dim == 8);
    CHECK(p.n_enc_dec() == 3);

    for (size_t i = 0; i < p.layers.size(); ++i) {
        const auto& e = p.layers[i];
        const auto& rec = model.manifest.layers[i];
        CHECK(e.k == rec.index);
        CHECK(e.role == rec.role);
        CHECK(e.load_ms > 0.0);
        CHECK(e.compute_ms > 0.0);
        // Materialized footprint at least covers the payload bytes.
        CHECK(e.mem_bytes >= rec.byte_len);
    }

    // Activation: one seq_len x hidden_dim float buffer.
    CHECK(p.activation_bytes == 16u * 8u * 4u);
    // Resident-other = activation + embedding + head footprints.
    const uint64_t non_stream = p.entry(0).mem_bytes + p.entry(4).mem_bytes;
    CHECK(p.resident_other_bytes == p.activation_bytes + non_stream);
    CHECK(p.max_enc_dec_bytes() == p.entry(1).mem_bytes);
    CHECK(p.total_enc_dec_bytes() ==
          p.entry(1).mem_bytes + p.entry(2).mem_bytes + p.entry(3).mem_bytes);
}

TEST_CASE("config validation") {
    const auto dir = temp_dir("cfg");
    const auto model = tiny_real_model(dir);
    CHECK_THROWS_AS(profile_model(model, kInput, 2, 1, false), InvalidConfig);
    CHECK_THROWS_AS(profile_model(model, kInput, 3, 0, false), InvalidConfig);
    CHECK_THROWS_AS(profile_model(model, {}, 3, 1, false), InvalidInput);

    // Refuses to measure while an engine run is active in-process.
    engine_active_flag().store(true);
    CHECK_THROWS_AS(profile_model(model, kInput, 3, 1, false), InvalidConfig);
    engine_active_flag().store(false);
    CHECK_NOTHROW(profile_model(model, kInput, 3, 1, false));
}

TEST_CASE("profile json round-trips exactly") {
    const auto dir = temp_dir("json");
    const auto model = tiny_real_model(dir);
    const auto p = profile_model(model, kInput, 3, 1, false);

    const auto path = dir / "profile.json";
    write_profile(p, path);
    const auto back = read_profile(path);

    CHECK(back.model_name == p.model_name);
    CHECK(back.data_type == p.data_type);
    CHECK(back.hidden_dim == p.hidden_dim);
    CHECK(back.num_heads == p.num_heads);
    CHECK(back.seq_len == p.seq_len);
    CHECK(back.reps == p.reps);
    CHECK(back.warmup == p.warmup);
    CHECK(back.cold_cache == p.cold_cache);
    CHECK(back.environment == p.environment);
    CHECK(back.activation_bytes == p.activation_bytes);
    CHECK(back.resident_other_bytes == p.resident_other_bytes);
    REQUIRE(back.layers.size() == p.layers.size());
    for (size_t i = 0; i < p.layers.size(); ++i) {
        CHECK(back.layers[i].k == p.layers[i].k);
        CHECK(back.layers[i].role == p.layers[i].role);
        CHECK(back.layers[i].load_ms == p.layers[i].load_ms);
        CHECK(back.layers[i].compute_ms == p.layers[i].compute_ms);
        CHECK(back.layers[i].mem_bytes == p.layers[i].mem_bytes);
        CHECK(back.layers[i].load_cv == p.layers[i].load_cv);
    }

    // Fingerprint is a function of the serialized content only.
    CHECK(profile_fingerprint(back) == profile_fingerprint(p));
    auto tweaked = p;
    tweaked.layers[1].load_ms += 0.001;
    CHECK(profile_fingerprint(tweaked) != profile_fingerprint(p));
}

TEST_CASE("malformed profile json is a parse error") {
    const auto dir = temp_dir("badjson");
    { std::ofstream(dir / "p.json") << "not json at all"; }
    CHECK_THROWS_AS(read_profile(dir / "p.json"), ParseError);
    { std::ofstream(dir / "p.json") << R"({"model_name": "x"})"; }
    CHECK_THROWS_AS(read_profile(dir / "p.json"), ParseError);
    {
        std::ofstream(dir / "p.json")
            << R"({"model_name":"x","data_type":"FP32","hidden_dim":8,"num_heads":2,)"
            << R"("seq_len":16,"reps":3,"warmup":1,"cold_cache":false,"environment":"e",)"
            << R"("activation_bytes":512,"resident_other_bytes":1000,)"
            << R"("layers":[{"k":0,"role":"embedding","load_ms":"fast"}]})";
    }
    CHECK_THROWS_AS(read_profile(dir / "p.json"), ParseError);
    CHECK_THROWS_AS(read_profile(dir / "missing.json"), IoError);
}

TEST_CASE("n=24 synthetic profile reproduces the configured 10:1 shape") {
    const auto dir = temp_dir("n24");
    synth::SynthSpec spec;
    spec.name = "prof24";
    spec.n_layers = 24;
    spec.load_ms = 10.0;
    spec.comp_ms = 1.0;
    spec.layer_mb = 0.0625;
    synth::make_synth_model(spec, dir);
    const auto model = store::open_model(dir);

    const auto p = profile_model(model, kInput, 3, 1, false);
    REQUIRE(p.n_enc_dec() == 24);
    for (int k = 1; k <= 24; ++k) {
        CHECK(p.entry(k).load_ms >= 10.0);
        CHECK(p.entry(k).load_ms <= 13.0);
        CHECK(p.entry(k).compute_ms >= 1.0);
        CHECK(p.entry(k).compute_ms <= 3.0);
    }
    // All synthetic layers share one payload size.
    for (int k = 2; k <= 24; ++k) CHECK(p.entry(k).mem_bytes == p.entry(1).mem_bytes);
}

TEST_CASE("cold cache mode works and marks the profile") {
    const auto dir = temp_dir("cold");
    const auto model = tiny_real_model(dir);
    const auto p = profile_model(model, kInput, 3, 1, true);
    CHECK(p.cold_cache);
    for (const auto& e : p.layers) CHECK(e.load_ms > 0.0);
    // The per-rep shard copies are cleaned up.
    CHECK_FALSE(fs::exists(dir / ".profile_cold"));
}
