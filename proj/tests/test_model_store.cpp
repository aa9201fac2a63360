#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hermes/errors.hpp"
#include "hermes/model_store.hpp"
#include "hermes/util.hpp"

namespace fs = std::filesystem;
using namespace hermes;
using namespace hermes::store;

namespace {

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("hermes_store_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

GenConfig small_config() {
    GenConfig cfg;
    cfg.model_name = "tiny";
    cfg.layer_role = Role::Encoder;
    cfg.num_layers = 3;
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.seq_len = 16;
    cfg.data_type = DataType::FP32;
    cfg.head_role = Role::Pooling;
    return cfg;
}

std::vector<uint8_t> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("partition writes manifest and shard with the expected shape") {
    const auto dir = temp_dir("shape");
    auto cfg = small_config();
    cfg.num_layers = 24;
    cfg.hidden_dim = 64;
    cfg.num_heads = 4;
    const auto manifest = partition_model(cfg, 7, dir);

    CHECK(manifest.layers.size() == 26);  // embedding + 24 + head
    CHECK(manifest.n_enc_dec() == 24);
    CHECK(manifest.layers.front().role == Role::Embedding);
    CHECK(manifest.layers.front().index == 0);
    CHECK(manifest.layers.back().role == Role::Pooling);
    CHECK(manifest.layers.back().index == 25);
    for (int k = 1; k <= 24; ++k) CHECK(manifest.record(k).role == Role::Encoder);

    // Records pack the shard without gaps, in index order.
    uint64_t expect_offset = 0;
    for (const auto& r : manifest.layers) {
        CHECK(r.byte_offset == expect_offset);
        expect_offset += r.byte_len;
    }
    CHECK(fs::file_size(shard_path(dir)) == expect_offset);

    // Encoder/decoder records dominate the byte volume: the streamed share
    // is what makes layer-wise streaming worthwhile.
    uint64_t total = 0, enc = 0;
    for (const auto& r : manifest.layers) {
        total += r.byte_len;
        if (is_enc_dec(r.role)) enc += r.byte_len;
    }
    CHECK(static_cast<double>(enc) / static_cast<double>(total) >= 0.70);
}

TEST_CASE("same config and seed reproduce the files byte for byte") {
    const auto d1 = temp_dir("repro1");
    const auto d2 = temp_dir("repro2");
    const auto cfg = small_config();
    partition_model(cfg, 99, d1);
    partition_model(cfg, 99, d2);
    CHECK(slurp(shard_path(d1)) == slurp(shard_path(d2)));
    CHECK(slurp(manifest_path(d1)) == slurp(manifest_path(d2)));

    const auto d3 = temp_dir("repro3");
    partition_model(cfg, 100, d3);
    CHECK(slurp(shard_path(d1)) != slurp(shard_path(d3)));
}

TEST_CASE("read_layer returns exactly the generated tensors") {
    const auto dir = temp_dir("roundtrip");
    const auto cfg = small_config();
    const uint64_t seed = 4242;
    const auto manifest = partition_model(cfg, seed, dir);

    for (const auto& rec : manifest.layers) {
        const auto w = read_layer(manifest, shard_path(dir), rec.index);
        const auto expect = generate_layer_tensors(cfg, rec.index, seed);
        REQUIRE(w.tensors.size() == expect.size());
        for (size_t i = 0; i < expect.size(); ++i) {
            CHECK(w.tensors[i].name == expect[i].name);
            CHECK(w.tensors[i].dims == expect[i].dims);
            REQUIRE(w.tensors[i].data.size() == expect[i].data.size());
            CHECK(std::memcmp(w.tensors[i].data.data(), expect[i].data.data(),
                              expect[i].data.size() * sizeof(float)) == 0);
        }
        CHECK(w.num_heads == cfg.num_heads);
    }
}

TEST_CASE("fp16 payloads widen to the quantized generator output") {
    const auto dir = temp_dir("fp16");
    auto cfg = small_config();
    cfg.data_type = DataType::FP16;
    const auto manifest = partition_model(cfg, 11, dir);
    CHECK(manifest.data_type == DataType::FP16);

    const auto w = read_layer(manifest, shard_path(dir), 1);
    const auto expect = generate_layer_tensors(cfg, 1, 11);
    REQUIRE(w.tensors.size() == expect.size());
    for (size_t i = 0; i < expect.size(); ++i)
        CHECK(std::memcmp(w.tensors[i].data.data(), expect[i].data.data(),
                          expect[i].data.size() * sizeof(float)) == 0);

    // Every widened value must be exactly representable in binary16.
    for (const auto& t : w.tensors)
        for (float v : t.data) CHECK(half_to_float(float_to_half(v)) == v);

    // FP16 shard is smaller than its FP32 twin.
    const auto dir32 = temp_dir("fp16_vs_32");
    partition_model(small_config(), 11, dir32);
    CHECK(fs::file_size(shard_path(dir)) < fs::file_size(shard_path(dir32)));
}

TEST_CASE("payload corruption is caught by the checksum") {
    const auto dir = temp_dir("corrupt");
    const auto manifest = partition_model(small_config(), 5, dir);

    // Flip one byte in the middle of layer 2's payload.
    const auto& rec = manifest.record(2);
    auto bytes = slurp(shard_path(dir));
    bytes[rec.byte_offset + rec.byte_len - 8] ^= 0xff;
    {
        std::ofstream out(shard_path(dir), std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    }

    CHECK_THROWS_AS(read_layer(manifest, shard_path(dir), 2), IntegrityError);
    // Other layers still read fine.
    CHECK_NOTHROW(read_layer(manifest, shard_path(dir), 1));
    CHECK_NOTHROW(read_layer(manifest, shard_path(dir), 3));
}

TEST_CASE("header corruption is caught before the payload") {
    const auto dir = temp_dir("badmagic");
    const auto manifest = partition_model(small_config(), 5, dir);
    const auto& rec = manifest.record(1);
    auto bytes = slurp(shard_path(dir));
    bytes[rec.byte_offset] = 'X';  // breaks the magic
    {
        std::ofstream out(shard_path(dir), std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    }
    CHECK_THROWS_AS(read_layer(manifest, shard_path(dir), 1), IntegrityError);
    CHECK_THROWS_AS(read_layer_header(shard_path(dir), rec, manifest.data_type), IntegrityError);
}

TEST_CASE("manifest lookups and validation") {
    const auto dir = temp_dir("manifest");
    auto manifest = partition_model(small_config(), 5, dir);

    CHECK_THROWS_AS(manifest.record(42), OutOfRange);
    CHECK_THROWS_AS(manifest.record(-1), OutOfRange);
    CHECK_NOTHROW(manifest.validate());

    SUBCASE("gap in the packing") {
        manifest.layers[2].byte_offset += 4;
        CHECK_THROWS_AS(manifest.validate(), InvalidConfig);
    }
    SUBCASE("out-of-order enc/dec index") {
        std::swap(manifest.layers[1].index, manifest.layers[2].index);
        CHECK_THROWS_AS(manifest.validate(), InvalidConfig);
    }
    SUBCASE("head dim mismatch") {
        manifest.num_heads = 3;  // 8 % 3 != 0
        CHECK_THROWS_AS(manifest.validate(), InvalidConfig);
    }
}

TEST_CASE("manifest json round-trips") {
    const auto dir = temp_dir("mjson");
    const auto manifest = partition_model(small_config(), 5, dir);
    const auto reread = read_manifest(manifest_path(dir));

    CHECK(reread.model_name == manifest.model_name);
    CHECK(reread.data_type == manifest.data_type);
    CHECK(reread.hidden_dim == manifest.hidden_dim);
    CHECK(reread.num_heads == manifest.num_heads);
    CHECK(reread.seq_len == manifest.seq_len);
    REQUIRE(reread.layers.size() == manifest.layers.size());
    for (size_t i = 0; i < manifest.layers.size(); ++i) {
        CHECK(reread.layers[i].index == manifest.layers[i].index);
        CHECK(reread.layers[i].role == manifest.layers[i].role);
        CHECK(reread.layers[i].byte_offset == manifest.layers[i].byte_offset);
        CHECK(reread.layers[i].byte_len == manifest.layers[i].byte_len);
        CHECK(reread.layers[i].checksum == manifest.layers[i].checksum);
    }
}

TEST_CASE("malformed manifest json is a parse error") {
    const auto dir = temp_dir("badjson");
    { std::ofstream(manifest_path(dir)) << "{ not json"; }
    CHECK_THROWS_AS(read_manifest(manifest_path(dir)), ParseError);
    { std::ofstream(manifest_path(dir)) << "{\"model_name\": \"x\"}"; }
    CHECK_THROWS_AS(read_manifest(manifest_path(dir)), ParseError);
}

TEST_CASE("config validation rejects degenerate models") {
    const auto dir = temp_dir("badcfg");
    auto cfg = small_config();
    cfg.num_layers = 0;
    CHECK_THROWS_AS(partition_model(cfg, 1, dir), InvalidConfig);
    cfg = small_config();
    cfg.hidden_dim = 10;  // not divisible by 4 heads
    cfg.num_heads = 4;
    CHECK_THROWS_AS(partition_model(cfg, 1, dir), InvalidConfig);
    cfg = small_config();
    cfg.layer_role = Role::Pooling;
    CHECK_THROWS_AS(partition_model(cfg, 1, dir), InvalidConfig);
}

TEST_CASE("accounted bytes match between header prediction and full read") {
    const auto dir = temp_dir("accounted");
    const auto manifest = partition_model(small_config(), 5, dir);
    for (const auto& rec : manifest.layers) {
        const auto info = read_layer_header(shard_path(dir), rec, manifest.data_type);
        const auto w = read_layer(manifest, shard_path(dir), rec.index);
        CHECK(accounted_bytes(info) == w.accounted_bytes);
        CHECK(w.accounted_bytes >= rec.byte_len);  // widened + bookkeeping >= on-disk
    }
}

TEST_CASE("open_model requires both files") {
    const auto dir = temp_dir("openmodel");
    partition_model(small_config(), 5, dir);
    CHECK_NOTHROW(open_model(dir));
    fs::remove(shard_path(dir));
    CHECK_THROWS_AS(open_model(dir), IoError);
    CHECK_THROWS_AS(open_model(dir / "nope"), IoError);
}

TEST_CASE("role and dtype names round-trip and reject junk") {
    for (Role r : {Role::Embedding, Role::Encoder, Role::Decoder, Role::Pooling, Role::LmHead})
        CHECK(role_from_name(role_name(r)) == r);
    for (DataType t : {DataType::FP32, DataType::FP16})
        CHECK(dtype_from_name(dtype_name(t)) == t);
    CHECK_THROWS_AS(role_from_name("conv"), ParseError);
    CHECK_THROWS_AS(dtype_from_name("FP8"), ParseError);
}
