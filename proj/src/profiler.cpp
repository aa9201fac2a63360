#include "hermes/profiler.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <chrono>
#include <fstream>
#include <thread>

#include "hermes/errors.hpp"
#include "hermes/kernels.hpp"
#include "hermes/util.hpp"
#include "json.hpp"

namespace hermes::profiler {

namespace {

using Clock = std::chrono::steady_clock;
using json = nlohmann::ordered_json;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double coeff_of_variation(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (mean == 0.0) return 0.0;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size())) / mean;
}

// Best-effort page-cache defeat: fresh copy of the shard, synced and then
// advised out of the cache, so each rep's reads hit the disk path again.
std::filesystem::path cold_copy(const std::filesystem::path& shard,
                                const std::filesystem::path& dir, int rep) {
    const auto copy = dir / ("cold_rep" + std::to_string(rep) + ".shard");
    std::filesystem::copy_file(shard, copy, std::filesystem::copy_options::overwrite_existing);
    const int fd = ::open(copy.c_str(), O_RDONLY);
    if (fd >= 0) {
        ::fdatasync(fd);
        ::posix_fadvise(fd, 0, 0, POSIX_FADV_DONTNEED);
        ::close(fd);
    }
    return copy;
}

json profile_to_json(const ModelProfile& p) {
    json j;
    j["model_name"] = p.model_name;
    j["data_type"] = store::dtype_name(p.data_type);
    j["hidden_dim"] = p.hidden_dim;
    j["num_heads"] = p.num_heads;
    j["seq_len"] = p.seq_len;
    j["reps"] = p.reps;
    j["warmup"] = p.warmup;
    j["cold_cache"] = p.cold_cache;
    j["environment"] = p.environment;
    j["activation_bytes"] = p.activation_bytes;
    j["resident_other_bytes"] = p.resident_other_bytes;
    j["layers"] = json::array();
    for (const auto& e : p.layers) {
        json le;
        le["k"] = e.k;
        le["role"] = store::role_name(e.role);
        le["load_ms"] = e.load_ms;
        le["compute_ms"] = e.compute_ms;
        le["mem_bytes"] = e.mem_bytes;
        le["load_cv"] = e.load_cv;
        j["layers"].push_back(std::move(le));
    }
    return j;
}

}  // namespace

int ModelProfile::n_enc_dec() const {
    int n = 0;
    for (const auto& e : layers)
        if (store::is_enc_dec(e.role)) ++n;
    return n;
}

const LayerProfileEntry& ModelProfile::entry(int k) const {
    for (const auto& e : layers)
        if (e.k == k) return e;
    throw OutOfRange("no profile entry for layer " + std::to_string(k));
}

uint64_t ModelProfile::max_enc_dec_bytes() const {
    uint64_t mx = 0;
    for (const auto& e : layers)
        if (store::is_enc_dec(e.role)) mx = std::max(mx, e.mem_bytes);
    return mx;
}

uint64_t ModelProfile::total_enc_dec_bytes() const {
    uint64_t sum = 0;
    for (const auto& e : layers)
        if (store::is_enc_dec(e.role)) sum += e.mem_bytes;
    return sum;
}

ModelProfile profile_model(const store::Model& model, const std::vector<int>& sample_input,
                           int reps, int warmup, bool cold_cache) {
    if (reps < 3) throw InvalidConfig("profiling needs reps >= 3, got " + std::to_string(reps));
    if (warmup < 1) throw InvalidConfig("profiling needs warmup >= 1");
    if (engine_active_flag().load())
        throw InvalidConfig("profiler refuses to run while an engine run is active");

    const auto& manifest = model.manifest;
    const size_t n_records = manifest.layers.size();
    std::vector<std::vector<double>> load_samples(n_records), comp_samples(n_records);
    std::vector<uint64_t> mem(n_records, 0);

    std::filesystem::path cold_dir;
    if (cold_cache) {
        cold_dir = model.shard_path.parent_path() / ".profile_cold";
        std::filesystem::create_directories(cold_dir);
    }

    for (int rep = 0; rep < warmup + reps; ++rep) {
        const bool keep = rep >= warmup;
        const std::filesystem::path shard =
            cold_cache ? cold_copy(model.shard_path, cold_dir, rep) : model.shard_path;

        kernels::Activation act;
        for (size_t i = 0; i < n_records; ++i) {
            const auto& rec = manifest.layers[i];
            const auto t_load = Clock::now();
            store::LayerWeights w = store::read_layer(manifest, shard, rec.index);
            const double load_ms = ms_since(t_load);
            mem[i] = w.accounted_bytes;

            const auto t_comp = Clock::now();
            switch (rec.role) {
                case store::Role::Embedding:
                    act = kernels::embed(w, sample_input);
                    break;
                case store::Role::Encoder:
                case store::Role::Decoder:
                    kernels::forward_layer(w, act);
                    break;
                default:
                    kernels::head_forward(w, act);
                    break;
            }
            const double comp_ms = ms_since(t_comp);
            if (keep) {
                load_samples[i].push_back(load_ms);
                comp_samples[i].push_back(comp_ms);
            }
        }
        if (cold_cache) std::filesystem::remove(shard);
    }
    if (cold_cache) std::filesystem::remove_all(cold_dir);

    ModelProfile p;
    p.model_name = manifest.model_name;
    p.data_type = manifest.data_type;
    p.hidden_dim = manifest.hidden_dim;
    p.num_heads = manifest.num_heads;
    p.seq_len = manifest.seq_len;
    p.reps = reps;
    p.warmup = warmup;
    p.cold_cache = cold_cache;
    p.environment = std::to_string(std::thread::hardware_concurrency()) + " hw threads";
    p.activation_bytes =
        static_cast<uint64_t>(manifest.seq_len) * static_cast<uint64_t>(manifest.hidden_dim) * 4u;
    p.resident_other_bytes = p.activation_bytes;
    for (size_t i = 0; i < n_records; ++i) {
        const auto& rec = manifest.layers[i];
        LayerProfileEntry e;
        e.k = rec.index;
        e.role = rec.role;
        e.load_ms = median(load_samples[i]);
        e.compute_ms = comp_samples[i].empty() ? 0.0 : median(comp_samples[i]);
        // Wall clocks can quantize a sub-microsecond op to zero; metrics are
        // declared positive, so clamp to half a microsecond.
        e.load_ms = std::max(e.load_ms, 5e-4);
        e.compute_ms = std::max(e.compute_ms, 5e-4);
        e.mem_bytes = mem[i];
        e.load_cv = coeff_of_variation(load_samples[i]);
        p.layers.push_back(e);
        if (!store::is_enc_dec(rec.role)) p.resident_other_bytes += mem[i];
    }
    return p;
}

void write_profile(const ModelProfile& p, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write profile " + path.string());
    out << profile_to_json(p).dump(2) << '\n';
    if (!out) throw IoError("short write of profile " + path.string());
}

ModelProfile read_profile(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read profile " + path.string());
    try {
        const json j = json::parse(in);
        ModelProfile p;
        p.model_name = j.at("model_name").get<std::string>();
        p.data_type = store::dtype_from_name(j.at("data_type").get<std::string>());
        p.hidden_dim = j.at("hidden_dim").get<int>();
        p.num_heads = j.at("num_heads").get<int>();
        p.seq_len = j.at("seq_len").get<int>();
        p.reps = j.at("reps").get<int>();
        p.warmup = j.at("warmup").get<int>();
        p.cold_cache = j.at("cold_cache").get<bool>();
        p.environment = j.at("environment").get<std::string>();
        p.activation_bytes = j.at("activation_bytes").get<uint64_t>();
        p.resident_other_bytes = j.at("resident_other_bytes").get<uint64_t>();
        for (const auto& le : j.at("layers")) {
            LayerProfileEntry e;
            e.k = le.at("k").get<int>();
            e.role = store::role_from_name(le.at("role").get<std::string>());
            e.load_ms = le.at("load_ms").get<double>();
            e.compute_ms = le.at("compute_ms").get<double>();
            e.mem_bytes = le.at("mem_bytes").get<uint64_t>();
            e.load_cv = le.at("load_cv").get<double>();
            p.layers.push_back(e);
        }
        return p;
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError("malformed profile " + path.string() + ": " + ex.what());
    }
}

std::string profile_fingerprint(const ModelProfile& p) {
    const std::string s = profile_to_json(p).dump();
    return to_hex(fnv1a64(s.data(), s.size()));
}

}  // namespace hermes::profiler
