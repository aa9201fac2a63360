#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace hermes {

// Memory budgets are byte counts; "unbounded" is represented as the maximum
// value and prints/parses as "inf". CLI budgets are mebibytes.
inline constexpr uint64_t kUnbounded = UINT64_MAX;
inline constexpr uint64_t kMiB = 1024ull * 1024ull;

inline uint64_t mib_to_bytes(double mib) {
    return static_cast<uint64_t>(mib * static_cast<double>(kMiB) + 0.5);
}

// FNV-1a, 64-bit. Used for payload checksums, output digests and file
// fingerprints.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

std::string to_hex(uint64_t v);
uint64_t from_hex(const std::string& s);

// Set for the duration of an engine run; the profiler refuses to measure
// while it is up (per-layer timings would be polluted by concurrent work).
std::atomic<bool>& engine_active_flag();

// IEEE 754 binary16 <-> binary32, round-to-nearest-even. Model payloads
// declared FP16 are stored in this encoding and widened before compute.
uint16_t float_to_half(float f);
float half_to_float(uint16_t h);

// Deterministic uniform weights in [-0.1, 0.1]. The mapping from raw engine
// output to float is fixed arithmetic (no std::uniform_real_distribution) so
// the same seed produces the same bytes on any platform.
class WeightRng {
public:
    explicit WeightRng(uint64_t seed) : gen_(seed) {}

    float next() {
        const uint64_t bits = gen_() >> 11;  // 53 random bits
        const double unit = static_cast<double>(bits) * (1.0 / 9007199254740992.0);
        return static_cast<float>(0.2 * unit - 0.1);
    }

    void fill(std::vector<float>& out) {
        for (auto& v : out) v = next();
    }

private:
    std::mt19937_64 gen_;
};

// Per-tensor seed derivation: independent of write order, reproducible from
// (model seed, layer index, tensor name) alone.
inline uint64_t tensor_seed(uint64_t model_seed, int layer_index, std::string_view name) {
    uint64_t h = fnv1a64(&model_seed, sizeof(model_seed));
    h = fnv1a64(&layer_index, sizeof(layer_index), h);
    return fnv1a64(name.data(), name.size(), h);
}

// Little-endian scalar I/O into byte buffers.
template <typename T>
void append_le(std::vector<uint8_t>& buf, T v) {
    static_assert(std::is_integral_v<T>);
    for (size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

template <typename T>
T read_le(const uint8_t* p) {
    static_assert(std::is_integral_v<T>);
    using U = std::make_unsigned_t<T>;
    U v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return static_cast<T>(v);
}

}  // namespace hermes
