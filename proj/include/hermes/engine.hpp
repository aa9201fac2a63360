#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hermes/model_store.hpp"
#include "hermes/timeline.hpp"
#include "hermes/util.hpp"

namespace hermes::engine {

enum class RunMode { Baseline, Pipeline, PipeLoad };
const char* run_mode_name(RunMode m);
RunMode run_mode_from_name(const std::string& s);

struct RunMetrics {
    std::string mode;
    int m = 1;
    uint64_t mem_budget_bytes = kUnbounded;
    double latency_ms = 0.0;       // end-to-end wall time of the run
    uint64_t peak_mem_bytes = 0;   // ledger high watermark (accounted bytes)
    double stall_ms = 0.0;         // compute-window idle across streamed layers
    uint64_t output_digest = 0;    // FNV-1a of the output bytes
    std::vector<TimelineEvent> timeline;
};

struct RunResult {
    std::vector<float> output;  // head output; final activation if the model has no head
    RunMetrics metrics;
};

// Loads every layer first, then computes sequentially. No memory budget and
// no destruction; peak memory is the whole model plus the activation buffer.
RunResult run_baseline(const store::Model& model, const std::vector<int>& input);

// Single loader overlapping loads with compute; layers are retained (no
// destruction), budget unbounded.
RunResult run_standard_pipeline(const store::Model& model, const std::vector<int>& input);

// m loaders stream the encoder/decoder layers (stride assignment); the
// inference worker consumes them strictly in index order; the daemon worker
// frees each layer right after its forward pass and unblocks loaders waiting
// for room. The budget is a hard bound: a load is admitted only if the
// post-admission total fits while leaving room for the largest lower-indexed
// layer still waiting to load, so loaders racing ahead can never wedge the
// in-order compute. Embedding/head layers load once up front and stay
// resident. destruction_off retains layers instead (needs an unbounded
// budget) and reduces the run to the standard-pipeline schedule.
RunResult run_pipeload(const store::Model& model, const std::vector<int>& input, int m,
                       uint64_t mem_budget_bytes, bool destruction_off = false);

struct DecodeResult {
    std::vector<int> tokens;  // prompt followed by the generated ids
    RunMetrics metrics;       // aggregated; timeline concatenates all passes
};

// Greedy decoding, one full pass per generated token. Streaming modes reload
// the layers for every token; baseline loads once and reuses the weights.
// Decoder-stack models with an lm_head only.
DecodeResult generate_tokens(const store::Model& model, const std::vector<int>& prompt_ids,
                             int out_len, RunMode mode, int m, uint64_t mem_budget_bytes);

}  // namespace hermes::engine
