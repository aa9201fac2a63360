#pragma once

#include <cstdint>
#include <vector>

#include "hermes/profiler.hpp"
#include "hermes/timeline.hpp"
#include "hermes/util.hpp"

namespace hermes::sim {

// Per-layer costs for the streamed layers 1..N, in index order. Embedding and
// head layers are not simulated; their footprint rides in
// resident_other_bytes for the whole run.
struct SimLayer {
    double load_ms = 0.0;
    double comp_ms = 0.0;
    uint64_t mem_bytes = 0;
};

struct SimConfig {
    std::vector<SimLayer> layers;
    int m = 1;
    uint64_t mem_budget_bytes = kUnbounded;
    uint64_t resident_other_bytes = 0;
};

struct SimResult {
    double makespan_ms = 0.0;     // last comp_end (first load starts at t=0)
    uint64_t peak_mem_bytes = 0;  // max over time of layers + resident_other
    double stall_ms = 0.0;        // compute-window idle time
    std::vector<TimelineEvent> timeline;
};

SimConfig sim_config_from_profile(const profiler::ModelProfile& p, int m, uint64_t budget);

// Replays the pipelined-loading rules exactly: agent i loads layers i, i+m,
// i+2m, ... one at a time; a load is admitted only if the post-admission
// total fits the budget while leaving room for the largest lower-indexed
// layer still waiting to load (the in-order compute's next needs — without
// the reserve, later layers could wedge the pipeline by filling the budget),
// otherwise the agent blocks (stop) until a destroy frees room (resume),
// granted lowest-pending-layer first; compute consumes layers strictly in
// index order and each layer is destroyed immediately after its comp_end.
// Throws Infeasible when even one layer cannot fit.
SimResult simulate(const SimConfig& cfg);

struct SweepEntry {
    int m = 0;
    bool feasible = false;
    bool throttled = false;  // at least one stop happened
    SimResult result;
};

std::vector<SweepEntry> sweep_agents(const std::vector<SimLayer>& layers, uint64_t budget,
                                     uint64_t resident_other, int m_lo, int m_hi);

}  // namespace hermes::sim
