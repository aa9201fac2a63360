#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hermes/profiler.hpp"
#include "hermes/simulator.hpp"

namespace hermes::planner {

// Stride distribution: agent i (1-based) takes layers i, i+m, i+2m, ...
// m greater than N is clamped to N. The lists partition {1..N}.
std::vector<std::vector<int>> assign_layers(int n, int m);

// Feasible loader-count range for a budget. One memory slot is reserved for
// the layer under computation, so with S = budget - resident_other and L =
// the largest streamed layer: m_max = min(N, floor(S/L) - 1), floored at 1.
// Throws Infeasible when even a single streamed layer cannot fit.
struct AgentRange {
    int m_min = 1;
    int m_max = 1;
};
AgentRange candidate_agent_range(const profiler::ModelProfile& p, uint64_t budget);

enum class PlanMode { Simulated, Prerun };
const char* plan_mode_name(PlanMode m);
PlanMode plan_mode_from_name(const std::string& s);

struct ScheduleEntry {
    uint64_t mem_budget_bytes = 0;
    bool feasible = false;
    int chosen_m = 0;
    double predicted_makespan_ms = 0.0;
    uint64_t predicted_peak_bytes = 0;
    std::string source;  // "simulated" or "prerun"
};

struct ExecutionSchedule {
    std::string profile_fingerprint;
    std::vector<ScheduleEntry> entries;  // sorted by budget ascending

    // Chosen agent count for a budget; refuses a schedule/profile pair whose
    // fingerprints disagree. Infeasible entries and unknown budgets throw.
    int lookup_m(const profiler::ModelProfile& p, uint64_t budget) const;
};

// For each budget: sweep m over the candidate range and pick the makespan
// argmin, ties toward smaller m. Simulated mode prices candidates with the
// event simulator; prerun mode executes real engine runs on model_dir
// (median of 3) and picks from the measurements.
ExecutionSchedule plan_schedule(const profiler::ModelProfile& p, std::vector<uint64_t> budgets,
                                PlanMode mode,
                                const std::optional<std::filesystem::path>& model_dir = {},
                                const std::vector<int>& sample_input = {});

void write_schedule(const ExecutionSchedule& s, const std::filesystem::path& path);
ExecutionSchedule read_schedule(const std::filesystem::path& path);

}  // namespace hermes::planner
