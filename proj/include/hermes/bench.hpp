#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hermes/engine.hpp"

namespace hermes::bench {

// Speedup = baseline latency / other latency. Ratio = other peak / baseline
// peak. Both reject nonpositive inputs.
double compute_speedup(double t_baseline_ms, double t_other_ms);
double compute_ratio(double m_other_bytes, double m_baseline_bytes);

struct SuiteModel {
    std::string name;
    std::filesystem::path dir;
};

// Grid description. Baseline and standard pipeline are budget-free by
// definition and contribute one row per model; pipeload fans out over
// budgets x agent counts (or the planner's choice per budget when
// agents_auto is set). A baseline row is always included — it anchors the
// speedup/ratio columns.
struct SuiteConfig {
    std::vector<SuiteModel> models;
    std::vector<engine::RunMode> modes;
    std::vector<int> agent_counts;  // pipeload fan-out; ignored by other modes
    bool agents_auto = false;       // pick m per budget via the planner
    std::vector<uint64_t> budgets;  // bytes; kUnbounded allowed
    int reps = 3;
    std::vector<int> input;
};

SuiteConfig suite_from_json_file(const std::filesystem::path& path);

struct BenchRow {
    std::string model;
    std::string mode;
    int agents = 1;
    uint64_t budget = kUnbounded;
    bool feasible = true;
    double latency_ms = 0.0;
    uint64_t peak_mem_bytes = 0;
    double speedup = 1.0;
    double ratio = 1.0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    std::string environment;
};

// Median-of-reps latency per cell; engine runs are serialized. The baseline
// row for each model anchors that model's speedup/ratio columns. Infeasible
// cells are marked and reported as nan, not fatal.
BenchReport run_bench(const SuiteConfig& cfg);

// CSV columns: model,mode,agents,budget_mb,latency_ms,peak_mem_mb,speedup,ratio.
void write_report_csv(const BenchReport& report, const std::filesystem::path& path);

}  // namespace hermes::bench
