#include "hermes/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <thread>

#include "hermes/errors.hpp"
#include "hermes/planner.hpp"
#include "hermes/profiler.hpp"
#include "json.hpp"

namespace hermes::bench {

namespace {

using json = nlohmann::json;

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string budget_mb_str(uint64_t budget) {
    if (budget == kUnbounded) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", static_cast<double>(budget) / static_cast<double>(kMiB));
    return buf;
}

}  // namespace

double compute_speedup(double t_baseline_ms, double t_other_ms) {
    if (t_baseline_ms <= 0 || t_other_ms <= 0)
        throw InvalidInput("latencies must be positive to compare");
    return t_baseline_ms / t_other_ms;
}

double compute_ratio(double m_other_bytes, double m_baseline_bytes) {
    if (m_other_bytes <= 0 || m_baseline_bytes <= 0)
        throw InvalidInput("memory footprints must be positive to compare");
    return m_other_bytes / m_baseline_bytes;
}

SuiteConfig suite_from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read suite " + path.string());
    try {
        const json j = json::parse(in);
        SuiteConfig cfg;
        for (const auto& m : j.at("models"))
            cfg.models.push_back({m.at("name").get<std::string>(),
                                  std::filesystem::path(m.at("dir").get<std::string>())});
        for (const auto& mode : j.at("modes"))
            cfg.modes.push_back(engine::run_mode_from_name(mode.get<std::string>()));
        const auto& agents = j.at("agents");
        if (agents.is_string()) {
            if (agents.get<std::string>() != "auto")
                throw ParseError("agents must be a list or \"auto\"");
            cfg.agents_auto = true;
        } else {
            for (const auto& a : agents) cfg.agent_counts.push_back(a.get<int>());
        }
        for (const auto& b : j.at("budgets_mb")) {
            if (b.is_string()) {
                if (b.get<std::string>() != "inf") throw ParseError("bad budget in suite");
                cfg.budgets.push_back(kUnbounded);
            } else {
                cfg.budgets.push_back(mib_to_bytes(b.get<double>()));
            }
        }
        cfg.reps = j.value("reps", 3);
        for (const auto& t : j.at("input")) cfg.input.push_back(t.get<int>());
        return cfg;
    } catch (const json::exception& ex) {
        throw ParseError("malformed suite " + path.string() + ": " + ex.what());
    }
}

BenchReport run_bench(const SuiteConfig& cfg) {
    if (cfg.models.empty() || cfg.modes.empty() || cfg.budgets.empty())
        throw InvalidConfig("bench grid must name models, modes and budgets");
    if (cfg.reps < 3) throw InvalidConfig("bench needs reps >= 3");
    if (cfg.input.empty()) throw InvalidConfig("bench needs a sample input");
    if (!cfg.agents_auto && cfg.agent_counts.empty() &&
        std::count(cfg.modes.begin(), cfg.modes.end(), engine::RunMode::PipeLoad))
        throw InvalidConfig("pipeload rows need agent counts or agents=auto");

    BenchReport report;
    report.environment = std::to_string(std::thread::hardware_concurrency()) + " hw threads";

    for (const auto& sm : cfg.models) {
        const store::Model model = store::open_model(sm.dir);

        auto measure = [&](auto&& run_once) {
            std::vector<double> lat;
            uint64_t peak = 0;
            for (int rep = 0; rep < cfg.reps; ++rep) {
                const engine::RunResult r = run_once();
                lat.push_back(r.metrics.latency_ms);
                peak = std::max(peak, r.metrics.peak_mem_bytes);
            }
            return std::pair<double, uint64_t>(median_of(lat), peak);
        };

        // Baseline anchors every other row of this model.
        const auto [base_ms, base_peak] =
            measure([&] { return engine::run_baseline(model, cfg.input); });
        BenchRow base_row{sm.name, "baseline", 1, kUnbounded, true, base_ms, base_peak, 1.0, 1.0};
        report.rows.push_back(base_row);

        auto push_row = [&](const std::string& mode, int agents, uint64_t budget, double ms,
                            uint64_t peak) {
            BenchRow row{sm.name, mode, agents, budget, true, ms, peak,
                         compute_speedup(base_ms, ms),
                         compute_ratio(static_cast<double>(peak), static_cast<double>(base_peak))};
            report.rows.push_back(row);
        };

        std::optional<profiler::ModelProfile> profile;  // only needed for agents_auto
        for (const engine::RunMode mode : cfg.modes) {
            switch (mode) {
                case engine::RunMode::Baseline:
                    break;  // already included
                case engine::RunMode::Pipeline: {
                    const auto [ms, peak] =
                        measure([&] { return engine::run_standard_pipeline(model, cfg.input); });
                    push_row("pipeline", 1, kUnbounded, ms, peak);
                    break;
                }
                case engine::RunMode::PipeLoad: {
                    for (uint64_t budget : cfg.budgets) {
                        std::vector<int> agent_counts = cfg.agent_counts;
                        if (cfg.agents_auto) {
                            if (!profile)
                                profile = profiler::profile_model(model, cfg.input, 3, 1,
                                                                  /*cold_cache=*/false);
                            try {
                                const auto sched = planner::plan_schedule(
                                    *profile, {budget}, planner::PlanMode::Simulated);
                                agent_counts = {sched.lookup_m(*profile, budget)};
                            } catch (const Infeasible&) {
                                agent_counts.clear();
                                BenchRow row{sm.name, "pipeload", 0, budget, false,
                                             0.0,     0,          0, 0};
                                report.rows.push_back(row);
                            }
                        }
                        for (int m : agent_counts) {
                            try {
                                const auto [ms, peak] = measure(
                                    [&] { return engine::run_pipeload(model, cfg.input, m, budget); });
                                push_row("pipeload", m, budget, ms, peak);
                            } catch (const Infeasible&) {
                                BenchRow row{sm.name, "pipeload", m, budget, false, 0.0, 0, 0, 0};
                                report.rows.push_back(row);
                            }
                        }
                    }
                    break;
                }
            }
        }
    }
    return report;
}

void write_report_csv(const BenchReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report " + path.string());
    out << "model,mode,agents,budget_mb,latency_ms,peak_mem_mb,speedup,ratio\n";
    char buf[160];
    for (const auto& r : report.rows) {
        if (r.feasible) {
            std::snprintf(buf, sizeof(buf), "%.3f,%.3f,%.3f,%.3f", r.latency_ms,
                          static_cast<double>(r.peak_mem_bytes) / static_cast<double>(kMiB),
                          r.speedup, r.ratio);
        } else {
            std::snprintf(buf, sizeof(buf), "nan,nan,nan,nan");
        }
        out << r.model << ',' << r.mode << ',' << r.agents << ',' << budget_mb_str(r.budget) << ','
            << buf << '\n';
    }
    if (!out) throw IoError("short write of report " + path.string());
}

}  // namespace hermes::bench
