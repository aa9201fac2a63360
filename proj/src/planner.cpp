#include "hermes/planner.hpp"

#include <algorithm>
#include <fstream>

#include "hermes/engine.hpp"
#include "hermes/errors.hpp"
#include "json.hpp"

namespace hermes::planner {

namespace {

using json = nlohmann::ordered_json;

std::vector<sim::SimLayer> streamed_layers(const profiler::ModelProfile& p) {
    std::vector<sim::SimLayer> layers;
    const int n = p.n_enc_dec();
    for (int k = 1; k <= n; ++k) {
        const auto& e = p.entry(k);
        layers.push_back({e.load_ms, e.compute_ms, e.mem_bytes});
    }
    return layers;
}

json budget_to_json(uint64_t b) {
    if (b == kUnbounded) return json("inf");
    return json(b);
}

uint64_t budget_from_json(const json& j) {
    if (j.is_string()) {
        if (j.get<std::string>() == "inf") return kUnbounded;
        throw ParseError("bad budget value '" + j.get<std::string>() + "'");
    }
    return j.get<uint64_t>();
}

}  // namespace

std::vector<std::vector<int>> assign_layers(int n, int m) {
    if (n < 1) throw InvalidConfig("layer count must be >= 1");
    if (m < 1) throw InvalidConfig("agent count must be >= 1");
    m = std::min(m, n);
    std::vector<std::vector<int>> agents(static_cast<size_t>(m));
    for (int k = 1; k <= n; ++k) agents[static_cast<size_t>((k - 1) % m)].push_back(k);
    return agents;
}

AgentRange candidate_agent_range(const profiler::ModelProfile& p, uint64_t budget) {
    const int n = p.n_enc_dec();
    if (n < 1) throw InvalidConfig("profile has no streamed layers");
    if (budget == kUnbounded) return {1, n};

    const uint64_t max_layer = p.max_enc_dec_bytes();
    if (p.resident_other_bytes > budget || max_layer > budget - p.resident_other_bytes)
        throw Infeasible("budget cannot hold resident layers plus one streamed layer");
    const uint64_t slots = (budget - p.resident_other_bytes) / max_layer;
    const uint64_t m_max = std::max<uint64_t>(1, std::min<uint64_t>(static_cast<uint64_t>(n), slots - 1));
    return {1, static_cast<int>(m_max)};
}

const char* plan_mode_name(PlanMode m) {
    return m == PlanMode::Simulated ? "simulated" : "prerun";
}

PlanMode plan_mode_from_name(const std::string& s) {
    if (s == "simulated") return PlanMode::Simulated;
    if (s == "prerun") return PlanMode::Prerun;
    throw ParseError("unknown plan mode '" + s + "'");
}

int ExecutionSchedule::lookup_m(const profiler::ModelProfile& p, uint64_t budget) const {
    if (profile_fingerprint != profiler::profile_fingerprint(p))
        throw InvalidConfig("schedule was built from a different profile (fingerprint mismatch)");
    for (const auto& e : entries) {
        if (e.mem_budget_bytes != budget) continue;
        if (!e.feasible) throw Infeasible("no feasible agent count for this budget");
        return e.chosen_m;
    }
    throw OutOfRange("schedule has no entry for the requested budget");
}

ExecutionSchedule plan_schedule(const profiler::ModelProfile& p, std::vector<uint64_t> budgets,
                                PlanMode mode,
                                const std::optional<std::filesystem::path>& model_dir,
                                const std::vector<int>& sample_input) {
    if (budgets.empty()) throw InvalidConfig("no budgets to plan for");
    std::sort(budgets.begin(), budgets.end());
    budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());

    ExecutionSchedule sched;
    sched.profile_fingerprint = profiler::profile_fingerprint(p);
    const auto layers = streamed_layers(p);

    std::optional<store::Model> model;
    if (mode == PlanMode::Prerun) {
        if (!model_dir) throw InvalidConfig("prerun planning needs the model directory");
        model = store::open_model(*model_dir);
    }
    const std::vector<int> input = sample_input.empty() ? std::vector<int>{1, 2, 3, 4} : sample_input;

    for (uint64_t budget : budgets) {
        ScheduleEntry entry;
        entry.mem_budget_bytes = budget;
        entry.source = plan_mode_name(mode);
        AgentRange range;
        try {
            range = candidate_agent_range(p, budget);
        } catch (const Infeasible&) {
            sched.entries.push_back(entry);
            continue;
        }

        if (mode == PlanMode::Simulated) {
            const auto sweep =
                sim::sweep_agents(layers, budget, p.resident_other_bytes, range.m_min, range.m_max);
            const sim::SweepEntry* best = nullptr;
            for (const auto& e : sweep) {
                if (!e.feasible) continue;
                if (!best || e.result.makespan_ms < best->result.makespan_ms) best = &e;
            }
            if (!best) {
                sched.entries.push_back(entry);
                continue;
            }
            entry.feasible = true;
            entry.chosen_m = best->m;
            entry.predicted_makespan_ms = best->result.makespan_ms;
            entry.predicted_peak_bytes = best->result.peak_mem_bytes;
        } else {
            int best_m = 0;
            double best_ms = 0.0;
            uint64_t best_peak = 0;
            for (int m = range.m_min; m <= range.m_max; ++m) {
                std::vector<double> lat;
                uint64_t peak = 0;
                for (int rep = 0; rep < 3; ++rep) {
                    const auto r = engine::run_pipeload(*model, input, m, budget);
                    lat.push_back(r.metrics.latency_ms);
                    peak = std::max(peak, r.metrics.peak_mem_bytes);
                }
                std::sort(lat.begin(), lat.end());
                const double med = lat[1];
                if (best_m == 0 || med < best_ms) {
                    best_m = m;
                    best_ms = med;
                    best_peak = peak;
                }
            }
            entry.feasible = true;
            entry.chosen_m = best_m;
            entry.predicted_makespan_ms = best_ms;
            entry.predicted_peak_bytes = best_peak;
        }
        sched.entries.push_back(entry);
    }
    return sched;
}

void write_schedule(const ExecutionSchedule& s, const std::filesystem::path& path) {
    json j;
    j["profile_fingerprint"] = s.profile_fingerprint;
    j["entries"] = json::array();
    for (const auto& e : s.entries) {
        json je;
        je["mem_budget_bytes"] = budget_to_json(e.mem_budget_bytes);
        je["feasible"] = e.feasible;
        if (e.feasible) {
            je["chosen_m"] = e.chosen_m;
            je["predicted_makespan_ms"] = e.predicted_makespan_ms;
            je["predicted_peak_bytes"] = e.predicted_peak_bytes;
        }
        je["source"] = e.source;
        j["entries"].push_back(std::move(je));
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write schedule " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("short write of schedule " + path.string());
}

ExecutionSchedule read_schedule(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read schedule " + path.string());
    try {
        const json j = json::parse(in);
        ExecutionSchedule s;
        s.profile_fingerprint = j.at("profile_fingerprint").get<std::string>();
        for (const auto& je : j.at("entries")) {
            ScheduleEntry e;
            e.mem_budget_bytes = budget_from_json(je.at("mem_budget_bytes"));
            e.feasible = je.at("feasible").get<bool>();
            if (e.feasible) {
                e.chosen_m = je.at("chosen_m").get<int>();
                e.predicted_makespan_ms = je.at("predicted_makespan_ms").get<double>();
                e.predicted_peak_bytes = je.at("predicted_peak_bytes").get<uint64_t>();
            }
            e.source = je.at("source").get<std::string>();
            s.entries.push_back(e);
        }
        return s;
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError("malformed schedule " + path.string() + ": " + ex.what());
    }
}

}  // namespace hermes::planner
