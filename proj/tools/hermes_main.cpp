// hermes: partition, profile, plan and run layer-streamed transformer
// inference under a memory budget.
//
// Exit codes: 0 success, 2 infeasible budget, 3 integrity failure,
// 1 anything else.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "hermes/bench.hpp"
#include "hermes/engine.hpp"
#include "hermes/errors.hpp"
#include "hermes/planner.hpp"
#include "hermes/profiler.hpp"
#include "hermes/simulator.hpp"
#include "hermes/synth.hpp"
#include "hermes/util.hpp"
#include "json.hpp"

namespace {

using json = nlohmann::ordered_json;

uint64_t parse_budget_mb(const std::string& s) {
    if (s == "inf") return hermes::kUnbounded;
    try {
        size_t used = 0;
        const double mb = std::stod(s, &used);
        if (used != s.size() || mb <= 0) throw std::invalid_argument(s);
        return hermes::mib_to_bytes(mb);
    } catch (const std::exception&) {
        throw hermes::InvalidConfig("bad memory budget '" + s + "' (MB number or \"inf\")");
    }
}

std::vector<int> read_token_ids(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw hermes::IoError("cannot read input " + path.string());
    std::vector<int> ids;
    std::string tok;
    while (in >> tok) {
        // Accept comma- or whitespace-separated ids.
        std::stringstream ss(tok);
        std::string part;
        while (std::getline(ss, part, ',')) {
            if (part.empty()) continue;
            try {
                ids.push_back(std::stoi(part));
            } catch (const std::exception&) {
                throw hermes::ParseError("bad token id '" + part + "' in " + path.string());
            }
        }
    }
    if (ids.empty()) throw hermes::InvalidInput("no token ids in " + path.string());
    return ids;
}

json sim_result_json(const hermes::sim::SimResult& r, int m, bool throttled) {
    json j;
    j["agents"] = m;
    j["makespan_ms"] = r.makespan_ms;
    j["peak_mem_bytes"] = r.peak_mem_bytes;
    j["stall_ms"] = r.stall_ms;
    j["throttled"] = throttled;
    return j;
}

bool sim_throttled(const hermes::sim::SimResult& r) {
    for (const auto& e : r.timeline)
        if (e.kind == hermes::EventKind::Stop) return true;
    return false;
}

json run_metrics_json(const hermes::engine::RunMetrics& m) {
    json j;
    j["mode"] = m.mode;
    j["agents"] = m.m;
    j["mem_budget_bytes"] =
        m.mem_budget_bytes == hermes::kUnbounded ? json("inf") : json(m.mem_budget_bytes);
    j["latency_ms"] = m.latency_ms;
    j["peak_mem_bytes"] = m.peak_mem_bytes;
    j["stall_ms"] = m.stall_ms;
    j["output_digest"] = hermes::to_hex(m.output_digest);
    return j;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"Layer-streamed transformer inference under a memory budget"};
    app.require_subcommand(1);

    // partition
    auto* partition = app.add_subcommand("partition", "Generate a layer-partitioned model");
    std::string part_config, part_out;
    uint64_t part_seed = 1;
    partition->add_option("--config", part_config, "Model hyperparameter JSON")->required();
    partition->add_option("--out", part_out, "Output model directory")->required();
    partition->add_option("--seed", part_seed, "Weight generator seed");

    // profile
    auto* profile = app.add_subcommand("profile", "Measure per-layer load/compute/memory");
    std::string prof_model, prof_out, prof_cold = "on";
    int prof_reps = 5, prof_warmup = 1;
    profile->add_option("--model", prof_model, "Model directory")->required();
    profile->add_option("--reps", prof_reps, "Measured passes");
    profile->add_option("--warmup", prof_warmup, "Discarded passes");
    profile->add_option("--cold-cache", prof_cold, "on|off: defeat the page cache per rep")
        ->check(CLI::IsMember({"on", "off"}));
    profile->add_option("--out", prof_out, "Profile JSON path")->required();

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Replay the loading pipeline on a profile");
    std::string sim_profile, sim_budget = "inf", sim_sweep, sim_out, sim_timeline;
    int sim_agents = 1;
    simulate->add_option("--profile", sim_profile, "Profile JSON")->required();
    simulate->add_option("--agents", sim_agents, "Loader count");
    simulate->add_option("--mem-budget", sim_budget, "Budget in MB, or \"inf\"");
    simulate->add_option("--sweep", sim_sweep, "Agent range m1..m2 (overrides --agents)");
    simulate->add_option("--out", sim_out, "Result JSON path (default: stdout)");
    simulate->add_option("--timeline", sim_timeline, "Timeline CSV path");

    // plan
    auto* plan = app.add_subcommand("plan", "Choose the loader count per memory budget");
    std::string plan_profile, plan_budgets, plan_mode = "simulated", plan_out, plan_model;
    plan->add_option("--profile", plan_profile, "Profile JSON")->required();
    plan->add_option("--budgets", plan_budgets, "Comma-separated budgets in MB (\"inf\" allowed)")
        ->required();
    plan->add_option("--mode", plan_mode, "simulated|prerun")
        ->check(CLI::IsMember({"simulated", "prerun"}));
    plan->add_option("--model", plan_model, "Model directory (prerun mode)");
    plan->add_option("--out", plan_out, "Schedule JSON path")->required();

    // run
    auto* run = app.add_subcommand("run", "Execute one inference (or decode) run");
    std::string run_model, run_mode = "pipeload", run_budget = "inf", run_input, run_timeline;
    int run_agents = 1, run_tokens = 0;
    run->add_option("--model", run_model, "Model directory")->required();
    run->add_option("--mode", run_mode, "baseline|pipeline|pipeload")
        ->check(CLI::IsMember({"baseline", "pipeline", "pipeload"}));
    run->add_option("--agents", run_agents, "Loader count (pipeload)");
    run->add_option("--mem-budget", run_budget, "Budget in MB, or \"inf\"");
    run->add_option("--input", run_input, "Token id file (whitespace/comma separated)")->required();
    run->add_option("--tokens", run_tokens, "Generate this many tokens greedily");
    run->add_option("--timeline", run_timeline, "Write the event timeline CSV here");

    // bench
    auto* bench = app.add_subcommand("bench", "Run a mode/budget grid and emit a CSV report");
    std::string bench_suite, bench_out;
    bench->add_option("--suite", bench_suite, "Suite JSON")->required();
    bench->add_option("--out", bench_out, "Report CSV path")->required();

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a delay-calibrated synthetic model");
    std::string synth_out, synth_role = "encoder", synth_head = "pooling", synth_name = "synth";
    int synth_n = 24;
    double synth_load = 10.0, synth_comp = 1.0, synth_layer_mb = 4.0;
    synth->add_option("--n", synth_n, "Streamed layer count");
    synth->add_option("--load-ms", synth_load, "Injected load delay per layer");
    synth->add_option("--comp-ms", synth_comp, "Injected compute delay per layer");
    synth->add_option("--layer-mb", synth_layer_mb, "Payload MiB per layer");
    synth->add_option("--role", synth_role, "encoder|decoder")
        ->check(CLI::IsMember({"encoder", "decoder"}));
    synth->add_option("--head", synth_head, "pooling|lm_head")
        ->check(CLI::IsMember({"pooling", "lm_head"}));
    synth->add_option("--name", synth_name, "Model name");
    synth->add_option("--out", synth_out, "Output model directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (partition->parsed()) {
        const auto cfg = hermes::store::gen_config_from_json_file(part_config);
        const auto manifest = hermes::store::partition_model(cfg, part_seed, part_out);
        std::printf("wrote %s: %zu records, N=%d\n", part_out.c_str(), manifest.layers.size(),
                    manifest.n_enc_dec());
        return 0;
    }

    if (profile->parsed()) {
        const auto model = hermes::store::open_model(prof_model);
        const std::vector<int> sample = {1, 2, 3, 4};
        const auto p =
            hermes::profiler::profile_model(model, sample, prof_reps, prof_warmup, prof_cold == "on");
        hermes::profiler::write_profile(p, prof_out);
        std::printf("wrote %s: %zu layers profiled\n", prof_out.c_str(), p.layers.size());
        return 0;
    }

    if (simulate->parsed()) {
        const auto p = hermes::profiler::read_profile(sim_profile);
        const uint64_t budget = parse_budget_mb(sim_budget);
        json out_json;
        std::vector<hermes::TimelineEvent> timeline;
        if (!sim_sweep.empty()) {
            const auto sep = sim_sweep.find("..");
            if (sep == std::string::npos)
                throw hermes::InvalidConfig("sweep range must look like 1..6");
            const int m1 = std::stoi(sim_sweep.substr(0, sep));
            const int m2 = std::stoi(sim_sweep.substr(sep + 2));
            const auto cfg1 = hermes::sim::sim_config_from_profile(p, 1, budget);
            const auto entries =
                hermes::sim::sweep_agents(cfg1.layers, budget, cfg1.resident_other_bytes, m1, m2);
            out_json = json::array();
            for (const auto& e : entries) {
                json je;
                if (e.feasible) {
                    je = sim_result_json(e.result, e.m, e.throttled);
                } else {
                    je["agents"] = e.m;
                    je["feasible"] = false;
                }
                out_json.push_back(std::move(je));
                if (e.feasible && e.m == m2) timeline = e.result.timeline;
            }
        } else {
            const auto cfg = hermes::sim::sim_config_from_profile(p, sim_agents, budget);
            const auto r = hermes::sim::simulate(cfg);
            out_json = sim_result_json(r, sim_agents, sim_throttled(r));
            timeline = r.timeline;
        }
        if (sim_out.empty()) {
            std::cout << out_json.dump(2) << '\n';
        } else {
            std::ofstream f(sim_out);
            if (!f) throw hermes::IoError("cannot write " + sim_out);
            f << out_json.dump(2) << '\n';
        }
        if (!sim_timeline.empty()) hermes::write_timeline_csv(timeline, sim_timeline);
        return 0;
    }

    if (plan->parsed()) {
        const auto p = hermes::profiler::read_profile(plan_profile);
        std::vector<uint64_t> budgets;
        std::stringstream ss(plan_budgets);
        std::string part;
        while (std::getline(ss, part, ','))
            if (!part.empty()) budgets.push_back(parse_budget_mb(part));
        std::optional<std::filesystem::path> model_dir;
        if (!plan_model.empty()) model_dir = plan_model;
        const auto sched = hermes::planner::plan_schedule(
            p, budgets, hermes::planner::plan_mode_from_name(plan_mode), model_dir);
        hermes::planner::write_schedule(sched, plan_out);
        std::printf("wrote %s: %zu budget entries\n", plan_out.c_str(), sched.entries.size());
        return 0;
    }

    if (run->parsed()) {
        const auto model = hermes::store::open_model(run_model);
        const auto input = read_token_ids(run_input);
        const uint64_t budget = parse_budget_mb(run_budget);
        const auto mode = hermes::engine::run_mode_from_name(run_mode);

        hermes::engine::RunMetrics metrics;
        json extra;
        if (run_tokens > 0) {
            const auto d =
                hermes::engine::generate_tokens(model, input, run_tokens, mode, run_agents, budget);
            metrics = std::move(d.metrics);
            extra["tokens"] = d.tokens;
        } else {
            hermes::engine::RunResult r;
            switch (mode) {
                case hermes::engine::RunMode::Baseline:
                    r = hermes::engine::run_baseline(model, input);
                    break;
                case hermes::engine::RunMode::Pipeline:
                    r = hermes::engine::run_standard_pipeline(model, input);
                    break;
                case hermes::engine::RunMode::PipeLoad:
                    r = hermes::engine::run_pipeload(model, input, run_agents, budget);
                    break;
            }
            metrics = std::move(r.metrics);
        }
        json j = run_metrics_json(metrics);
        for (auto& [key, value] : extra.items()) j[key] = value;
        std::cout << j.dump(2) << '\n';
        if (!run_timeline.empty()) hermes::write_timeline_csv(metrics.timeline, run_timeline);
        return 0;
    }

    if (bench->parsed()) {
        const auto cfg = hermes::bench::suite_from_json_file(bench_suite);
        const auto report = hermes::bench::run_bench(cfg);
        hermes::bench::write_report_csv(report, bench_out);
        std::printf("wrote %s: %zu rows\n", bench_out.c_str(), report.rows.size());
        return 0;
    }

    if (synth->parsed()) {
        hermes::synth::SynthSpec spec;
        spec.name = synth_name;
        spec.n_layers = synth_n;
        spec.load_ms = synth_load;
        spec.comp_ms = synth_comp;
        spec.layer_mb = synth_layer_mb;
        spec.layer_role = hermes::store::role_from_name(synth_role);
        spec.head_role = hermes::store::role_from_name(synth_head);
        const auto manifest = hermes::synth::make_synth_model(spec, synth_out);
        std::printf("wrote %s: %zu records, N=%d\n", synth_out.c_str(), manifest.layers.size(),
                    manifest.n_enc_dec());
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const hermes::Infeasible& e) {
        std::fprintf(stderr, "infeasible: %s\n", e.what());
        return 2;
    } catch (const hermes::IntegrityError& e) {
        std::fprintf(stderr, "integrity: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
