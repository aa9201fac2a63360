#include "hermes/timeline.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "hermes/errors.hpp"

namespace hermes {

const char* event_name(EventKind k) {
    switch (k) {
        case EventKind::LoadStart: return "load_start";
        case EventKind::LoadEnd: return "load_end";
        case EventKind::CompStart: return "comp_start";
        case EventKind::CompEnd: return "comp_end";
        case EventKind::Destroy: return "destroy";
        case EventKind::Stop: return "stop";
        case EventKind::Resume: return "resume";
    }
    throw ProtocolError("unknown event kind");
}

EventKind event_from_name(const std::string& s) {
    for (int i = 0; i <= static_cast<int>(EventKind::Resume); ++i)
        if (s == event_name(static_cast<EventKind>(i))) return static_cast<EventKind>(i);
    throw ParseError("unknown timeline event '" + s + "'");
}

void write_timeline_csv(const std::vector<TimelineEvent>& events, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write timeline " + path.string());
    out << "t_ms,event,layer,agent\n";
    char buf[64];
    for (const auto& e : events) {
        std::snprintf(buf, sizeof(buf), "%.6f", e.t_ms);
        out << buf << ',' << event_name(e.kind) << ',' << e.layer << ',' << e.agent << '\n';
    }
    if (!out) throw IoError("short write of timeline " + path.string());
}

std::vector<TimelineEvent> read_timeline_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read timeline " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "t_ms,event,layer,agent")
        throw ParseError("bad timeline header in " + path.string());
    std::vector<TimelineEvent> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string t, ev, layer, agent;
        if (!std::getline(ls, t, ',') || !std::getline(ls, ev, ',') ||
            !std::getline(ls, layer, ',') || !std::getline(ls, agent))
            throw ParseError("bad timeline row '" + line + "'");
        TimelineEvent e;
        try {
            e.t_ms = std::stod(t);
            e.layer = std::stoi(layer);
            e.agent = std::stoi(agent);
        } catch (const std::exception&) {
            throw ParseError("bad timeline row '" + line + "'");
        }
        e.kind = event_from_name(ev);
        out.push_back(e);
    }
    return out;
}

namespace {

[[noreturn]] void violation(const std::string& what) { throw ProtocolError("timeline: " + what); }

struct LayerTimes {
    int count[5] = {0, 0, 0, 0, 0};  // indexed by EventKind value, LoadStart..Destroy
    double t[5] = {0, 0, 0, 0, 0};
};

void check_pass(const std::vector<TimelineEvent>& events, size_t begin, size_t end,
                const TimelineRules& rules) {
    std::map<int, LayerTimes> layers;
    for (size_t i = begin; i < end; ++i) {
        const auto& e = events[i];
        if (e.kind == EventKind::Stop || e.kind == EventKind::Resume) continue;
        if (e.layer < 1 || e.layer > rules.n_layers) continue;  // embedding/head are informational
        auto& lt = layers[e.layer];
        const int kind = static_cast<int>(e.kind);
        ++lt.count[kind];
        lt.t[kind] = e.t_ms;
    }
    for (int k = 1; k <= rules.n_layers; ++k) {
        auto it = layers.find(k);
        if (it == layers.end()) violation("layer " + std::to_string(k) + " has no events");
        const auto& lt = it->second;
        const int expected_destroys = rules.expect_destroy ? 1 : 0;
        for (int kind = 0; kind <= 4; ++kind) {
            const int want = kind == static_cast<int>(EventKind::Destroy) ? expected_destroys : 1;
            if (lt.count[kind] != want)
                violation("layer " + std::to_string(k) + ": " +
                          event_name(static_cast<EventKind>(kind)) + " seen " +
                          std::to_string(lt.count[kind]) + " times, expected " + std::to_string(want));
        }
        auto at = [&](EventKind kk) { return lt.t[static_cast<int>(kk)]; };
        if (at(EventKind::LoadStart) > at(EventKind::LoadEnd))
            violation("layer " + std::to_string(k) + ": load_start after load_end");
        if (at(EventKind::LoadEnd) > at(EventKind::CompStart))
            violation("layer " + std::to_string(k) + ": comp_start before load_end");
        if (at(EventKind::CompStart) > at(EventKind::CompEnd))
            violation("layer " + std::to_string(k) + ": comp_start after comp_end");
        if (rules.expect_destroy && at(EventKind::Destroy) < at(EventKind::CompEnd))
            violation("layer " + std::to_string(k) + ": destroyed before comp_end");
        if (k > 1) {
            const auto& prev = layers.at(k - 1);
            if (prev.t[static_cast<int>(EventKind::CompEnd)] > at(EventKind::CompStart))
                violation("layer " + std::to_string(k) + " computed before layer " +
                          std::to_string(k - 1) + " finished");
        }
    }
    if (rules.loads_precede_all_compute) {
        double last_load_end = 0.0, first_comp_start = 0.0;
        bool any_comp = false;
        for (size_t i = begin; i < end; ++i) {
            const auto& e = events[i];
            if (e.layer < 1 || e.layer > rules.n_layers) continue;
            if (e.kind == EventKind::LoadEnd && e.t_ms > last_load_end) last_load_end = e.t_ms;
            if (e.kind == EventKind::CompStart && (!any_comp || e.t_ms < first_comp_start)) {
                first_comp_start = e.t_ms;
                any_comp = true;
            }
        }
        if (any_comp && last_load_end > first_comp_start)
            violation("a load finished after compute began in load-then-compute mode");
    }
}

}  // namespace

void validate_timeline(const std::vector<TimelineEvent>& events, const TimelineRules& rules) {
    if (rules.n_layers <= 0) violation("rules require a positive layer count");
    if (rules.passes <= 0) violation("rules require a positive pass count");

    // Stop/resume alternation is global per agent across the whole run.
    std::map<int, EventKind> last_flow;
    for (const auto& e : events) {
        if (e.kind != EventKind::Stop && e.kind != EventKind::Resume) continue;
        auto it = last_flow.find(e.agent);
        if (e.kind == EventKind::Stop) {
            if (it != last_flow.end() && it->second == EventKind::Stop)
                violation("agent " + std::to_string(e.agent) + " stopped twice without resume");
        } else {
            if (it == last_flow.end() || it->second != EventKind::Stop)
                violation("agent " + std::to_string(e.agent) + " resumed without a stop");
        }
        last_flow[e.agent] = e.kind;
    }
    for (auto& [agent, kind] : last_flow)
        if (kind == EventKind::Stop)
            violation("agent " + std::to_string(agent) + " never resumed after stop");

    // Split passes at the comp_end of layer N: each pass computes N last,
    // and its trailing destroys (the daemon may lag) plus any head events
    // belong to the finishing pass. The next pass begins at the first
    // load_start/stop/resume touching a streamed layer.
    std::vector<size_t> boundaries;
    boundaries.push_back(0);
    for (size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        if (e.kind == EventKind::CompEnd && e.layer == rules.n_layers) {
            size_t j = i + 1;
            while (j < events.size()) {
                const auto& f = events[j];
                const bool streamed = f.layer >= 1 && f.layer <= rules.n_layers;
                const bool opens_pass = f.kind == EventKind::LoadStart ||
                                        f.kind == EventKind::Stop || f.kind == EventKind::Resume;
                if (streamed && opens_pass) break;
                ++j;
            }
            boundaries.push_back(j);
            i = j - 1;
        }
    }
    if (boundaries.size() != static_cast<size_t>(rules.passes) + 1)
        violation("expected " + std::to_string(rules.passes) + " passes, found " +
                  std::to_string(boundaries.size() - 1));
    for (int p = 0; p < rules.passes; ++p)
        check_pass(events, boundaries[p], boundaries[p + 1], rules);
}

}  // namespace hermes
