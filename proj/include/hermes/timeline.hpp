#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace hermes {

// Event vocabulary shared by the simulator and the engine, so the same
// validator and CSV schema cover both. Enum values double as the tie-break
// rank when several events carry the same timestamp.
enum class EventKind : int {
    LoadStart = 0,
    LoadEnd = 1,
    CompStart = 2,
    CompEnd = 3,
    Destroy = 4,
    Stop = 5,
    Resume = 6,
};

const char* event_name(EventKind k);
EventKind event_from_name(const std::string& s);

struct TimelineEvent {
    double t_ms = 0.0;
    EventKind kind = EventKind::LoadStart;
    int layer = 0;  // 0 = embedding, 1..N = encoder/decoder, N+1 = head
    int agent = 0;  // loaders are 1..m; inference and daemon report as 0
};

// CSV columns: t_ms,event,layer,agent.
void write_timeline_csv(const std::vector<TimelineEvent>& events, const std::filesystem::path& path);
std::vector<TimelineEvent> read_timeline_csv(const std::filesystem::path& path);

// Structural expectations differ by run mode; the lifecycle and ordering
// rules for the streamed layers 1..N are common.
struct TimelineRules {
    int n_layers = 0;             // N: streamed encoder/decoder layers
    bool expect_destroy = true;   // every streamed layer destroyed once, after its comp_end
    bool loads_precede_all_compute = false;  // load-everything-then-compute shape
    int passes = 1;               // decode runs repeat the whole lifecycle per token
};

// Throws ProtocolError with a description of the first violated rule.
// Checks, per pass and per layer k in 1..N: exactly one load_start, load_end,
// comp_start, comp_end (and destroy when expected); load_start <= load_end <=
// comp_start <= comp_end <= destroy; comp_start(k) >= comp_end(k-1). Stop and
// resume must strictly alternate per agent, starting with stop.
void validate_timeline(const std::vector<TimelineEvent>& events, const TimelineRules& rules);

}  // namespace hermes
