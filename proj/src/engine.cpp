#include "hermes/engine.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "hermes/errors.hpp"
#include "hermes/kernels.hpp"
#include "hermes/planner.hpp"

namespace hermes::engine {

namespace {

using Clock = std::chrono::steady_clock;
using store::LayerWeights;
using store::Model;
using store::Role;

class EventRecorder {
public:
    EventRecorder() : t0_(Clock::now()) {}

    double now_ms() const {
        return std::chrono::duration<double, std::milli>(Clock::now() - t0_).count();
    }

    void record(EventKind kind, int layer, int agent) {
        const double t = now_ms();
        std::lock_guard<std::mutex> lk(mu_);
        events_.push_back({t, kind, layer, agent});
    }

    std::vector<TimelineEvent> take() {
        std::lock_guard<std::mutex> lk(mu_);
        return std::move(events_);
    }

private:
    Clock::time_point t0_;
    mutable std::mutex mu_;
    std::vector<TimelineEvent> events_;
};

// Accounted-bytes ledger with blocking admission. A loader that would push
// the total over the budget parks here (stop) until destroys free room;
// parked admissions are granted lowest layer index first (resume).
class MemoryLedger {
public:
    MemoryLedger(uint64_t budget, EventRecorder& rec) : budget_(budget), rec_(rec) {}

    // Declares the streamed layers a pass is about to load, so admission can
    // hold back room for lower-indexed layers that have not loaded yet. Call
    // before the loaders start.
    void stage_streamed(std::map<int, uint64_t> pending) {
        std::lock_guard<std::mutex> lk(mu_);
        pending_ = std::move(pending);
    }

    void charge_resident(uint64_t bytes) {
        std::lock_guard<std::mutex> lk(mu_);
        if (budget_ != kUnbounded && bytes > budget_ - current_)
            throw Infeasible("resident layers alone exceed the memory budget");
        current_ += bytes;
        high_ = std::max(high_, current_);
    }

    // Returns false when the run was aborted while waiting.
    bool admit(int k, uint64_t bytes, int agent) {
        std::unique_lock<std::mutex> lk(mu_);
        if (charged_.count(k)) throw ProtocolError("layer " + std::to_string(k) + " admitted twice");
        if (!admissible(k, bytes)) {
            rec_.record(EventKind::Stop, k, agent);
            waiting_.insert(k);
            // The admission reserve makes a wedge unreachable, so the
            // generous timeout is a defensive net only; legitimate waits end
            // at the next destroy, milliseconds away.
            const bool woke = cv_.wait_for(lk, std::chrono::seconds(60), [&] {
                return aborted_ || (k == *waiting_.begin() && admissible(k, bytes));
            });
            waiting_.erase(k);
            if (!woke) {
                cv_.notify_all();
                throw Infeasible("admission deadlock: layer " + std::to_string(k) +
                                 " cannot fit and no earlier destroy remains");
            }
            if (aborted_) {
                cv_.notify_all();
                return false;
            }
            rec_.record(EventKind::Resume, k, agent);
        } else if (aborted_) {
            return false;
        }
        current_ += bytes;
        high_ = std::max(high_, current_);
        charged_[k] = bytes;
        pending_.erase(k);
        if (budget_ != kUnbounded && current_ > budget_)
            throw ProtocolError("ledger exceeded the budget");  // unreachable by construction
        cv_.notify_all();  // the lowest waiter (and the reserve) may have changed
        return true;
    }

    void release(int k) {
        std::lock_guard<std::mutex> lk(mu_);
        auto it = charged_.find(k);
        if (it == charged_.end())
            throw ProtocolError("destroy of layer " + std::to_string(k) + " that holds no memory");
        current_ -= it->second;
        charged_.erase(it);
        cv_.notify_all();
    }

    void abort() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            aborted_ = true;
        }
        cv_.notify_all();
    }

    uint64_t high_watermark() const {
        std::lock_guard<std::mutex> lk(mu_);
        return high_;
    }

private:
    // A loader may take room only if afterwards there is still space for the
    // largest not-yet-admitted layer below k. Compute consumes layers
    // strictly in index order and only computed layers free their bytes, so
    // room stolen from an earlier layer could never be given back: without
    // the reserve, loaders racing ahead of the next needed layer can fill
    // the whole budget and wedge the run (thread scheduling decides which
    // admission request arrives first). With uniform layer sizes the reserve
    // is one layer slot and never binds for in-order arrivals.
    bool admissible(int k, uint64_t bytes) const {
        if (budget_ == kUnbounded) return true;
        uint64_t reserve = 0;
        for (const auto& [i, sz] : pending_) {
            if (i >= k) break;
            reserve = std::max(reserve, sz);
        }
        return bytes + reserve <= budget_ - current_;
    }

    uint64_t budget_;
    EventRecorder& rec_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    uint64_t current_ = 0;
    uint64_t high_ = 0;
    std::map<int, uint64_t> charged_;
    std::map<int, uint64_t> pending_;  // streamed layers not yet admitted
    std::set<int> waiting_;
    bool aborted_ = false;
};

struct ActiveGuard {
    ActiveGuard() {
        if (engine_active_flag().exchange(true))
            throw ProtocolError("engine run already active in this process");
    }
    ~ActiveGuard() { engine_active_flag().store(false); }
};

// Streamed-layer sizes must be known before each load is admitted; a header
// read prices the layer without paying for the payload.
std::map<int, uint64_t> accounted_sizes(const Model& model) {
    std::map<int, uint64_t> sizes;
    for (const auto& rec : model.manifest.layers)
        sizes[rec.index] =
            store::accounted_bytes(store::read_layer_header(model.shard_path, rec, model.manifest.data_type));
    return sizes;
}

uint64_t activation_bytes(const store::LayerManifest& m) {
    return static_cast<uint64_t>(m.seq_len) * static_cast<uint64_t>(m.hidden_dim) * 4u;
}

struct PassStats {
    double stall_ms = 0.0;
    std::vector<float> output;
};

// Compute side of a pass over already-available weights, shared by every
// mode: embedding first, streamed layers strictly in index order (waiting on
// the provider), head last. provider(k) blocks until layer k is ready;
// on_computed(k, w) receives each streamed layer after its forward pass.
template <typename Provider, typename OnComputed>
PassStats compute_pass(const store::LayerManifest& manifest, const LayerWeights& embedding,
                       const LayerWeights* head, const std::vector<int>& input,
                       EventRecorder& rec, Provider&& provider, OnComputed&& on_computed) {
    const int n = manifest.n_enc_dec();
    PassStats stats;

    rec.record(EventKind::CompStart, 0, 0);
    kernels::Activation act = kernels::embed(embedding, input);
    rec.record(EventKind::CompEnd, 0, 0);

    double first_start = -1.0, last_end = 0.0, busy = 0.0;
    for (int k = 1; k <= n; ++k) {
        LayerWeights w = provider(k);
        const double t_start = rec.now_ms();
        rec.record(EventKind::CompStart, k, 0);
        kernels::forward_layer(w, act);
        rec.record(EventKind::CompEnd, k, 0);
        const double t_end = rec.now_ms();
        if (first_start < 0) first_start = t_start;
        last_end = t_end;
        busy += t_end - t_start;
        on_computed(k, std::move(w));
    }
    stats.stall_ms = first_start < 0 ? 0.0 : (last_end - first_start) - busy;

    if (head) {
        rec.record(EventKind::CompStart, head->record.index, 0);
        stats.output = kernels::head_forward(*head, act);
        rec.record(EventKind::CompEnd, head->record.index, 0);
    } else {
        stats.output = std::move(act.data);
    }
    return stats;
}

const store::LayerRecord* find_head(const store::LayerManifest& manifest) {
    const store::LayerRecord* head = nullptr;
    for (const auto& rec : manifest.layers) {
        if (rec.role == Role::Embedding || store::is_enc_dec(rec.role)) continue;
        if (head) throw InvalidModel("model has more than one terminal layer");
        head = &rec;
    }
    return head;
}

LayerWeights load_resident(const Model& model, int k, EventRecorder& rec, MemoryLedger& ledger,
                           const std::map<int, uint64_t>& sizes) {
    ledger.charge_resident(sizes.at(k));
    rec.record(EventKind::LoadStart, k, 0);
    LayerWeights w = store::read_layer(model.manifest, model.shard_path, k);
    rec.record(EventKind::LoadEnd, k, 0);
    return w;
}

// One streaming pass: m loaders, the calling thread as inference worker, and
// a daemon thread that destroys computed layers and releases their bytes.
PassStats streaming_pass(const Model& model, const std::vector<int>& input, int m,
                         MemoryLedger& ledger, EventRecorder& rec, bool destroy_weights,
                         const std::map<int, uint64_t>& sizes, const LayerWeights& embedding,
                         const LayerWeights* head, std::vector<LayerWeights>* retained) {
    const auto& manifest = model.manifest;
    const int n = manifest.n_enc_dec();
    const auto assignment = planner::assign_layers(n, m);

    std::map<int, uint64_t> streamed;
    for (const auto& lr : manifest.layers)
        if (store::is_enc_dec(lr.role)) streamed[lr.index] = sizes.at(lr.index);
    ledger.stage_streamed(std::move(streamed));

    std::mutex ready_mu;
    std::condition_variable ready_cv;
    std::map<int, LayerWeights> ready;

    std::mutex dq_mu;
    std::condition_variable dq_cv;
    std::deque<std::pair<int, LayerWeights>> destroy_q;

    std::atomic<bool> failed{false};
    std::mutex err_mu;
    std::exception_ptr first_error;

    auto fail = [&](std::exception_ptr e) {
        {
            std::lock_guard<std::mutex> lk(err_mu);
            if (!first_error) first_error = e;
        }
        failed.store(true);
        ledger.abort();
        ready_cv.notify_all();
        dq_cv.notify_all();
    };

    auto loader_body = [&](int agent, const std::vector<int>& layers) {
        try {
            for (int k : layers) {
                if (failed.load()) return;
                if (!ledger.admit(k, sizes.at(k), agent)) return;
                rec.record(EventKind::LoadStart, k, agent);
                LayerWeights w = store::read_layer(manifest, model.shard_path, k);
                if (w.accounted_bytes != sizes.at(k))
                    throw ProtocolError("layer size drifted between header and payload read");
                rec.record(EventKind::LoadEnd, k, agent);
                {
                    std::lock_guard<std::mutex> lk(ready_mu);
                    if (!ready.emplace(k, std::move(w)).second)
                        throw ProtocolError("layer " + std::to_string(k) + " signalled ready twice");
                }
                ready_cv.notify_all();
            }
        } catch (...) {
            fail(std::current_exception());
        }
    };

    auto daemon_body = [&] {
        try {
            for (int done = 0; done < n; ++done) {
                std::unique_lock<std::mutex> lk(dq_mu);
                dq_cv.wait(lk, [&] { return failed.load() || !destroy_q.empty(); });
                if (failed.load()) return;
                auto [k, w] = std::move(destroy_q.front());
                destroy_q.pop_front();
                lk.unlock();
                w.tensors.clear();  // the actual destruction, before the accounting release
                rec.record(EventKind::Destroy, k, 0);
                ledger.release(k);
            }
        } catch (...) {
            fail(std::current_exception());
        }
    };

    std::vector<std::thread> workers;
    for (size_t i = 0; i < assignment.size(); ++i)
        workers.emplace_back(loader_body, static_cast<int>(i) + 1, assignment[i]);
    std::thread daemon;
    if (destroy_weights) daemon = std::thread(daemon_body);

    auto join_all = [&] {
        for (auto& t : workers)
            if (t.joinable()) t.join();
        if (daemon.joinable()) daemon.join();
    };

    PassStats stats;
    try {
        auto provider = [&](int k) -> LayerWeights {
            std::unique_lock<std::mutex> lk(ready_mu);
            ready_cv.wait(lk, [&] { return failed.load() || ready.count(k); });
            if (failed.load()) throw ProtocolError("run aborted");
            LayerWeights w = std::move(ready.at(k));
            ready.erase(k);
            return w;
        };
        auto on_computed = [&](int k, LayerWeights w) {
            if (destroy_weights) {
                {
                    std::lock_guard<std::mutex> lk(dq_mu);
                    destroy_q.emplace_back(k, std::move(w));
                }
                dq_cv.notify_all();
            } else if (retained) {
                retained->push_back(std::move(w));
            }
        };
        stats = compute_pass(manifest, embedding, head, input, rec, provider, on_computed);
    } catch (...) {
        fail(std::current_exception());
        join_all();
        {
            std::lock_guard<std::mutex> lk(err_mu);
            // Prefer the root cause from a worker over the inference-side
            // "run aborted" symptom.
            if (first_error) std::rethrow_exception(first_error);
        }
        throw;
    }
    join_all();
    {
        std::lock_guard<std::mutex> lk(err_mu);
        if (first_error) std::rethrow_exception(first_error);
    }
    return stats;
}

uint64_t digest_floats(const std::vector<float>& v) {
    return fnv1a64(v.data(), v.size() * sizeof(float));
}

RunResult finish_run(PassStats stats, EventRecorder& rec, const MemoryLedger& ledger,
                     const char* mode, int m, uint64_t budget) {
    RunResult r;
    r.output = std::move(stats.output);
    r.metrics.mode = mode;
    r.metrics.m = m;
    r.metrics.mem_budget_bytes = budget;
    r.metrics.latency_ms = rec.now_ms();
    r.metrics.peak_mem_bytes = ledger.high_watermark();
    r.metrics.stall_ms = stats.stall_ms;
    r.metrics.output_digest = digest_floats(r.output);
    r.metrics.timeline = rec.take();
    return r;
}

// Shared feasibility gate: the tightest thing a streaming run ever holds is
// the resident set plus one streamed layer.
void check_streaming_feasible(const std::map<int, uint64_t>& sizes,
                              const store::LayerManifest& manifest, uint64_t budget) {
    if (budget == kUnbounded) return;
    uint64_t resident = activation_bytes(manifest);
    uint64_t max_layer = 0;
    for (const auto& rec : manifest.layers) {
        if (store::is_enc_dec(rec.role))
            max_layer = std::max(max_layer, sizes.at(rec.index));
        else
            resident += sizes.at(rec.index);
    }
    if (resident > budget || max_layer > budget - resident)
        throw Infeasible("budget cannot hold resident layers plus one streamed layer");
}

}  // namespace

const char* run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::Baseline: return "baseline";
        case RunMode::Pipeline: return "pipeline";
        case RunMode::PipeLoad: return "pipeload";
    }
    throw InvalidConfig("unknown run mode");
}

RunMode run_mode_from_name(const std::string& s) {
    if (s == "baseline") return RunMode::Baseline;
    if (s == "pipeline") return RunMode::Pipeline;
    if (s == "pipeload") return RunMode::PipeLoad;
    throw ParseError("unknown run mode '" + s + "'");
}

RunResult run_baseline(const Model& model, const std::vector<int>& input) {
    ActiveGuard guard;
    const auto& manifest = model.manifest;
    EventRecorder rec;
    MemoryLedger ledger(kUnbounded, rec);
    ledger.charge_resident(activation_bytes(manifest));

    std::map<int, LayerWeights> weights;
    for (const auto& lr : manifest.layers) {
        ledger.charge_resident(store::accounted_bytes(
            store::read_layer_header(model.shard_path, lr, manifest.data_type)));
        rec.record(EventKind::LoadStart, lr.index, 1);
        weights[lr.index] = store::read_layer(manifest, model.shard_path, lr.index);
        rec.record(EventKind::LoadEnd, lr.index, 1);
    }

    const store::LayerRecord* head_rec = find_head(manifest);
    const LayerWeights* head = head_rec ? &weights.at(head_rec->index) : nullptr;
    PassStats stats = compute_pass(
        manifest, weights.at(0), head, input, rec, [&](int k) { return weights.at(k); },
        [](int, LayerWeights) {});
    return finish_run(std::move(stats), rec, ledger, "baseline", 1, kUnbounded);
}

RunResult run_standard_pipeline(const Model& model, const std::vector<int>& input) {
    ActiveGuard guard;
    const auto sizes = accounted_sizes(model);
    EventRecorder rec;
    MemoryLedger ledger(kUnbounded, rec);
    ledger.charge_resident(activation_bytes(model.manifest));

    const LayerWeights embedding = load_resident(model, 0, rec, ledger, sizes);
    const store::LayerRecord* head_rec = find_head(model.manifest);
    LayerWeights head;
    if (head_rec) head = load_resident(model, head_rec->index, rec, ledger, sizes);

    std::vector<LayerWeights> retained;
    PassStats stats = streaming_pass(model, input, 1, ledger, rec, /*destroy=*/false, sizes,
                                     embedding, head_rec ? &head : nullptr, &retained);
    return finish_run(std::move(stats), rec, ledger, "pipeline", 1, kUnbounded);
}

RunResult run_pipeload(const Model& model, const std::vector<int>& input, int m,
                       uint64_t mem_budget_bytes, bool destruction_off) {
    if (m < 1) throw InvalidConfig("agent count must be >= 1");
    if (destruction_off && mem_budget_bytes != kUnbounded)
        throw InvalidConfig("destruction-off retains every layer and needs an unbounded budget");
    ActiveGuard guard;
    const auto sizes = accounted_sizes(model);
    check_streaming_feasible(sizes, model.manifest, mem_budget_bytes);

    EventRecorder rec;
    MemoryLedger ledger(mem_budget_bytes, rec);
    ledger.charge_resident(activation_bytes(model.manifest));

    const LayerWeights embedding = load_resident(model, 0, rec, ledger, sizes);
    const store::LayerRecord* head_rec = find_head(model.manifest);
    LayerWeights head;
    if (head_rec) head = load_resident(model, head_rec->index, rec, ledger, sizes);

    std::vector<LayerWeights> retained;
    PassStats stats =
        streaming_pass(model, input, m, ledger, rec, /*destroy=*/!destruction_off, sizes,
                       embedding, head_rec ? &head : nullptr, destruction_off ? &retained : nullptr);
    return finish_run(std::move(stats), rec, ledger, "pipeload", m, mem_budget_bytes);
}

DecodeResult generate_tokens(const Model& model, const std::vector<int>& prompt_ids, int out_len,
                             RunMode mode, int m, uint64_t mem_budget_bytes) {
    const auto& manifest = model.manifest;
    if (out_len < 1) throw InvalidConfig("output length must be >= 1");
    if (prompt_ids.empty()) throw InvalidInput("empty prompt");
    for (const auto& lr : manifest.layers)
        if (lr.role == Role::Encoder)
            throw InvalidModel("token generation needs a decoder stack, found encoder layers");
    const store::LayerRecord* head_rec = find_head(manifest);
    if (!head_rec || head_rec->role != Role::LmHead)
        throw InvalidModel("token generation needs an lm_head terminal layer");
    if (static_cast<int>(prompt_ids.size()) + out_len > manifest.seq_len)
        throw InvalidInput("prompt plus output exceeds the model's sequence length");

    ActiveGuard guard;
    const auto sizes = accounted_sizes(model);
    if (mode != RunMode::Baseline) check_streaming_feasible(sizes, manifest, mem_budget_bytes);

    EventRecorder rec;
    std::vector<int> ids = prompt_ids;
    double stall_total = 0.0;
    uint64_t peak = 0;

    if (mode == RunMode::Baseline) {
        MemoryLedger ledger(kUnbounded, rec);
        ledger.charge_resident(activation_bytes(manifest));
        std::map<int, LayerWeights> weights;
        for (const auto& lr : manifest.layers) {
            ledger.charge_resident(sizes.at(lr.index));
            rec.record(EventKind::LoadStart, lr.index, 1);
            weights[lr.index] = store::read_layer(manifest, model.shard_path, lr.index);
            rec.record(EventKind::LoadEnd, lr.index, 1);
        }
        for (int step = 0; step < out_len; ++step) {
            PassStats stats = compute_pass(
                manifest, weights.at(0), &weights.at(head_rec->index), ids, rec,
                [&](int k) { return weights.at(k); }, [](int, LayerWeights) {});
            stall_total += stats.stall_ms;
            ids.push_back(kernels::argmax_lowest(stats.output));
        }
        peak = ledger.high_watermark();
    } else {
        const bool destroy = mode == RunMode::PipeLoad;
        const int agents = mode == RunMode::Pipeline ? 1 : m;
        const uint64_t budget = mode == RunMode::Pipeline ? kUnbounded : mem_budget_bytes;
        for (int step = 0; step < out_len; ++step) {
            MemoryLedger ledger(budget, rec);
            ledger.charge_resident(activation_bytes(manifest));
            const LayerWeights embedding = load_resident(model, 0, rec, ledger, sizes);
            const LayerWeights head = load_resident(model, head_rec->index, rec, ledger, sizes);
            std::vector<LayerWeights> retained;
            PassStats stats = streaming_pass(model, ids, agents, ledger, rec, destroy, sizes,
                                             embedding, &head, destroy ? nullptr : &retained);
            stall_total += stats.stall_ms;
            peak = std::max(peak, ledger.high_watermark());
            ids.push_back(kernels::argmax_lowest(stats.output));
        }
    }

    DecodeResult d;
    d.tokens = std::move(ids);
    d.metrics.mode = run_mode_name(mode);
    d.metrics.m = mode == RunMode::PipeLoad ? m : 1;
    d.metrics.mem_budget_bytes = mode == RunMode::Baseline ? kUnbounded : mem_budget_bytes;
    d.metrics.latency_ms = rec.now_ms();
    d.metrics.peak_mem_bytes = peak;
    d.metrics.stall_ms = stall_total;
    d.metrics.output_digest =
        fnv1a64(d.tokens.data(), d.tokens.size() * sizeof(int));
    d.metrics.timeline = rec.take();
    return d;
}

}  // namespace hermes::engine
