// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#include "tpkv/sched.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>
#include <queue>
#include <set>
#include <string>

namespace tpkv {

void MemoryModel::validate() const {
    if (latency_cycles < 0)
        throw ConfigError("latency_cycles must be >= 0");
    if (!(bytes_per_cycle > 0.0))
        throw ConfigError("bytes_per_cycle must be positive");
    if (channels < 1)
        throw ConfigError("channels must be >= 1");
    if (max_inflight < 1)
        throw ConfigError("max_inflight must be >= 1");
}

void SimConfig::validate() const {
    if (lanes < 1) throw ConfigError("lanes must be >= 1");
    if (scoreboard_capacity < 1) throw ConfigError("scoreboard_capacity must be >= 1");
    if (pe_width < 1) throw ConfigError("pe_width must be >= 1");
    if (jitter_cycles < 0) throw ConfigError("jitter_cycles must be >= 0");
}

const char* event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::request_issued: return "request_issued";
        case EventKind::chunk_arrived: return "chunk_arrived";
        case EventKind::chunk_processed: return "chunk_processed";
        case EventKind::token_pruned: return "token_pruned";
        case EventKind::token_survived: return "token_survived";
    }
    return "unknown";
}

void dump_events(const std::vector<Event>& events, std::ostream& os) {
    os << "cycle,event,token,chunk\n";
    for (const Event& e : events)
        os << e.cycle << ',' << event_kind_name(e.kind) << ',' << e.token << ',' << e.chunk
           << '\n';
}

std::int64_t chunk_bytes(int d_h, const ChunkConfig& cfg) {
    return (static_cast<std::int64_t>(d_h) * cfg.chunk_bits + 7) / 8;
}

std::int64_t value_bytes(int d_h, int precision_bits) {
    return (static_cast<std::int64_t>(d_h) * precision_bits + 7) / 8;
}

namespace {

std::int64_t transfer_cycles(std::int64_t bytes, const MemoryModel& mem) {
    return std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::ceil(static_cast<double>(bytes) / mem.bytes_per_cycle)));
}

// Random-access splitmix64 keyed by request identity: the same (token, chunk)
// draws the same delay in every scheduler, so cycle comparisons across
// schedulers see one memory, not two different random ones. Must not depend
// on standard library distributions.
struct Jitter {
    std::uint64_t seed;
    std::int64_t span;
    std::int64_t at(int token, int chunk) const {
        if (span == 0) return 0;
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ull *
                                     (static_cast<std::uint64_t>(token) * 64 + chunk + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        z = z ^ (z >> 31);
        return static_cast<std::int64_t>(z % static_cast<std::uint64_t>(span + 1));
    }
};

double shared_key_scale(const std::vector<ChunkedKey>& keys) {
    const double s = keys.front().scale;
    for (const ChunkedKey& k : keys)
        if (k.scale != s)
            throw InvalidInput("keys must share one quantization scale");
    return s;
}

void validate_workload(const QuantizedVector& q, const std::vector<ChunkedKey>& keys,
                       const std::vector<QuantizedVector>& values, const PruneConfig& cfg) {
    if (keys.empty())
        throw InvalidInput("need at least one key");
    if (values.size() != keys.size())
        throw InvalidInput("key/value count mismatch");
    for (const ChunkedKey& k : keys)
        if (k.levels() != cfg.chunking.chunks_per_vec() || k.dim() != q.dim())
            throw InvalidInput("key has wrong shape");
    for (const QuantizedVector& v : values)
        if (v.dim() != q.dim())
            throw InvalidInput("value has wrong shape");
}

struct Arrival {
    std::int64_t cycle;
    int channel;
    std::int64_t seq;
    int token;
    int chunk;
    bool operator>(const Arrival& o) const {
        if (cycle != o.cycle) return cycle > o.cycle;
        if (channel != o.channel) return channel > o.channel;
        return seq > o.seq;
    }
};

// PE pick order: deepest chunk first, then arrival, then channel, then seq.
// Draining deep chunks first retires scoreboard entries soonest and makes the
// zero-latency schedule collapse to the in-order one.
struct ReadyLess {
    bool operator()(const Arrival& a, const Arrival& b) const {
        if (a.chunk != b.chunk) return a.chunk > b.chunk;
        if (a.cycle != b.cycle) return a.cycle < b.cycle;
        if (a.channel != b.channel) return a.channel < b.channel;
        return a.seq < b.seq;
    }
};

struct PendingIssue {
    std::int64_t cycle;
    int token;
    int chunk;
};

void finish_result(SimResult& r, const PruneEngine& eng,
                   const std::vector<Survivor>& survivors,
                   const std::vector<QuantizedVector>& values, const PruneConfig& cfg,
                   const MemoryModel& mem, const SimConfig& sim, int n) {
    // Cycle-skipping can log an arrival after same-iteration events with later
    // cycles; the trace contract is cycle order with stable ties.
    std::stable_sort(r.events.begin(), r.events.end(),
                     [](const Event& a, const Event& b) { return a.cycle < b.cycle; });
    r.step0 = collect_step0(eng);
    r.step0.survivors = survivors;  // decision order
    // n >= 1/thr can legitimately prune everything; step 1 is then vacuous.
    if (!survivors.empty())
        r.step1 = run_step1(survivors, values, cfg, eng.denominator());
    const Step1Traffic t1 =
        step1_traffic(static_cast<std::int64_t>(survivors.size()), n, values.front().dim(),
                      cfg.chunking.total_bits, mem, sim.pe_width);
    r.stats.bytes_V = t1.bytes_V;
    r.step1_cycles = t1.cycles;
    r.stats.chunks_fetched = r.step0.total_chunks;
}

}  // namespace

SimResult simulate_ooo(const QuantizedVector& q, const std::vector<ChunkedKey>& keys,
                       const std::vector<QuantizedVector>& values, const PruneConfig& cfg,
                       const MemoryModel& mem, const SimConfig& sim) {
    mem.validate();
    sim.validate();
    cfg.validate();
    validate_workload(q, keys, values, cfg);

    const int n = static_cast<int>(keys.size());
    const int d = q.dim();
    const std::int64_t kbytes = chunk_bytes(d, cfg.chunking);
    const std::int64_t t_tr = transfer_cycles(kbytes, mem);
    const std::int64_t pe_cyc = (d + sim.pe_width - 1) / sim.pe_width;
    const MarginTable margins = build_margins(q, cfg.chunking, shared_key_scale(keys));

    PruneEngine eng(q, margins, cfg, n);
    SimResult r;
    std::vector<Survivor> survivors;

    const std::vector<int> order = processing_order(n, cfg.order_policy);
    int next_first = 0;

    std::priority_queue<Arrival, std::vector<Arrival>, std::greater<Arrival>> arrivals;
    std::vector<std::set<Arrival, ReadyLess>> ready(sim.lanes);
    std::vector<std::int64_t> pe_free(sim.lanes, 0);
    std::vector<int> committed(sim.lanes, 0);  // entries + undecided reservations
    std::vector<int> entries(sim.lanes, 0);    // tokens parked awaiting a deeper chunk
    std::vector<std::int64_t> chan_free(mem.channels, 0);
    std::deque<PendingIssue> issue_q;  // decision-driven, non-decreasing cycles
    Jitter jit{sim.jitter_seed, sim.jitter_cycles};

    int outstanding = 0;
    std::int64_t seq = 0;
    std::int64_t last_completion = 0;
    double broadcast_ln = -std::numeric_limits<double>::infinity();
    const bool stale_den = sim.lanes > 1;

    auto note = [&](std::int64_t cycle, EventKind k, int token, int chunk) {
        if (sim.record_events) r.events.push_back({cycle, k, token, chunk});
    };
    auto do_issue = [&](std::int64_t cycle, int token, int chunk) {
        const int c = token % mem.channels;
        const std::int64_t start = std::max(cycle, chan_free[c]);
        chan_free[c] = start + t_tr;
        const std::int64_t arr = start + (t_tr - 1) + mem.latency_cycles + jit.at(token, chunk);
        arrivals.push({arr, c, seq++, token, chunk});
        ++outstanding;
        ++r.stats.requests_issued;
        note(cycle, EventKind::request_issued, token, chunk);
    };

    std::int64_t cycle = 0;
    const std::int64_t inf = std::numeric_limits<std::int64_t>::max();
    while (true) {
        // 1. requests scheduled by earlier decisions
        while (!issue_q.empty() && issue_q.front().cycle <= cycle) {
            const PendingIssue p = issue_q.front();
            issue_q.pop_front();
            do_issue(cycle, p.token, p.chunk);
        }
        // 2. stream the next first-chunk request (one per cycle, in order).
        // Holds while the target channel is transferring so decision-driven
        // requests are never queued behind speculative ones.
        if (next_first < n) {
            const int tok = order[next_first];
            const int lane = tok % sim.lanes;
            if (outstanding < mem.max_inflight && committed[lane] < sim.scoreboard_capacity &&
                chan_free[tok % mem.channels] <= cycle) {
                ++committed[lane];
                ++next_first;
                do_issue(cycle, tok, 0);
            }
        }
        // 3. deliveries
        while (!arrivals.empty() && arrivals.top().cycle <= cycle) {
            const Arrival a = arrivals.top();
            arrivals.pop();
            --outstanding;
            r.stats.bytes_K += kbytes;
            note(a.cycle, EventKind::chunk_arrived, a.token, a.chunk);
            ready[a.token % sim.lanes].insert(a);
        }
        // 4. one chunk per lane per free PE
        for (int lane = 0; lane < sim.lanes; ++lane) {
            if (pe_free[lane] > cycle || ready[lane].empty()) continue;
            const Arrival a = *ready[lane].begin();
            ready[lane].erase(ready[lane].begin());
            const Decision dec = eng.process_chunk(
                a.token, a.chunk, keys[a.token].chunks[a.chunk],
                stale_den ? std::optional<double>(broadcast_ln) : std::nullopt);
            r.stats.pe_busy_cycles += pe_cyc;
            pe_free[lane] = cycle + pe_cyc;
            last_completion = std::max(last_completion, cycle + pe_cyc);
            r.processed_order.emplace_back(a.token, a.chunk);
            note(cycle, EventKind::chunk_processed, a.token, a.chunk);
            switch (dec.kind) {
                case DecisionKind::request_next:
                    if (a.chunk == 0) {
                        ++entries[lane];
                        r.stats.peak_scoreboard = std::max(r.stats.peak_scoreboard, entries[lane]);
                    }
                    issue_q.push_back({cycle + pe_cyc, a.token, dec.next_chunk});
                    break;
                case DecisionKind::prune:
                    if (a.chunk > 0) --entries[lane];
                    --committed[lane];
                    note(cycle, EventKind::token_pruned, a.token, a.chunk);
                    break;
                case DecisionKind::finalize_survivor: {
                    if (a.chunk > 0) --entries[lane];
                    --committed[lane];
                    const TokenState& st = eng.state(a.token);
                    survivors.push_back({a.token, st.partial_score,
                                         st.partial_score * margins.scale_factor});
                    note(cycle, EventKind::token_survived, a.token, a.chunk);
                    break;
                }
            }
        }
        // 5. denominator broadcast seen by lanes next cycle
        broadcast_ln = eng.denominator().ln_value();
        // 6. done?
        if (next_first == n && outstanding == 0 && issue_q.empty()) {
            bool drained = true;
            for (const auto& rd : ready)
                if (!rd.empty()) drained = false;
            if (drained) break;
        }
        // 7. advance, skipping dead cycles when nothing can happen sooner
        std::int64_t next = inf;
        if (!issue_q.empty()) next = std::min(next, issue_q.front().cycle);
        if (!arrivals.empty()) next = std::min(next, arrivals.top().cycle);
        if (next_first < n) next = std::min(next, cycle + 1);
        for (int lane = 0; lane < sim.lanes; ++lane)
            if (!ready[lane].empty()) next = std::min(next, pe_free[lane]);
        if (next == inf)
            throw ImpossibleState("scheduler wedged with work outstanding");
        cycle = std::max(cycle + 1, next);
        if (cycle > (std::int64_t{1} << 40))
            throw ImpossibleState("scheduler failed to terminate");
    }

    r.stats.total_cycles = last_completion;
    r.stats.stall_cycles = last_completion * sim.lanes - r.stats.pe_busy_cycles;
    finish_result(r, eng, survivors, values, cfg, mem, sim, n);
    return r;
}

SimResult simulate_blocking(const QuantizedVector& q, const std::vector<ChunkedKey>& keys,
                            const std::vector<QuantizedVector>& values, const PruneConfig& cfg,
                            const MemoryModel& mem, const SimConfig& sim) {
    mem.validate();
    sim.validate();
    cfg.validate();
    validate_workload(q, keys, values, cfg);

    const int n = static_cast<int>(keys.size());
    const int d = q.dim();
    const std::int64_t kbytes = chunk_bytes(d, cfg.chunking);
    const std::int64_t t_tr = transfer_cycles(kbytes, mem);
    const std::int64_t pe_cyc = (d + sim.pe_width - 1) / sim.pe_width;
    const MarginTable margins = build_margins(q, cfg.chunking, shared_key_scale(keys));

    PruneEngine eng(q, margins, cfg, n);
    SimResult r;
    std::vector<Survivor> survivors;
    std::vector<std::int64_t> chan_free(mem.channels, 0);
    Jitter jit{sim.jitter_seed, sim.jitter_cycles};

    auto note = [&](std::int64_t cycle, EventKind k, int token, int chunk) {
        if (sim.record_events) r.events.push_back({cycle, k, token, chunk});
    };

    std::int64_t cycle = 0;
    for (int tok : processing_order(n, cfg.order_policy)) {
        for (int b = 0; b < cfg.chunking.chunks_per_vec(); ++b) {
            const int c = tok % mem.channels;
            const std::int64_t start = std::max(cycle, chan_free[c]);
            chan_free[c] = start + t_tr;
            const std::int64_t arr = start + (t_tr - 1) + mem.latency_cycles + jit.at(tok, b);
            ++r.stats.requests_issued;
            note(cycle, EventKind::request_issued, tok, b);
            r.stats.bytes_K += kbytes;
            note(arr, EventKind::chunk_arrived, tok, b);

            const Decision dec = eng.process_chunk(tok, b, keys[tok].chunks[b]);
            r.stats.pe_busy_cycles += pe_cyc;
            r.processed_order.emplace_back(tok, b);
            note(arr, EventKind::chunk_processed, tok, b);
            cycle = arr + pe_cyc;

            if (dec.kind == DecisionKind::prune) {
                note(arr, EventKind::token_pruned, tok, b);
                break;
            }
            if (dec.kind == DecisionKind::finalize_survivor) {
                const TokenState& st = eng.state(tok);
                survivors.push_back({tok, st.partial_score,
                                     st.partial_score * margins.scale_factor});
                note(arr, EventKind::token_survived, tok, b);
            }
        }
    }

    r.stats.total_cycles = cycle;
    r.stats.stall_cycles = cycle - r.stats.pe_busy_cycles;
    r.stats.peak_scoreboard = (cfg.chunking.chunks_per_vec() > 1) ? 1 : 0;
    finish_result(r, eng, survivors, values, cfg, mem, sim, n);
    return r;
}

Step1Traffic step1_traffic(std::int64_t n_survivors, std::int64_t n_tokens, int d_h,
                           int precision_bits, const MemoryModel& mem, int pe_width) {
    mem.validate();
    Step1Traffic t;
    if (n_survivors == 0) {
        t.v_access_reduction = std::numeric_limits<double>::infinity();
        return t;
    }
    const std::int64_t vbytes = value_bytes(d_h, precision_bits);
    const std::int64_t t_tr = transfer_cycles(vbytes, mem);
    const std::int64_t pe_cyc = (d_h + pe_width - 1) / pe_width;
    std::vector<std::int64_t> chan_free(mem.channels, 0);
    std::int64_t pe_free = 0;
    for (std::int64_t i = 0; i < n_survivors; ++i) {
        const int c = static_cast<int>(i % mem.channels);
        const std::int64_t start = std::max(i, chan_free[c]);  // one request per cycle
        chan_free[c] = start + t_tr;
        const std::int64_t arr = start + (t_tr - 1) + mem.latency_cycles;
        pe_free = std::max(arr, pe_free) + pe_cyc;
    }
    t.bytes_V = n_survivors * vbytes;
    t.cycles = pe_free;
    t.v_access_reduction = static_cast<double>(n_tokens) / static_cast<double>(n_survivors);
    return t;
}

std::int64_t baseline_cycles(std::int64_t bytes_total, std::int64_t n_tokens, int d_h,
                             const MemoryModel& mem, int pe_width) {
    mem.validate();
    const double agg_bpc = mem.bytes_per_cycle * mem.channels;
    const std::int64_t mem_cycles =
        static_cast<std::int64_t>(std::ceil(static_cast<double>(bytes_total) / agg_bpc));
    const std::int64_t pe_cyc = (d_h + pe_width - 1) / pe_width;
    const std::int64_t compute_cycles = 2 * n_tokens * pe_cyc;  // score + weight passes
    return mem.latency_cycles + std::max(mem_cycles, compute_cycles);
}

}  // namespace tpkv
