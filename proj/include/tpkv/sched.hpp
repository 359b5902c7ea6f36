// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "tpkv/engine.hpp"

namespace tpkv {

// Fixed-latency, bandwidth-capped memory: one FIFO pipe per channel. A
// request issued at cycle T on channel c starts transferring at
// max(T, channel_free), occupies the channel for ceil(bytes/bytes_per_cycle)
// cycles, and its data is usable latency_cycles after the transfer starts
// draining. Tokens map to channels round-robin (token mod channels).
struct MemoryModel {
    std::int64_t latency_cycles = 200;
    double bytes_per_cycle = 64.0;  // per channel, in core cycles
    int channels = 8;
    int max_inflight = 64;          // gates first-chunk issue only

    void validate() const;
};

struct SimConfig {
    int lanes = 1;                // independent token partitions
    int scoreboard_capacity = 32; // per lane: tokens holding partial state
    int pe_width = 64;            // elements one lane folds per cycle
    std::int64_t jitter_cycles = 0;  // uniform extra arrival delay in [0, jitter]
    std::uint64_t jitter_seed = 0;
    bool record_events = true;

    void validate() const;
};

enum class EventKind { request_issued, chunk_arrived, chunk_processed, token_pruned, token_survived };

struct Event {
    std::int64_t cycle;
    EventKind kind;
    int token;
    int chunk;
};

const char* event_kind_name(EventKind k);
void dump_events(const std::vector<Event>& events, std::ostream& os);

struct CycleStats {
    std::int64_t total_cycles = 0;     // first-stage span (scoring walk)
    std::int64_t pe_busy_cycles = 0;
    std::int64_t stall_cycles = 0;     // total - busy, summed over lanes
    std::int64_t bytes_K = 0;
    std::int64_t bytes_V = 0;
    std::int64_t chunks_fetched = 0;
    std::int64_t requests_issued = 0;
    int peak_scoreboard = 0;           // worst per-lane occupancy observed
};

struct SimResult {
    Step0Result step0;
    Step1Result step1;
    CycleStats stats;
    std::int64_t step1_cycles = 0;
    std::vector<Event> events;
    // (token, chunk) in the order the PE actually consumed them; replaying
    // this sequence through a fresh engine reproduces the decisions exactly
    // (single-lane configs).
    std::vector<std::pair<int, int>> processed_order;
};

// Out-of-order walk: first chunks stream in policy order while each arrived
// chunk is scored immediately; retained tokens request their next chunk and
// park their partial state in the scoreboard. The PE drains the deepest
// available chunk first, so a zero-latency memory degenerates to exactly the
// in-order schedule.
SimResult simulate_ooo(const QuantizedVector& q, const std::vector<ChunkedKey>& keys,
                       const std::vector<QuantizedVector>& values, const PruneConfig& cfg,
                       const MemoryModel& mem, const SimConfig& sim = {});

// In-order reference: one outstanding request, the PE idles through every
// round trip. Decision sequence is identical to the functional engine's.
SimResult simulate_blocking(const QuantizedVector& q, const std::vector<ChunkedKey>& keys,
                            const std::vector<QuantizedVector>& values, const PruneConfig& cfg,
                            const MemoryModel& mem, const SimConfig& sim = {});

struct Step1Traffic {
    std::int64_t bytes_V = 0;
    std::int64_t cycles = 0;
    double v_access_reduction = 0.0;  // n_tokens / survivors
};

Step1Traffic step1_traffic(std::int64_t n_survivors, std::int64_t n_tokens, int d_h,
                           int precision_bits, const MemoryModel& mem, int pe_width = 64);

// Roofline for the no-pruning design: stream everything once, score and
// weight each token.
std::int64_t baseline_cycles(std::int64_t bytes_total, std::int64_t n_tokens, int d_h,
                             const MemoryModel& mem, int pe_width = 64);

// Per-transfer byte counts used consistently everywhere K or V is metered.
std::int64_t chunk_bytes(int d_h, const ChunkConfig& cfg);
std::int64_t value_bytes(int d_h, int precision_bits);

}  // namespace tpkv
