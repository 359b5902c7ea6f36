// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tpkv/engine.hpp"
#include "tpkv/errors.hpp"
#include "tpkv/sched.hpp"

namespace tpkv {

// One attention instance: query, keys, values, all full precision.
// Floats are stored so a file round trip is bit exact.
struct AttentionTrace {
    std::uint32_t d_h = 0;
    std::uint32_t n_tokens = 0;
    std::vector<float> q;                    // d_h
    std::vector<std::vector<float>> keys;    // n_tokens x d_h
    std::vector<std::vector<float>> values;  // n_tokens x d_h
    std::string metadata;                    // UTF-8 JSON object text, "" when absent

    void validate() const;  // shape + finiteness, InvalidInput on failure
};

// Binary trace file, all integers and floats little endian:
//   magic "TPKV" | version u16 | d_h u32 | n u32
//   | q: d_h f32 | K: n*d_h f32 row major | V: n*d_h f32 row major
//   | metadata byte length u32 | metadata UTF-8 JSON
// Trailing bytes after the metadata are an error.
inline constexpr char kTraceMagic[4] = {'T', 'P', 'K', 'V'};
inline constexpr std::uint16_t kTraceVersion = 1;

AttentionTrace read_trace(const std::string& path);
void write_trace(const AttentionTrace& trace, const std::string& path);

enum class Distribution { gaussian, peaked, locality };

const char* distribution_name(Distribution d);

// Seeded synthetic workload. Score shapes:
//   gaussian: q, V ~ N(0,1); K ~ N(0, sigma^2). sigma=0 makes all scores equal.
//   peaked: k_dominant keys aligned with q at score +gap/2, the rest
//     anti-aligned at -gap/2; V ~ N(0,1).
//   locality: key i targets score 4*exp(-decay_rate*(n-1-i)), token 0
//     overridden to first_token_boost; V ~ N(0,1).
struct SyntheticSpec {
    Distribution distribution = Distribution::gaussian;
    int n = 64;
    int d_h = 64;
    std::uint64_t seed = 0;
    double sigma = 1.0;           // gaussian
    double k_dominant = 1;        // peaked (integer valued)
    double gap = 8.0;             // peaked
    double decay_rate = 0.05;     // locality
    double first_token_boost = 4.0;  // locality

    void validate() const;  // ConfigError on out-of-range parameters
};

// "dist:key=value,..." with keys n, d, seed, sigma, k, gap, decay, boost.
SyntheticSpec parse_synthetic_spec(const std::string& text);
std::string format_synthetic_spec(const SyntheticSpec& spec);

AttentionTrace generate(const SyntheticSpec& spec);

// Whole-run configuration, loadable from a JSON file. Schema (all keys
// optional): thr, order ("locality"|"sequential"), chunks, chunk_bits,
// renormalize_output, mem{latency_cycles, bytes_per_cycle, channels,
// max_inflight}, sim{lanes, scoreboard_capacity, pe_width, jitter_cycles,
// jitter_seed}, synthetic (spec string). Unknown keys are rejected.
struct RunConfig {
    PruneConfig prune;
    MemoryModel mem;
    SimConfig sim;
    std::optional<SyntheticSpec> synthetic;
};

RunConfig load_config(const std::string& path);

}  // namespace tpkv
