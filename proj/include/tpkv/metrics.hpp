// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tpkv/io.hpp"
#include "tpkv/oracle.hpp"
#include "tpkv/sched.hpp"

#include <json.hpp>

namespace tpkv {

// A trace made engine-ready: query and values quantized per vector, keys
// quantized against one shared scale (integer scores are only comparable
// across tokens when every key uses the same scale) and split into chunks.
struct PreparedInstance {
    QuantizedVector q;
    std::vector<ChunkedKey> keys;
    std::vector<QuantizedVector> values;
    MarginTable margins;

    int n() const { return static_cast<int>(keys.size()); }
    int d() const { return q.dim(); }
};

PreparedInstance prepare(const AttentionTrace& trace, const ChunkConfig& cfg);

enum class RunMode { functional, ooo, blocking, all };

RunMode parse_run_mode(const std::string& name);  // ConfigError on unknown
const char* run_mode_name(RunMode m);

struct ExperimentOptions {
    RunMode mode = RunMode::all;
    bool verify = false;
    // Fault-injection hook: fraction of each margin window subtracted from
    // m_max before the run. Nonzero values deliberately break soundness so
    // the verifier can be shown to catch it. Never set in normal operation.
    double corrupt_margins = 0.0;
};

// Everything one run produces. Headline traffic/cycle numbers come from the
// primary mode: ooo when available, else blocking, else the functional pass.
struct RunMetrics {
    std::string mode;
    double thr = 0.0;
    int n_tokens = 0;
    int d_h = 0;
    int chunks_per_vec = 0;
    int chunk_bits = 0;

    int survivors = 0;
    std::vector<int> tokens_pruned_at_chunk;
    std::int64_t chunks_fetched = 0;

    std::int64_t bytes_K = 0;
    std::int64_t bytes_V = 0;
    std::int64_t bytes_baseline = 0;
    double v_access_reduction = 0.0;  // n / survivors, +inf when none survive
    double k_access_reduction = 0.0;  // n * chunks_per_vec / chunks_fetched
    double total_reduction = 0.0;     // bytes_baseline / (bytes_K + bytes_V)

    std::optional<std::int64_t> cycles_ooo;       // step 0 + step 1
    std::optional<std::int64_t> cycles_blocking;
    std::int64_t cycles_baseline = 0;
    std::optional<double> speedup;                // baseline / primary cycles
    std::optional<double> pe_utilization;         // primary mode, step 0
    std::optional<int> peak_scoreboard;

    double output_max_abs_error = 0.0;  // vs quantized-input oracle
    double pruned_true_mass = 0.0;      // oracle probability of pruned tokens
    int violations = 0;                 // pruned tokens with true p >= thr

    // Flat traffic+MAC energy model, nothing more. Kept behind an
    // "approximate" marker so it cannot be mistaken for measured power.
    double energy_pj = 0.0;
};

inline constexpr double kEnergyPjPerByte = 30.0;  // DRAM transfer, flat
inline constexpr double kEnergyPjPerMac = 0.5;    // 12x4-bit MAC, flat
inline constexpr int kMetricsSchemaVersion = 1;

struct Experiment {
    PreparedInstance inst;
    OracleResult oracle;               // quantized-input ground truth
    Step0Result functional;            // in-order engine pass
    std::optional<Step1Result> functional_step1;
    std::optional<SimResult> ooo;
    std::optional<SimResult> blocking;
    RunMetrics metrics;
    std::vector<int> violating_tokens; // primary mode, true p >= thr
};

Experiment run_experiment(const AttentionTrace& trace, const RunConfig& rc,
                          const ExperimentOptions& opt = {});

// Pruned tokens of one finished step-0 pass whose oracle probability is
// >= thr. Empty means the run was sound.
std::vector<int> soundness_violations(const Step0Result& step0, const OracleResult& oracle,
                                      double thr);

// JSON document for one run; keys sort alphabetically so output is
// byte-stable. "timestamp" is the only field that varies between identical
// runs; with_timestamp=false omits it.
nlohmann::json to_json(const RunMetrics& m, bool with_timestamp = true);

}  // namespace tpkv
