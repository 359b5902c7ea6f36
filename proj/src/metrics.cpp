// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#include "tpkv/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <limits>

namespace tpkv {

PreparedInstance prepare(const AttentionTrace& trace, const ChunkConfig& cfg) {
    trace.validate();
    cfg.validate();

    PreparedInstance inst;
    const std::vector<double> qd(trace.q.begin(), trace.q.end());
    inst.q = quantize(qd, cfg.total_bits);

    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(trace.n_tokens) * trace.d_h);
    for (const auto& row : trace.keys) flat.insert(flat.end(), row.begin(), row.end());
    const double key_scale = symmetric_scale(flat, cfg.total_bits);

    inst.keys.reserve(trace.n_tokens);
    inst.values.reserve(trace.n_tokens);
    for (std::uint32_t i = 0; i < trace.n_tokens; ++i) {
        const std::vector<double> kd(trace.keys[i].begin(), trace.keys[i].end());
        inst.keys.push_back(to_chunks(quantize_with_scale(kd, key_scale, cfg.total_bits), cfg));
        const std::vector<double> vd(trace.values[i].begin(), trace.values[i].end());
        inst.values.push_back(quantize(vd, cfg.total_bits));
    }
    inst.margins = build_margins(inst.q, cfg, key_scale);
    return inst;
}

RunMode parse_run_mode(const std::string& name) {
    if (name == "functional") return RunMode::functional;
    if (name == "ooo") return RunMode::ooo;
    if (name == "blocking") return RunMode::blocking;
    if (name == "all") return RunMode::all;
    throw ConfigError("unknown mode '" + name + "'");
}

const char* run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::functional: return "functional";
        case RunMode::ooo: return "ooo";
        case RunMode::blocking: return "blocking";
        case RunMode::all: return "all";
    }
    return "unknown";
}

std::vector<int> soundness_violations(const Step0Result& step0, const OracleResult& oracle,
                                      double thr) {
    std::vector<int> bad;
    for (const TokenState& st : step0.states)
        if (st.status == TokenStatus::pruned &&
            oracle.probabilities.at(st.token_index) >= thr)
            bad.push_back(st.token_index);
    return bad;
}

namespace {

// Understates every upper bound by the same amount (fraction of the level-0
// window). A constant shift keeps the per-level nesting the engine asserts,
// so the fault surfaces as unsafe prunes, not as an internal error.
void corrupt(MarginTable& m, double fraction) {
    if (m.m_max.empty()) return;
    const double window = static_cast<double>(m.m_max[0] - m.m_min[0]);
    const auto amount = static_cast<std::int64_t>(std::llround(fraction * window));
    for (auto& v : m.m_max) v -= amount;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

}  // namespace

Experiment run_experiment(const AttentionTrace& trace, const RunConfig& rc,
                          const ExperimentOptions& opt) {
    rc.prune.validate();
    rc.mem.validate();
    rc.sim.validate();

    Experiment ex;
    ex.inst = prepare(trace, rc.prune.chunking);
    if (opt.corrupt_margins != 0.0) corrupt(ex.inst.margins, opt.corrupt_margins);
    ex.oracle = exact_attention(ex.inst.q, ex.inst.keys, ex.inst.values, rc.prune.chunking);

    // The functional pass always runs; it is cheap and anchors verification.
    ex.functional = run_step0(ex.inst.q, ex.inst.keys, ex.inst.margins, rc.prune);
    if (!ex.functional.survivors.empty())
        ex.functional_step1 = run_step1(ex.functional.survivors, ex.inst.values, rc.prune,
                                        ex.functional.denominator);

    // The simulators rebuild margins from the keys internally, so injected
    // corruption cannot reach them; a corrupted run is functional-only.
    const bool want_ooo = opt.mode == RunMode::ooo || opt.mode == RunMode::all;
    const bool want_blocking = opt.mode == RunMode::blocking || opt.mode == RunMode::all;
    if (opt.corrupt_margins == 0.0) {
        if (want_ooo)
            ex.ooo = simulate_ooo(ex.inst.q, ex.inst.keys, ex.inst.values, rc.prune, rc.mem,
                                  rc.sim);
        if (want_blocking)
            ex.blocking = simulate_blocking(ex.inst.q, ex.inst.keys, ex.inst.values, rc.prune,
                                            rc.mem, rc.sim);
    }

    const int n = ex.inst.n();
    const int d = ex.inst.d();
    const ChunkConfig& cc = rc.prune.chunking;
    const std::int64_t cb = chunk_bytes(d, cc);
    const std::int64_t vb = value_bytes(d, cc.total_bits);

    RunMetrics& m = ex.metrics;
    // Report what actually ran, not what was asked for: a corrupted-margin
    // run downgrades to functional-only.
    m.mode = (opt.corrupt_margins != 0.0) ? run_mode_name(RunMode::functional)
                                          : run_mode_name(opt.mode);
    m.thr = rc.prune.thr;
    m.n_tokens = n;
    m.d_h = d;
    m.chunks_per_vec = cc.chunks_per_vec();
    m.chunk_bits = cc.chunk_bits;

    // Primary accounting source: ooo > blocking > functional.
    const Step0Result* primary = &ex.functional;
    std::int64_t step0_cycles = 0;
    std::int64_t step1_cycles = 0;
    if (ex.blocking) {
        primary = &ex.blocking->step0;
        m.cycles_blocking = ex.blocking->stats.total_cycles + ex.blocking->step1_cycles;
    }
    if (ex.ooo) {
        primary = &ex.ooo->step0;
        m.cycles_ooo = ex.ooo->stats.total_cycles + ex.ooo->step1_cycles;
    }
    const SimResult* primary_sim = ex.ooo ? &*ex.ooo : (ex.blocking ? &*ex.blocking : nullptr);
    if (primary_sim) {
        step0_cycles = primary_sim->stats.total_cycles;
        step1_cycles = primary_sim->step1_cycles;
        const int pe_count = ex.ooo ? rc.sim.lanes : 1;  // blocking is single-PE
        if (step0_cycles > 0)
            m.pe_utilization = static_cast<double>(primary_sim->stats.pe_busy_cycles) /
                               (static_cast<double>(step0_cycles) * pe_count);
        else
            m.pe_utilization = 0.0;
        m.peak_scoreboard = primary_sim->stats.peak_scoreboard;
    }

    m.survivors = static_cast<int>(primary->survivors.size());
    m.tokens_pruned_at_chunk = primary->pruned_at_chunk;
    m.chunks_fetched = primary->total_chunks;
    m.bytes_K = m.chunks_fetched * cb;
    m.bytes_V = static_cast<std::int64_t>(m.survivors) * vb;
    m.bytes_baseline = static_cast<std::int64_t>(n) * (cc.chunks_per_vec() * cb + vb);
    m.v_access_reduction = m.survivors == 0
                               ? std::numeric_limits<double>::infinity()
                               : static_cast<double>(n) / m.survivors;
    m.k_access_reduction =
        static_cast<double>(n) * cc.chunks_per_vec() / static_cast<double>(m.chunks_fetched);
    m.total_reduction =
        static_cast<double>(m.bytes_baseline) / static_cast<double>(m.bytes_K + m.bytes_V);

    m.cycles_baseline = baseline_cycles(m.bytes_baseline, n, d, rc.mem, rc.sim.pe_width);
    if (primary_sim && step0_cycles + step1_cycles > 0)
        m.speedup = static_cast<double>(m.cycles_baseline) /
                    static_cast<double>(step0_cycles + step1_cycles);

    // Output error and pruned mass against the quantized-input oracle.
    const Step1Result* out = nullptr;
    if (primary_sim && !primary_sim->step0.survivors.empty()) out = &primary_sim->step1;
    else if (!primary_sim && ex.functional_step1) out = &*ex.functional_step1;
    if (out) m.output_max_abs_error = max_abs_diff(out->output, ex.oracle.output);
    for (const TokenState& st : primary->states)
        if (st.status == TokenStatus::pruned)
            m.pruned_true_mass += ex.oracle.probabilities.at(st.token_index);

    ex.violating_tokens = soundness_violations(*primary, ex.oracle, rc.prune.thr);
    // With corruption active the simulators are skipped, so sweep the
    // functional pass too; honest runs get the extra coverage for free.
    for (int t : soundness_violations(ex.functional, ex.oracle, rc.prune.thr))
        if (std::find(ex.violating_tokens.begin(), ex.violating_tokens.end(), t) ==
            ex.violating_tokens.end())
            ex.violating_tokens.push_back(t);
    std::sort(ex.violating_tokens.begin(), ex.violating_tokens.end());
    m.violations = static_cast<int>(ex.violating_tokens.size());

    const double macs = static_cast<double>(m.chunks_fetched) * d +
                        static_cast<double>(m.survivors) * d;
    m.energy_pj =
        static_cast<double>(m.bytes_K + m.bytes_V) * kEnergyPjPerByte + macs * kEnergyPjPerMac;

    if (opt.verify) {
        if (!ex.violating_tokens.empty()) {
            std::string msg = "pruned tokens with true probability >= thr:";
            for (int t : ex.violating_tokens) msg += " " + std::to_string(t);
            throw VerificationError(msg);
        }
        const int pruned = n - m.survivors;
        if (pruned > 0 && !(m.pruned_true_mass < rc.prune.thr * pruned))
            throw VerificationError("pruned probability mass exceeds thr * pruned_count");
    }
    return ex;
}

nlohmann::json to_json(const RunMetrics& m, bool with_timestamp) {
    nlohmann::json j;
    j["schema_version"] = kMetricsSchemaVersion;
    j["mode"] = m.mode;
    j["thr"] = m.thr;
    j["n_tokens"] = m.n_tokens;
    j["d_h"] = m.d_h;
    j["chunks_per_vec"] = m.chunks_per_vec;
    j["chunk_bits"] = m.chunk_bits;
    j["survivors"] = m.survivors;
    j["tokens_pruned_at_chunk"] = m.tokens_pruned_at_chunk;
    j["chunks_fetched"] = m.chunks_fetched;
    j["bytes_K"] = m.bytes_K;
    j["bytes_V"] = m.bytes_V;
    j["bytes_baseline"] = m.bytes_baseline;
    j["v_access_reduction"] = m.v_access_reduction;  // null when infinite
    j["k_access_reduction"] = m.k_access_reduction;
    j["total_reduction"] = m.total_reduction;
    j["cycles_ooo"] = m.cycles_ooo ? nlohmann::json(*m.cycles_ooo) : nlohmann::json(nullptr);
    j["cycles_blocking"] =
        m.cycles_blocking ? nlohmann::json(*m.cycles_blocking) : nlohmann::json(nullptr);
    j["cycles_baseline"] = m.cycles_baseline;
    j["speedup"] = m.speedup ? nlohmann::json(*m.speedup) : nlohmann::json(nullptr);
    j["pe_utilization"] =
        m.pe_utilization ? nlohmann::json(*m.pe_utilization) : nlohmann::json(nullptr);
    j["peak_scoreboard"] =
        m.peak_scoreboard ? nlohmann::json(*m.peak_scoreboard) : nlohmann::json(nullptr);
    j["output_max_abs_error"] = m.output_max_abs_error;
    j["pruned_true_mass"] = m.pruned_true_mass;
    j["violations"] = m.violations;
    j["energy_estimate"] = {{"approximate", true},
                            {"pj_per_byte", kEnergyPjPerByte},
                            {"pj_per_mac", kEnergyPjPerMac},
                            {"total_pj", m.energy_pj}};
    if (with_timestamp) {
        const auto now = std::chrono::system_clock::now();
        const std::time_t tt = std::chrono::system_clock::to_time_t(now);
        char buf[32];
        std::tm tm_utc{};
        gmtime_r(&tt, &tm_utc);
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
        j["timestamp"] = buf;
    }
    return j;
}

}  // namespace tpkv
