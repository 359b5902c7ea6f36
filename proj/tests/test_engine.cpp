// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "tpkv/engine.hpp"
#include "tpkv/errors.hpp"
#include "tpkv/oracle.hpp"

using namespace tpkv;

namespace {

// d = 1 fixture with hand-traceable dynamics. scale_factor = 1e-4, so integer
// scores map to real scores of a few tens.
struct Tiny {
    ChunkConfig ccfg{};
    QuantizedVector q{{100}, 1e-4};
    std::vector<ChunkedKey> keys;
    MarginTable margins;

    explicit Tiny(std::vector<std::int32_t> codes) {
        for (auto c : codes) keys.push_back(to_chunks(QuantizedVector{{c}, 1.0}, ccfg));
        margins = build_margins(q, ccfg, 1.0);
    }
};

}  // namespace

TEST_CASE("PruneConfig::validate rejects thresholds outside [0, 1)") {
    PruneConfig cfg;
    cfg.thr = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.thr = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.thr = 0.0;
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("processing_order policies") {
    CHECK(processing_order(5, OrderPolicy::locality) == std::vector<int>{0, 4, 3, 2, 1});
    CHECK(processing_order(5, OrderPolicy::sequential) == std::vector<int>{0, 1, 2, 3, 4});
    CHECK(processing_order(1, OrderPolicy::locality) == std::vector<int>{0});
}

TEST_CASE("DenominatorState accumulates in the log domain") {
    DenominatorState den;
    CHECK(den.empty());
    den.add(0.0);
    CHECK(den.ln_value() == doctest::Approx(0.0).epsilon(1e-15));
    den.add(0.0);
    CHECK(den.ln_value() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    // Spread far beyond double range in the linear domain.
    den.add(800.0);
    CHECK(den.ln_value() == doctest::Approx(800.0 + std::log1p(2.0 * std::exp(-800.0))).epsilon(1e-14));
}

TEST_CASE("DenominatorState::replace upgrades a contribution in place") {
    DenominatorState den;
    den.add(1.0);
    den.add(2.0);
    double before = den.ln_value();
    den.replace(1.0, 1.5);
    CHECK(den.ln_value() == doctest::Approx(std::log(std::exp(1.5) + std::exp(2.0))).epsilon(1e-13));
    CHECK(den.ln_value() >= before);
    CHECK_THROWS_AS(den.replace(1.5, 1.0), ImpossibleState);
}

TEST_CASE("estimate_p_upper identities") {
    DenominatorState den;
    den.add(3.0);
    CHECK(estimate_p_upper(3.0, den) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(estimate_p_upper(3.0 + std::log(0.5), den) == doctest::Approx(0.5).epsilon(1e-13));

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-30.0, 30.0);
    for (int trial = 0; trial < 100; ++trial) {
        DenominatorState d2;
        double a = u(rng), b = u(rng), s = u(rng);
        d2.add(a);
        d2.add(b);
        double expect = std::exp(s) / (std::exp(a) + std::exp(b));
        CHECK(estimate_p_upper(s, d2) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("a lone token always survives and fetches every chunk") {
    Tiny t({-2000});
    PruneConfig cfg;
    cfg.thr = 0.999;  // as aggressive as the config allows
    auto r = run_step0(t.q, t.keys, t.margins, cfg);
    REQUIRE(r.survivors.size() == 1);
    CHECK(r.survivors[0].token_index == 0);
    CHECK(r.chunks_fetched[0] == 3);
    CHECK(r.total_chunks == 3);
    CHECK(r.survivors[0].score_int == -200000);
}

TEST_CASE("hand-traced three-token run: codes 2000, -2000, 100") {
    Tiny t({2000, -2000, 100});
    PruneConfig cfg;
    cfg.thr = 1e-3;
    auto r = run_step0(t.q, t.keys, t.margins, cfg);

    // Visit order 0, 2, 1. Token 0 rides its rising score through all three
    // chunks; the other two die on their first chunk against exp(20).
    REQUIRE(r.survivors.size() == 1);
    CHECK(r.survivors[0].token_index == 0);
    CHECK(r.survivors[0].score_int == 200000);
    CHECK(r.survivors[0].score == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(r.chunks_fetched == std::vector<int>{3, 1, 1});
    CHECK(r.pruned_at_chunk == std::vector<int>{2, 0, 0});
    CHECK(r.total_chunks == 5);
    CHECK(r.states[1].status == TokenStatus::pruned);
    CHECK(r.states[1].chunk_level == 0);
    CHECK(r.states[1].partial_score == -204800);
    CHECK(r.states[2].status == TokenStatus::pruned);
    CHECK(r.states[2].partial_score == 0);
    // Final denominator is dominated by the survivor.
    CHECK(r.denominator.ln_value() == doctest::Approx(20.0).epsilon(1e-9));

    auto s1 = run_step1(r.survivors, {QuantizedVector{{1000}, 1e-3},
                                      QuantizedVector{{0}, 1.0},
                                      QuantizedVector{{0}, 1.0}},
                        cfg, r.denominator);
    REQUIRE(s1.probabilities.size() == 1);
    CHECK(s1.probabilities[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s1.output[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("two identical keys both survive any thr below 0.5") {
    Tiny t({1500, 1500});
    PruneConfig cfg;
    cfg.thr = 0.49;
    auto r = run_step0(t.q, t.keys, t.margins, cfg);
    CHECK(r.survivors.size() == 2);

    auto s1 = run_step1(r.survivors,
                        {QuantizedVector{{2047}, 1.0 / 2047}, QuantizedVector{{-2047}, 1.0 / 2047}},
                        cfg, r.denominator);
    CHECK(s1.probabilities[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s1.probabilities[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s1.output[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ln(denominator) never decreases over a run") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    int n = 24, d = 8;
    std::vector<double> qr(d);
    for (auto& x : qr) x = u(rng);
    auto q = quantize(qr, 12);
    ChunkConfig ccfg{};
    std::vector<ChunkedKey> keys;
    for (int i = 0; i < n; ++i) {
        std::vector<double> kr(d);
        for (auto& x : kr) x = u(rng);
        keys.push_back(to_chunks(quantize_with_scale(kr, 1.0 / 2047, 12), ccfg));
    }
    auto margins = build_margins(q, ccfg, 1.0 / 2047);
    PruneConfig cfg;
    cfg.thr = 0.02;
    auto r = run_step0(q, keys, margins, cfg);
    REQUIRE(!r.den_trace.empty());
    for (size_t i = 1; i < r.den_trace.size(); ++i)
        CHECK(r.den_trace[i] >= r.den_trace[i - 1] - 1e-12);
    CHECK(r.den_trace.back() == doctest::Approx(r.denominator.ln_value()).epsilon(1e-12));
}

TEST_CASE("thr 0 disables pruning and reproduces the oracle") {
    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    int n = 20, d = 8;
    std::vector<double> qr(d);
    for (auto& x : qr) x = u(rng);
    auto q = quantize(qr, 12);
    ChunkConfig ccfg{};
    std::vector<ChunkedKey> keys;
    std::vector<QuantizedVector> values;
    for (int i = 0; i < n; ++i) {
        std::vector<double> kr(d), vr(d);
        for (auto& x : kr) x = u(rng);
        for (auto& x : vr) x = u(rng);
        keys.push_back(to_chunks(quantize_with_scale(kr, 2.0 / 2047, 12), ccfg));
        values.push_back(quantize(vr, 12));
    }
    auto margins = build_margins(q, ccfg, 2.0 / 2047);
    PruneConfig cfg;
    cfg.thr = 0.0;
    auto r = run_step0(q, keys, margins, cfg);
    CHECK(static_cast<int>(r.survivors.size()) == n);
    CHECK(r.total_chunks == std::int64_t{n} * 3);

    // Survivors appear in visit order.
    auto order = processing_order(n, cfg.order_policy);
    for (int i = 0; i < n; ++i) CHECK(r.survivors[i].token_index == order[i]);

    auto s1 = run_step1(r.survivors, values, cfg, r.denominator);
    auto oracle = exact_attention(q, keys, values, ccfg);
    for (int i = 0; i < n; ++i) {
        int tok = r.survivors[i].token_index;
        CHECK(std::abs(s1.probabilities[i] - oracle.probabilities[tok]) <= 1e-12);
    }
    for (int j = 0; j < d; ++j) CHECK(std::abs(s1.output[j] - oracle.output[j]) <= 1e-9);
    CHECK(s1.ln_denominator == doctest::Approx(oracle.log_denominator).epsilon(1e-12));
}

TEST_CASE("survivor scores are the exact integer dot products") {
    Tiny t({731, -88, 1999});
    PruneConfig cfg;
    cfg.thr = 0.0;
    auto r = run_step0(t.q, t.keys, t.margins, cfg);
    REQUIRE(r.survivors.size() == 3);
    for (const auto& s : r.survivors) {
        auto full = reconstruct(t.keys[s.token_index], t.ccfg);
        CHECK(s.score_int == std::int64_t{100} * full.values[0]);
    }
}

TEST_CASE("process_chunk protocol violations") {
    Tiny t({500, 600});
    PruneConfig cfg;
    cfg.thr = 1e-3;
    PruneEngine eng(t.q, t.margins, cfg, 2);

    std::vector<std::uint8_t> f0{t.keys[0].chunks[0][0]};
    std::vector<std::uint8_t> f2{t.keys[0].chunks[2][0]};
    CHECK_THROWS_AS(eng.process_chunk(5, 0, f0), ProtocolError);
    CHECK_THROWS_AS(eng.process_chunk(-1, 0, f0), ProtocolError);
    CHECK_THROWS_AS(eng.process_chunk(0, 1, f0), ProtocolError);  // skips chunk 0
    auto d0 = eng.process_chunk(0, 0, f0);
    CHECK(d0.kind == DecisionKind::request_next);
    CHECK(d0.next_chunk == 1);
    CHECK_THROWS_AS(eng.process_chunk(0, 0, f0), ProtocolError);  // replay
    CHECK_THROWS_AS(eng.process_chunk(0, 2, f2), ProtocolError);  // skips chunk 1

    std::vector<std::uint8_t> wide{1, 2};
    CHECK_THROWS_AS(eng.process_chunk(1, 0, wide), InvalidInput);
}

TEST_CASE("feeding a settled token throws") {
    Tiny t({2000, -2000});
    PruneConfig cfg;
    cfg.thr = 1e-3;
    PruneEngine eng(t.q, t.margins, cfg, 2);
    for (int b = 0; b < 3; ++b) {
        std::vector<std::uint8_t> f{t.keys[0].chunks[b][0]};
        eng.process_chunk(0, b, f);
    }
    CHECK(eng.state(0).status == TokenStatus::survivor);
    std::vector<std::uint8_t> extra{t.keys[0].chunks[0][0]};
    CHECK_THROWS_AS(eng.process_chunk(0, 0, extra), ProtocolError);

    std::vector<std::uint8_t> f1{t.keys[1].chunks[0][0]};
    auto d = eng.process_chunk(1, 0, f1);
    CHECK(d.kind == DecisionKind::prune);
    CHECK_THROWS_AS(eng.process_chunk(1, 1, f1), ProtocolError);
}

TEST_CASE("a stale broadcast denominator defers the prune") {
    Tiny t({2000, 100});
    PruneConfig cfg;
    cfg.thr = 1e-3;

    // Live denominator: token 1 dies immediately against exp(~18).
    PruneEngine live(t.q, t.margins, cfg, 2);
    std::vector<std::uint8_t> fa{t.keys[0].chunks[0][0]};
    std::vector<std::uint8_t> fb{t.keys[1].chunks[0][0]};
    live.process_chunk(0, 0, fa);
    CHECK(live.process_chunk(1, 0, fb).kind == DecisionKind::prune);

    // Stale denominator from before token 0 contributed: the same chunk now
    // merely requests the next one. The contribution still lands live.
    PruneEngine stale(t.q, t.margins, cfg, 2);
    stale.process_chunk(0, 0, fa);
    auto d = stale.process_chunk(1, 0, fb, 0.0);
    CHECK(d.kind == DecisionKind::request_next);
    CHECK(stale.denominator().ln_value() == doctest::Approx(live.denominator().ln_value()).epsilon(1e-12));
}

TEST_CASE("step 1 without renormalization reuses the step-0 denominator") {
    PruneConfig cfg;
    cfg.renormalize_output = false;
    DenominatorState den;
    den.add(1.0);
    den.add(1.0);  // a pruned token's floor contribution stays in
    std::vector<Survivor> survivors{{0, 0, 1.0}};
    std::vector<QuantizedVector> values{QuantizedVector{{2047, 0}, 1.0 / 2047}};
    auto r = run_step1(survivors, values, cfg, den);
    CHECK(r.probabilities[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.output[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.output[1] == doctest::Approx(0.0).epsilon(1e-15));

    cfg.renormalize_output = true;
    auto rn = run_step1(survivors, values, cfg, den);
    CHECK(rn.probabilities[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(rn.output[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("step 1 with no survivors is impossible by construction") {
    PruneConfig cfg;
    DenominatorState den;
    den.add(0.0);
    CHECK_THROWS_AS(run_step1({}, {QuantizedVector{{0}, 1.0}}, cfg, den), ImpossibleState);
}
