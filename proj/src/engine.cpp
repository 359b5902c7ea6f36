// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#include "tpkv/engine.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace tpkv {

double PruneConfig::ln_thr() const {
    return std::log(thr);  // thr == 0 gives -inf: the prune test never fires
}

void PruneConfig::validate() const {
    chunking.validate();
    if (!(thr >= 0.0) || thr >= 1.0)
        throw ConfigError("thr must lie in [0, 1), got " + std::to_string(thr));
}

double TokenState::last_min_exp() const {
    return std::exp(last_s_min);
}

double DenominatorState::ln_value() const {
    if (empty())
        return -std::numeric_limits<double>::infinity();
    return max_exponent + std::log(scaled_sum);
}

void DenominatorState::add(double x) {
    if (empty()) {
        max_exponent = x;
        scaled_sum = 1.0;
        return;
    }
    if (x <= max_exponent) {
        scaled_sum += std::exp(x - max_exponent);
    } else {
        scaled_sum = scaled_sum * std::exp(max_exponent - x) + 1.0;
        max_exponent = x;
    }
}

void DenominatorState::replace(double old_x, double new_x) {
    if (new_x < old_x)
        throw ImpossibleState("denominator contribution shrank; bounds must tighten upward");
    if (new_x <= max_exponent) {
        scaled_sum += std::exp(new_x - max_exponent) - std::exp(old_x - max_exponent);
    } else {
        scaled_sum = scaled_sum * std::exp(max_exponent - new_x) +
                     (1.0 - std::exp(old_x - new_x));
        max_exponent = new_x;
    }
}

double estimate_p_upper(double s_max, const DenominatorState& den) {
    return std::exp(s_max - den.ln_value());
}

PruneEngine::PruneEngine(QuantizedVector q, MarginTable margins, PruneConfig cfg, int n_tokens)
    : q_(std::move(q)), margins_(std::move(margins)), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (q_.dim() == 0)
        throw InvalidInput("engine needs a non-empty query");
    if (n_tokens < 1)
        throw InvalidInput("engine needs at least one token");
    if (margins_.levels() != cfg_.chunking.chunks_per_vec())
        throw ConfigError("margin table level count does not match chunk configuration");
    if (!(margins_.scale_factor > 0.0) || !std::isfinite(margins_.scale_factor))
        throw ConfigError("margin scale factor must be positive and finite");
    states_.resize(n_tokens);
    for (int i = 0; i < n_tokens; ++i) states_[i].token_index = i;
    den_trace_.reserve(static_cast<std::size_t>(n_tokens) * margins_.levels());
}

Decision PruneEngine::process_chunk(int token, int b, std::span<const std::uint8_t> fields,
                                    std::optional<double> ln_den_for_test) {
    if (token < 0 || token >= n_tokens())
        throw ProtocolError("token index out of range");
    TokenState& st = states_[token];
    if (st.status == TokenStatus::pruned || st.status == TokenStatus::survivor)
        throw ProtocolError("chunk delivered to a settled token " + std::to_string(token));
    if (b != st.chunk_level + 1)
        throw ProtocolError("chunk " + std::to_string(b) + " out of order for token " +
                            std::to_string(token) + " at level " +
                            std::to_string(st.chunk_level));
    if (static_cast<int>(fields.size()) != q_.dim())
        throw InvalidInput("chunk width does not match query dimension");

    const ChunkConfig& ck = cfg_.chunking;
    std::int64_t contrib = 0;
    for (int j = 0; j < q_.dim(); ++j)
        contrib += static_cast<std::int64_t>(q_.values[j]) *
                   chunk_field_value(fields[j], b, ck.chunk_bits);
    st.partial_score += contrib * (std::int64_t{1} << ck.shift(b));

    const auto [lo, hi] = score_bounds_int(st.partial_score, b, margins_);
    if (b > 0 && (lo < st.last_min_int || hi > st.last_max_int))
        throw ImpossibleState("score bounds widened at level " + std::to_string(b));
    st.last_min_int = lo;
    st.last_max_int = hi;

    const double s_min = lo * margins_.scale_factor;
    const double s_max = hi * margins_.scale_factor;

    // Contribute before testing: the shared denominator always carries this
    // token's freshest lower bound, pruned or not.
    const double prev_ln = den_.ln_value();
    if (st.status == TokenStatus::pending)
        den_.add(s_min);
    else
        den_.replace(st.last_s_min, s_min);
    st.last_s_min = s_min;
    st.chunk_level = b;

    const double ln_den = den_.ln_value();
    if (ln_den < prev_ln)
        throw ImpossibleState("denominator decreased");
    den_trace_.push_back(ln_den);

    const double ln_for_test = ln_den_for_test.value_or(ln_den);
    if (s_max - ln_for_test <= cfg_.ln_thr()) {
        st.status = TokenStatus::pruned;
        return {DecisionKind::prune};
    }
    if (b == ck.chunks_per_vec() - 1) {
        st.status = TokenStatus::survivor;
        return {DecisionKind::finalize_survivor};
    }
    st.status = TokenStatus::awaiting_next_chunk;
    return {DecisionKind::request_next, b + 1};
}

std::vector<int> processing_order(int n, OrderPolicy policy) {
    if (n < 1)
        throw InvalidInput("token count must be positive");
    std::vector<int> order;
    order.reserve(n);
    order.push_back(0);
    if (policy == OrderPolicy::sequential) {
        for (int i = 1; i < n; ++i) order.push_back(i);
    } else {
        for (int i = n - 1; i >= 1; --i) order.push_back(i);
    }
    return order;
}

Step0Result collect_step0(const PruneEngine& eng) {
    Step0Result r;
    r.states = eng.states();
    r.chunks_fetched.resize(eng.n_tokens());
    r.pruned_at_chunk.assign(eng.levels(), 0);
    r.denominator = eng.denominator();
    r.den_trace = eng.den_trace();
    for (const TokenState& st : r.states) {
        r.chunks_fetched[st.token_index] = st.chunk_level + 1;
        r.total_chunks += st.chunk_level + 1;
        if (st.status == TokenStatus::pruned)
            r.pruned_at_chunk[st.chunk_level]++;
        if (st.status == TokenStatus::survivor)
            r.survivors.push_back({st.token_index, st.partial_score,
                                   st.partial_score * eng.margins().scale_factor});
    }
    return r;
}

Step0Result run_step0(const QuantizedVector& q, const std::vector<ChunkedKey>& keys,
                      const MarginTable& margins, const PruneConfig& cfg) {
    if (keys.empty())
        throw InvalidInput("need at least one key");
    const int n = static_cast<int>(keys.size());
    PruneEngine eng(q, margins, cfg, n);

    std::vector<Survivor> survivors;  // decision order, unlike collect_step0's index order
    for (int tok : processing_order(n, cfg.order_policy)) {
        const ChunkedKey& k = keys[tok];
        if (k.levels() != cfg.chunking.chunks_per_vec() || k.dim() != q.dim())
            throw InvalidInput("key " + std::to_string(tok) + " has wrong shape");
        for (int b = 0; b < cfg.chunking.chunks_per_vec(); ++b) {
            const Decision d = eng.process_chunk(tok, b, k.chunks[b]);
            if (d.kind == DecisionKind::prune)
                break;
            if (d.kind == DecisionKind::finalize_survivor) {
                const TokenState& st = eng.state(tok);
                survivors.push_back({tok, st.partial_score,
                                     st.partial_score * margins.scale_factor});
            }
        }
    }
    Step0Result r = collect_step0(eng);
    r.survivors = std::move(survivors);
    return r;
}

Step1Result run_step1(const std::vector<Survivor>& survivors,
                      const std::vector<QuantizedVector>& values, const PruneConfig& cfg,
                      const DenominatorState& step0_den) {
    if (survivors.empty())
        throw ImpossibleState("no survivors reached the weighting step");
    const int d = values.empty() ? 0 : values.front().dim();
    if (d == 0)
        throw InvalidInput("values must be non-empty");

    Step1Result r;
    if (cfg.renormalize_output) {
        DenominatorState den;
        for (const Survivor& s : survivors) den.add(s.score);
        r.ln_denominator = den.ln_value();
    } else {
        r.ln_denominator = step0_den.ln_value();
    }

    r.probabilities.reserve(survivors.size());
    r.output.assign(d, 0.0);
    for (const Survivor& s : survivors) {
        if (s.token_index < 0 || s.token_index >= static_cast<int>(values.size()))
            throw InvalidInput("survivor refers to a missing value row");
        const QuantizedVector& v = values[s.token_index];
        if (v.dim() != d)
            throw InvalidInput("value rows disagree on dimension");
        const double p = std::exp(s.score - r.ln_denominator);
        r.probabilities.push_back(p);
        for (int j = 0; j < d; ++j)
            r.output[j] += p * v.values[j] * v.scale;
    }
    return r;
}

}  // namespace tpkv
