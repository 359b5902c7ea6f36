// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "tpkv/margin.hpp"
#include "tpkv/quant.hpp"

namespace tpkv {

enum class OrderPolicy { locality, sequential };

struct PruneConfig {
    // Probability floor: a token is dropped once even its upper-bound
    // probability is <= thr. 0 disables pruning (ln 0 = -inf never fires).
    double thr = 1e-3;
    OrderPolicy order_policy = OrderPolicy::locality;
    ChunkConfig chunking{};
    // true: step 1 renormalizes over survivor scores only (sums to 1).
    // false: step 1 reuses the step-0 denominator, which still carries the
    // last lower-bound contribution of every pruned token.
    bool renormalize_output = true;

    double ln_thr() const;
    void validate() const;
};

enum class TokenStatus { pending, awaiting_next_chunk, pruned, survivor };

struct TokenState {
    int token_index = -1;
    TokenStatus status = TokenStatus::pending;
    int chunk_level = -1;             // highest chunk folded in so far
    std::int64_t partial_score = 0;   // integer q . partial_value(k, chunk_level)
    // Most recent bounds, integer domain. min never decreases, max never
    // increases as chunks land; equal at the last level.
    std::int64_t last_min_int = std::numeric_limits<std::int64_t>::min();
    std::int64_t last_max_int = std::numeric_limits<std::int64_t>::max();
    // Log-domain value of this token's current denominator contribution.
    double last_s_min = -std::numeric_limits<double>::infinity();

    double last_min_exp() const;
};

// Streaming log-sum-exp accumulator for the shared denominator. Holds the sum
// as scaled_sum * exp(max_exponent) so arbitrarily spread scores never
// overflow. Contributions are only ever added or replaced by larger ones, so
// ln_value() is non-decreasing over a run.
struct DenominatorState {
    double max_exponent = -std::numeric_limits<double>::infinity();
    double scaled_sum = 0.0;

    bool empty() const { return scaled_sum == 0.0; }
    double ln_value() const;
    void add(double x);                       // += exp(x)
    void replace(double old_x, double new_x); // += exp(new_x) - exp(old_x), new_x >= old_x
};

// Upper bound on a token's final attention probability given the current
// denominator: exp(s_max - ln(den)).
double estimate_p_upper(double s_max, const DenominatorState& den);

enum class DecisionKind { prune, request_next, finalize_survivor };

struct Decision {
    DecisionKind kind;
    int next_chunk = -1;  // valid for request_next
};

// Progressive scorer. Feed each token's chunks in order (interleaving across
// tokens freely); every chunk updates the token's score window and the shared
// denominator, then decides: prune, fetch the next chunk, or finalize.
// The token's own contribution enters the denominator before its test, so a
// lone token can never be pruned (its p'' is at least 1).
class PruneEngine {
public:
    PruneEngine(QuantizedVector q, MarginTable margins, PruneConfig cfg, int n_tokens);

    // fields are the raw chunk-b values of one key; b must be exactly one
    // past the token's current level. ln_den_for_test substitutes a stale
    // broadcast denominator for the decision only (multi-lane modeling);
    // contributions always land in the live accumulator.
    Decision process_chunk(int token, int b, std::span<const std::uint8_t> fields,
                           std::optional<double> ln_den_for_test = std::nullopt);

    const TokenState& state(int token) const { return states_.at(token); }
    const std::vector<TokenState>& states() const { return states_; }
    const DenominatorState& denominator() const { return den_; }
    // ln(den) after every processed chunk, in processing order.
    const std::vector<double>& den_trace() const { return den_trace_; }
    const PruneConfig& config() const { return cfg_; }
    const MarginTable& margins() const { return margins_; }
    int n_tokens() const { return static_cast<int>(states_.size()); }
    int levels() const { return cfg_.chunking.chunks_per_vec(); }

private:
    QuantizedVector q_;
    MarginTable margins_;
    PruneConfig cfg_;
    std::vector<TokenState> states_;
    DenominatorState den_;
    std::vector<double> den_trace_;
};

struct Survivor {
    int token_index = -1;
    std::int64_t score_int = 0;  // exact full-precision integer score
    double score = 0.0;          // score_int * scale_factor
};

struct Step0Result {
    std::vector<Survivor> survivors;     // in decision order
    std::vector<TokenState> states;      // final state per token index
    std::vector<int> chunks_fetched;     // per token index
    std::vector<int> pruned_at_chunk;    // histogram over chunk levels
    std::int64_t total_chunks = 0;
    DenominatorState denominator;        // final step-0 accumulator
    std::vector<double> den_trace;
};

// Token visit order. locality: 0 first, then n-1 down to 1.
std::vector<int> processing_order(int n, OrderPolicy policy);

// In-order progressive pass: tokens in order_policy order, each taken
// depth-first through its chunks until pruned or finalized.
Step0Result run_step0(const QuantizedVector& q, const std::vector<ChunkedKey>& keys,
                      const MarginTable& margins, const PruneConfig& cfg);

// Pack a finished engine's results (used by the schedulers, which drive
// process_chunk themselves in arrival order).
Step0Result collect_step0(const PruneEngine& eng);

struct Step1Result {
    std::vector<double> probabilities;  // aligned with the survivor list
    std::vector<double> output;
    double ln_denominator = 0.0;
};

// Weighted-value accumulation over survivors. step0_den is only read when
// cfg.renormalize_output is false.
Step1Result run_step1(const std::vector<Survivor>& survivors,
                      const std::vector<QuantizedVector>& values, const PruneConfig& cfg,
                      const DenominatorState& step0_den);

}  // namespace tpkv
