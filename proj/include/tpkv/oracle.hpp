// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "tpkv/quant.hpp"

namespace tpkv {

// Reference results computed the slow, obviously-correct way. Everything the
// fast path produces is judged against this module, so it deliberately shares
// no arithmetic shortcuts with the engine: full-precision integer dot
// products, max-subtracted softmax, no chunking, no margins.
struct OracleResult {
    std::vector<double> scores;         // real-domain, per token
    std::vector<double> probabilities;  // softmax over scores, sums to 1
    std::vector<double> output;         // sum_i p_i * dequant(v_i)
    double log_denominator = 0.0;       // log-sum-exp of scores
};

// Numerically stable softmax (subtract-max, exponentiate, normalize).
std::vector<double> softmax_direct(std::span<const double> scores);

// Log-domain counterpart used to cross-check softmax_direct.
double log_sum_exp(std::span<const double> scores);
std::vector<double> softmax_logdomain(std::span<const double> scores);

// Attention over the same quantized codes the engine sees.
OracleResult exact_attention(const QuantizedVector& q,
                             const std::vector<QuantizedVector>& keys,
                             const std::vector<QuantizedVector>& values);

// Convenience overload for chunked keys (reconstructs full codes first).
OracleResult exact_attention(const QuantizedVector& q,
                             const std::vector<ChunkedKey>& keys,
                             const std::vector<QuantizedVector>& values,
                             const ChunkConfig& cfg);

// Float-input twin, for isolating quantization error from pruning error.
OracleResult exact_attention_real(std::span<const double> q,
                                  const std::vector<std::vector<double>>& keys,
                                  const std::vector<std::vector<double>>& values);

// Exact integer score extremes over every completion of the unknown low bits
// of a key known only through chunks 0..upto_b. Enumerates all
// 2^(d * r(upto_b)) completions; throws EnumerationTooLarge past 20 unknown
// bits total. This is the ground truth the margin table must match exactly.
std::pair<std::int64_t, std::int64_t> brute_force_bounds(const QuantizedVector& q,
                                                         const ChunkedKey& key, int upto_b,
                                                         const ChunkConfig& cfg);

}  // namespace tpkv
