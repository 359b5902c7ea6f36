// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#include "tpkv/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace tpkv {

std::vector<double> softmax_direct(std::span<const double> scores) {
    if (scores.empty())
        throw InvalidInput("softmax over an empty score set");
    double m = -std::numeric_limits<double>::infinity();
    for (double s : scores) m = std::max(m, s);
    std::vector<double> p(scores.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        p[i] = std::exp(scores[i] - m);
        sum += p[i];
    }
    for (double& x : p) x /= sum;
    return p;
}

double log_sum_exp(std::span<const double> scores) {
    if (scores.empty())
        throw InvalidInput("log_sum_exp over an empty score set");
    double m = -std::numeric_limits<double>::infinity();
    for (double s : scores) m = std::max(m, s);
    double sum = 0.0;
    for (double s : scores) sum += std::exp(s - m);
    return m + std::log(sum);
}

std::vector<double> softmax_logdomain(std::span<const double> scores) {
    const double lse = log_sum_exp(scores);
    std::vector<double> p(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        p[i] = std::exp(scores[i] - lse);
    return p;
}

namespace {

OracleResult attention_from_scores(const std::vector<double>& scores,
                                   const std::vector<QuantizedVector>& values, int d) {
    OracleResult r;
    r.scores = scores;
    r.probabilities = softmax_direct(r.scores);
    r.log_denominator = log_sum_exp(r.scores);
    r.output.assign(d, 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i].dim() != d)
            throw InvalidInput("value row " + std::to_string(i) + " has wrong dimension");
        for (int j = 0; j < d; ++j)
            r.output[j] += r.probabilities[i] * values[i].values[j] * values[i].scale;
    }
    // sanity: softmax must be a distribution
    double total = 0.0;
    for (double p : r.probabilities) total += p;
    if (std::abs(total - 1.0) > 1e-12)
        throw ImpossibleState("softmax probabilities do not sum to 1");
    return r;
}

}  // namespace

OracleResult exact_attention(const QuantizedVector& q,
                             const std::vector<QuantizedVector>& keys,
                             const std::vector<QuantizedVector>& values) {
    const int d = q.dim();
    if (d == 0 || keys.empty())
        throw InvalidInput("attention needs a non-empty query and at least one key");
    if (keys.size() != values.size())
        throw InvalidInput("key/value count mismatch");
    const double rsqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<double> scores(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (keys[i].dim() != d)
            throw InvalidInput("key row " + std::to_string(i) + " has wrong dimension");
        std::int64_t dot = 0;
        for (int j = 0; j < d; ++j)
            dot += static_cast<std::int64_t>(q.values[j]) * keys[i].values[j];
        scores[i] = static_cast<double>(dot) * q.scale * keys[i].scale * rsqrt_d;
    }
    return attention_from_scores(scores, values, d);
}

OracleResult exact_attention(const QuantizedVector& q,
                             const std::vector<ChunkedKey>& keys,
                             const std::vector<QuantizedVector>& values,
                             const ChunkConfig& cfg) {
    std::vector<QuantizedVector> full;
    full.reserve(keys.size());
    for (const ChunkedKey& k : keys) full.push_back(reconstruct(k, cfg));
    return exact_attention(q, full, values);
}

OracleResult exact_attention_real(std::span<const double> q,
                                  const std::vector<std::vector<double>>& keys,
                                  const std::vector<std::vector<double>>& values) {
    const int d = static_cast<int>(q.size());
    if (d == 0 || keys.empty() || keys.size() != values.size())
        throw InvalidInput("bad attention input shapes");
    const double rsqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<double> scores(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (static_cast<int>(keys[i].size()) != d)
            throw InvalidInput("key row has wrong dimension");
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += q[j] * keys[i][j];
        scores[i] = dot * rsqrt_d;
    }

    OracleResult r;
    r.scores = scores;
    r.probabilities = softmax_direct(scores);
    r.log_denominator = log_sum_exp(scores);
    r.output.assign(d, 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (static_cast<int>(values[i].size()) != d)
            throw InvalidInput("value row has wrong dimension");
        for (int j = 0; j < d; ++j)
            r.output[j] += r.probabilities[i] * values[i][j];
    }
    return r;
}

std::pair<std::int64_t, std::int64_t> brute_force_bounds(const QuantizedVector& q,
                                                         const ChunkedKey& key, int upto_b,
                                                         const ChunkConfig& cfg) {
    cfg.validate();
    const int d = q.dim();
    if (d == 0 || key.dim() != d)
        throw InvalidInput("query/key dimension mismatch");

    const int r = cfg.unknown_bits(upto_b);  // bounds-checked via partial_value below
    const std::vector<std::int32_t> partial = partial_value(key, cfg, upto_b);
    const long total_unknown = static_cast<long>(r) * d;
    if (total_unknown > 20)
        throw EnumerationTooLarge(std::to_string(total_unknown) +
                                  " unknown bits exceed the 20-bit enumeration budget");

    std::int64_t base = 0;
    for (int j = 0; j < d; ++j)
        base += static_cast<std::int64_t>(q.values[j]) * partial[j];

    const std::uint32_t per_elem = (r == 0) ? 1u : (1u << r);
    const std::uint64_t combos = std::uint64_t{1} << total_unknown;
    std::int64_t lo = std::numeric_limits<std::int64_t>::max();
    std::int64_t hi = std::numeric_limits<std::int64_t>::min();
    for (std::uint64_t mask = 0; mask < combos; ++mask) {
        std::int64_t dot = base;
        std::uint64_t m = mask;
        for (int j = 0; j < d; ++j) {
            dot += static_cast<std::int64_t>(q.values[j]) *
                   static_cast<std::int64_t>(m % per_elem);
            m /= per_elem;
        }
        lo = std::min(lo, dot);
        hi = std::max(hi, dot);
    }
    return {lo, hi};
}

}  // namespace tpkv
