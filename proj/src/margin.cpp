// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#include "tpkv/margin.hpp"

#include <cmath>
#include <stdexcept>

namespace tpkv {

MarginTable build_margins(const QuantizedVector& q, const ChunkConfig& cfg, double key_scale) {
    cfg.validate();
    if (q.dim() == 0)
        throw InvalidInput("cannot build margins for an empty query");
    if (!(key_scale > 0.0) || !std::isfinite(key_scale))
        throw InvalidInput("key scale must be positive and finite");

    std::int64_t pos = 0, neg = 0;
    for (std::int32_t c : q.values) {
        if (c > 0) pos += c;
        else neg += c;
    }

    MarginTable t;
    t.scale_factor = q.scale * key_scale / std::sqrt(static_cast<double>(q.dim()));
    t.m_min.resize(cfg.chunks_per_vec());
    t.m_max.resize(cfg.chunks_per_vec());
    for (int b = 0; b < cfg.chunks_per_vec(); ++b) {
        const std::int64_t span = (std::int64_t{1} << cfg.unknown_bits(b)) - 1;
        t.m_max[b] = span * pos;
        t.m_min[b] = span * neg;
    }
    return t;
}

std::pair<std::int64_t, std::int64_t> score_bounds_int(std::int64_t partial_score, int b,
                                                       const MarginTable& m) {
    if (b < 0 || b >= m.levels())
        throw std::out_of_range("chunk level out of range");
    return {partial_score + m.m_min[b], partial_score + m.m_max[b]};
}

std::pair<double, double> score_bounds(std::int64_t partial_score, int b, const MarginTable& m) {
    auto [lo, hi] = score_bounds_int(partial_score, b, m);
    return {lo * m.scale_factor, hi * m.scale_factor};
}

}  // namespace tpkv
