// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tpkv/quant.hpp"

namespace tpkv {

// Precomputed per-level score margins. After chunks 0..b of a key have been
// combined into the integer partial score ps, the exact full-precision
// integer score is guaranteed to lie in [ps + m_min[b], ps + m_max[b]].
// The margins depend only on the query: each element still has r(b) unknown
// low bits worth at most 2^r(b) - 1, which push the score up through positive
// query elements and down through negative ones. m_min <= 0 <= m_max, the
// magnitudes shrink as b grows, and the last level is exactly (0, 0).
struct MarginTable {
    std::vector<std::int64_t> m_min;
    std::vector<std::int64_t> m_max;
    // Maps integer scores to real scores: q.scale * key_scale / sqrt(d_h).
    double scale_factor = 1.0;

    int levels() const { return static_cast<int>(m_min.size()); }
};

MarginTable build_margins(const QuantizedVector& q, const ChunkConfig& cfg, double key_scale);

// Integer-domain bounds on the exact score; exact (attained by some completion).
std::pair<std::int64_t, std::int64_t> score_bounds_int(std::int64_t partial_score, int b,
                                                       const MarginTable& m);

// Same bounds in real units: (lo, hi) * scale_factor.
std::pair<double, double> score_bounds(std::int64_t partial_score, int b, const MarginTable& m);

}  // namespace tpkv
