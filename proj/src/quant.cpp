// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#include "tpkv/quant.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tpkv {

void ChunkConfig::validate() const {
    if (total_bits < 2 || total_bits > 24)
        throw ConfigError("total_bits must be in [2, 24], got " + std::to_string(total_bits));
    if (chunk_bits < 1 || chunk_bits > 8)
        throw ConfigError("chunk_bits must be in [1, 8], got " + std::to_string(chunk_bits));
    if (total_bits % chunk_bits != 0)
        throw ConfigError("chunk_bits (" + std::to_string(chunk_bits) +
                          ") must divide total_bits (" + std::to_string(total_bits) + ")");
}

namespace {

void check_bits(int bits) {
    if (bits < 2 || bits > 24)
        throw ConfigError("bits must be in [2, 24], got " + std::to_string(bits));
}

void check_finite(std::span<const double> v) {
    if (v.empty())
        throw InvalidInput("cannot quantize an empty vector");
    for (double x : v)
        if (!std::isfinite(x))
            throw InvalidInput("non-finite value in quantizer input");
}

}  // namespace

double symmetric_scale(std::span<const double> v, int bits) {
    check_bits(bits);
    check_finite(v);
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    if (m == 0.0) return 1.0;
    return m / static_cast<double>((1 << (bits - 1)) - 1);
}

QuantizedVector quantize(std::span<const double> v, int bits) {
    return quantize_with_scale(v, symmetric_scale(v, bits), bits);
}

QuantizedVector quantize_with_scale(std::span<const double> v, double scale, int bits) {
    check_bits(bits);
    check_finite(v);
    if (!(scale > 0.0) || !std::isfinite(scale))
        throw InvalidInput("quantizer scale must be positive and finite");
    const std::int64_t hi = (std::int64_t{1} << (bits - 1)) - 1;
    const std::int64_t lo = -(std::int64_t{1} << (bits - 1));
    QuantizedVector out;
    out.scale = scale;
    out.values.reserve(v.size());
    for (double x : v) {
        std::int64_t c = std::llround(x / scale);
        c = std::clamp(c, lo, hi);
        out.values.push_back(static_cast<std::int32_t>(c));
    }
    return out;
}

std::vector<double> dequantize(const QuantizedVector& q) {
    std::vector<double> out(q.values.size());
    for (std::size_t j = 0; j < q.values.size(); ++j)
        out[j] = q.values[j] * q.scale;
    return out;
}

std::int32_t chunk_field_value(std::uint8_t raw, int b, int chunk_bits) {
    const std::int32_t span = 1 << chunk_bits;
    if (raw >= span)
        throw InvalidInput("chunk field wider than chunk_bits");
    if (b == 0 && raw >= (span >> 1))
        return static_cast<std::int32_t>(raw) - span;  // sign lives in chunk 0
    return raw;
}

ChunkedKey to_chunks(const QuantizedVector& q, const ChunkConfig& cfg) {
    cfg.validate();
    const std::int64_t hi = (std::int64_t{1} << (cfg.total_bits - 1)) - 1;
    const std::int64_t lo = -(std::int64_t{1} << (cfg.total_bits - 1));
    const std::uint32_t code_mask = (cfg.total_bits == 32) ? ~0u
                                  : ((1u << cfg.total_bits) - 1u);
    const std::uint32_t field_mask = (1u << cfg.chunk_bits) - 1u;

    ChunkedKey out;
    out.scale = q.scale;
    out.chunks.assign(cfg.chunks_per_vec(), std::vector<std::uint8_t>(q.values.size()));
    for (std::size_t j = 0; j < q.values.size(); ++j) {
        const std::int32_t c = q.values[j];
        if (c < lo || c > hi)
            throw InvalidInput("code " + std::to_string(c) + " does not fit in " +
                               std::to_string(cfg.total_bits) + " bits");
        const std::uint32_t u = static_cast<std::uint32_t>(c) & code_mask;
        for (int b = 0; b < cfg.chunks_per_vec(); ++b)
            out.chunks[b][j] = static_cast<std::uint8_t>((u >> cfg.shift(b)) & field_mask);
    }
    return out;
}

std::int32_t from_chunks(const ChunkedKey& k, const ChunkConfig& cfg, int element) {
    cfg.validate();
    if (element < 0 || element >= k.dim())
        throw std::out_of_range("element index out of range");
    if (k.levels() != cfg.chunks_per_vec())
        throw InvalidInput("chunk count does not match configuration");
    std::int32_t v = 0;
    for (int b = 0; b < cfg.chunks_per_vec(); ++b)
        v += chunk_field_value(k.chunks[b][element], b, cfg.chunk_bits) << cfg.shift(b);
    return v;
}

QuantizedVector reconstruct(const ChunkedKey& k, const ChunkConfig& cfg) {
    QuantizedVector out;
    out.scale = k.scale;
    out.values.resize(k.dim());
    for (int j = 0; j < k.dim(); ++j)
        out.values[j] = from_chunks(k, cfg, j);
    return out;
}

std::vector<std::int32_t> partial_value(const ChunkedKey& k, const ChunkConfig& cfg, int upto_b) {
    cfg.validate();
    if (k.levels() != cfg.chunks_per_vec())
        throw InvalidInput("chunk count does not match configuration");
    if (upto_b < 0 || upto_b >= cfg.chunks_per_vec())
        throw std::out_of_range("chunk level out of range");
    std::vector<std::int32_t> out(k.dim(), 0);
    for (int b = 0; b <= upto_b; ++b)
        for (int j = 0; j < k.dim(); ++j)
            out[j] += chunk_field_value(k.chunks[b][j], b, cfg.chunk_bits) << cfg.shift(b);
    return out;
}

}  // namespace tpkv
