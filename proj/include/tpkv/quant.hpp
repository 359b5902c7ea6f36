// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tpkv/errors.hpp"

namespace tpkv {

// Bit layout of a quantized operand: total_bits split into equal-width chunks,
// most significant chunk first. Chunk 0 holds the sign bit and is read as a
// signed field; every downstream chunk is unsigned. With the default 12/4
// layout a code c decomposes as c = c0*2^8 + c1*2^4 + c2.
struct ChunkConfig {
    int total_bits = 12;
    int chunk_bits = 4;

    int chunks_per_vec() const { return total_bits / chunk_bits; }

    // Positional weight (as a shift) of chunk b.
    int shift(int b) const { return chunk_bits * (chunks_per_vec() - 1 - b); }

    // r(b): number of still-unknown low bits per element once chunks 0..b landed.
    int unknown_bits(int b) const { return shift(b); }

    void validate() const;  // throws ConfigError

    bool operator==(const ChunkConfig&) const = default;
};

// Symmetric fixed-point vector: real value of element j is values[j] * scale.
struct QuantizedVector {
    std::vector<std::int32_t> values;
    double scale = 1.0;

    int dim() const { return static_cast<int>(values.size()); }
};

// A key vector split into bit-plane chunks. chunks[b][j] is the raw
// chunk_bits-wide field of element j at level b (sign handling is positional,
// see chunk_field_value).
struct ChunkedKey {
    std::vector<std::vector<std::uint8_t>> chunks;
    double scale = 1.0;

    int dim() const { return chunks.empty() ? 0 : static_cast<int>(chunks[0].size()); }
    int levels() const { return static_cast<int>(chunks.size()); }
};

// scale = max|v| / (2^(bits-1) - 1); 1.0 for an all-zero vector.
double symmetric_scale(std::span<const double> v, int bits);

// Round-to-nearest symmetric quantization with a per-vector scale.
QuantizedVector quantize(std::span<const double> v, int bits = 12);

// Same rounding, caller-supplied scale. Used to quantize a whole key matrix
// against one shared scale so integer scores are comparable across tokens.
QuantizedVector quantize_with_scale(std::span<const double> v, double scale, int bits = 12);

std::vector<double> dequantize(const QuantizedVector& q);

// Signed value of a raw chunk field. Chunk 0 is two's-complement; b > 0 unsigned.
std::int32_t chunk_field_value(std::uint8_t raw, int b, int chunk_bits);

// MSB-first bit-plane split of every element.
ChunkedKey to_chunks(const QuantizedVector& q, const ChunkConfig& cfg);

// Full code of one element rebuilt from all chunks.
std::int32_t from_chunks(const ChunkedKey& k, const ChunkConfig& cfg, int element);

// Whole vector rebuilt from all chunks; inverse of to_chunks.
QuantizedVector reconstruct(const ChunkedKey& k, const ChunkConfig& cfg);

// Per-element value using only chunks 0..upto_b (unknown low bits read as 0).
// The truncation error is in [0, 2^r(upto_b) - 1] for every element.
std::vector<std::int32_t> partial_value(const ChunkedKey& k, const ChunkConfig& cfg, int upto_b);

}  // namespace tpkv
