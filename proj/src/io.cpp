// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#include "tpkv/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

namespace tpkv {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

// Strict cursor over a fully loaded file; any short read is a truncation.
struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw FormatError("trace file truncated");
    }
    std::uint16_t u16() {
        need(2);
        const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
        pos += 2;
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    std::uint32_t u32() {
        need(4);
        const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
        pos += 4;
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::vector<float> read_row(Reader& r, std::uint32_t d) {
    std::vector<float> row(d);
    for (auto& x : row) {
        x = r.f32();
        if (!std::isfinite(x)) throw FormatError("non-finite tensor element");
    }
    return row;
}

// Box-Muller over explicit 64-bit draws; std::normal_distribution is not
// pinned by the standard, this is, so traces are identical everywhere.
struct Gaussian {
    std::mt19937_64 rng;
    bool have_spare = false;
    double spare = 0.0;

    explicit Gaussian(std::uint64_t seed) : rng(seed) {}

    double uniform01() {
        return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
    }
    double next() {
        constexpr double two_pi = 6.283185307179586476925287;
        if (have_spare) {
            have_spare = false;
            return spare;
        }
        const double u = uniform01();
        const double v = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u));
        spare = r * std::sin(two_pi * v);
        have_spare = true;
        return r * std::cos(two_pi * v);
    }
};

std::vector<float> gauss_row(Gaussian& g, int d, double sd) {
    std::vector<float> row(d);
    for (auto& x : row) x = static_cast<float>(sd * g.next());
    return row;
}

// Key whose exact real score against q is `target` (q . k / sqrt(d)).
std::vector<float> aligned_key(const std::vector<float>& q, double target) {
    double qq = 0.0;
    for (float x : q) qq += static_cast<double>(x) * x;
    const double c = target * std::sqrt(static_cast<double>(q.size())) / qq;
    std::vector<float> k(q.size());
    for (std::size_t j = 0; j < q.size(); ++j) k[j] = static_cast<float>(c * q[j]);
    return k;
}

// Nonzero query with a healthy norm so aligned_key stays well conditioned.
std::vector<float> query_row(Gaussian& g, int d) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        std::vector<float> q = gauss_row(g, d, 1.0);
        double qq = 0.0;
        for (float x : q) qq += static_cast<double>(x) * x;
        if (qq > 1e-3) return q;
    }
    throw ImpossibleState("query draw degenerate");
}

double parse_number(const std::string& key, const std::string& text) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        throw ConfigError("bad value for '" + key + "': " + text);
    }
    if (used != text.size() || !std::isfinite(v))
        throw ConfigError("bad value for '" + key + "': " + text);
    return v;
}

}  // namespace

void AttentionTrace::validate() const {
    if (d_h == 0 || n_tokens == 0) throw InvalidInput("trace must have n >= 1 and d_h >= 1");
    if (q.size() != d_h) throw InvalidInput("query length != d_h");
    if (keys.size() != n_tokens || values.size() != n_tokens)
        throw InvalidInput("key/value row count != n_tokens");
    auto check = [&](const std::vector<float>& row) {
        if (row.size() != d_h) throw InvalidInput("tensor row length != d_h");
        for (float x : row)
            if (!std::isfinite(x)) throw InvalidInput("non-finite tensor element");
    };
    check(q);
    for (const auto& row : keys) check(row);
    for (const auto& row : values) check(row);
}

AttentionTrace read_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (!in.good() && !in.eof()) throw IoError("read failure on " + path);
    const std::string buf = ss.str();

    Reader r{buf};
    if (r.bytes(4) != std::string(kTraceMagic, 4)) throw FormatError("bad magic");
    const std::uint16_t version = r.u16();
    if (version != kTraceVersion)
        throw FormatError("unsupported version " + std::to_string(version));
    AttentionTrace t;
    t.d_h = r.u32();
    t.n_tokens = r.u32();
    if (t.d_h == 0 || t.d_h > (1u << 20)) throw FormatError("implausible d_h");
    if (t.n_tokens == 0 || t.n_tokens > (1u << 24)) throw FormatError("implausible n_tokens");

    t.q = read_row(r, t.d_h);
    t.keys.reserve(t.n_tokens);
    t.values.reserve(t.n_tokens);
    for (std::uint32_t i = 0; i < t.n_tokens; ++i) t.keys.push_back(read_row(r, t.d_h));
    for (std::uint32_t i = 0; i < t.n_tokens; ++i) t.values.push_back(read_row(r, t.d_h));

    const std::uint32_t meta_len = r.u32();
    t.metadata = r.bytes(meta_len);
    if (meta_len > 0) {
        const auto parsed = nlohmann::json::parse(t.metadata, nullptr, false);
        if (parsed.is_discarded()) throw FormatError("metadata is not valid JSON");
    }
    if (r.pos != buf.size()) throw FormatError("trailing bytes after metadata");
    return t;
}

void write_trace(const AttentionTrace& trace, const std::string& path) {
    trace.validate();
    if (!trace.metadata.empty()) {
        const auto parsed = nlohmann::json::parse(trace.metadata, nullptr, false);
        if (parsed.is_discarded()) throw InvalidInput("metadata is not valid JSON");
    }
    std::string out;
    out.reserve(16 + 4ull * trace.d_h * (1 + 2ull * trace.n_tokens) + trace.metadata.size());
    out.append(kTraceMagic, 4);
    put_u16(out, kTraceVersion);
    put_u32(out, trace.d_h);
    put_u32(out, trace.n_tokens);
    for (float x : trace.q) put_f32(out, x);
    for (const auto& row : trace.keys)
        for (float x : row) put_f32(out, x);
    for (const auto& row : trace.values)
        for (float x : row) put_f32(out, x);
    put_u32(out, static_cast<std::uint32_t>(trace.metadata.size()));
    out += trace.metadata;

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw IoError("write failure on " + path);
}

const char* distribution_name(Distribution d) {
    switch (d) {
        case Distribution::gaussian: return "gaussian";
        case Distribution::peaked: return "peaked";
        case Distribution::locality: return "locality";
    }
    return "unknown";
}

void SyntheticSpec::validate() const {
    if (n < 1) throw ConfigError("synthetic n must be >= 1");
    if (d_h < 1) throw ConfigError("synthetic d must be >= 1");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be >= 0");
    if (k_dominant < 0 || k_dominant > n || k_dominant != std::floor(k_dominant))
        throw ConfigError("k must be an integer in [0, n]");
    if (!(gap >= 0.0) || !std::isfinite(gap)) throw ConfigError("gap must be >= 0");
    if (!(decay_rate >= 0.0) || !std::isfinite(decay_rate))
        throw ConfigError("decay must be >= 0");
    if (!std::isfinite(first_token_boost)) throw ConfigError("boost must be finite");
}

SyntheticSpec parse_synthetic_spec(const std::string& text) {
    const std::size_t colon = text.find(':');
    const std::string name = text.substr(0, colon);
    SyntheticSpec spec;
    if (name == "gaussian") spec.distribution = Distribution::gaussian;
    else if (name == "peaked") spec.distribution = Distribution::peaked;
    else if (name == "locality") spec.distribution = Distribution::locality;
    else throw ConfigError("unknown distribution '" + name + "'");

    std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
    std::istringstream ss(rest);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const std::size_t eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + item + "'");
        const std::string key = item.substr(0, eq);
        const std::string val = item.substr(eq + 1);
        const double num = parse_number(key, val);
        if (key == "n") spec.n = static_cast<int>(num);
        else if (key == "d") spec.d_h = static_cast<int>(num);
        else if (key == "seed") spec.seed = static_cast<std::uint64_t>(num);
        else if (key == "sigma") spec.sigma = num;
        else if (key == "k") spec.k_dominant = num;
        else if (key == "gap") spec.gap = num;
        else if (key == "decay") spec.decay_rate = num;
        else if (key == "boost") spec.first_token_boost = num;
        else throw ConfigError("unknown spec key '" + key + "'");
    }
    spec.validate();
    return spec;
}

std::string format_synthetic_spec(const SyntheticSpec& spec) {
    std::ostringstream ss;
    ss << distribution_name(spec.distribution) << ":n=" << spec.n << ",d=" << spec.d_h
       << ",seed=" << spec.seed;
    switch (spec.distribution) {
        case Distribution::gaussian: ss << ",sigma=" << spec.sigma; break;
        case Distribution::peaked: ss << ",k=" << spec.k_dominant << ",gap=" << spec.gap; break;
        case Distribution::locality:
            ss << ",decay=" << spec.decay_rate << ",boost=" << spec.first_token_boost;
            break;
    }
    return ss.str();
}

AttentionTrace generate(const SyntheticSpec& spec) {
    spec.validate();
    Gaussian g(spec.seed);
    AttentionTrace t;
    t.d_h = static_cast<std::uint32_t>(spec.d_h);
    t.n_tokens = static_cast<std::uint32_t>(spec.n);
    t.q = query_row(g, spec.d_h);
    t.keys.reserve(spec.n);
    t.values.reserve(spec.n);

    switch (spec.distribution) {
        case Distribution::gaussian:
            for (int i = 0; i < spec.n; ++i) t.keys.push_back(gauss_row(g, spec.d_h, spec.sigma));
            break;
        case Distribution::peaked: {
            // Dominant keys sit gap above the rest; scores are exact targets.
            const int k = static_cast<int>(spec.k_dominant);
            for (int i = 0; i < spec.n; ++i)
                t.keys.push_back(aligned_key(t.q, i < k ? spec.gap / 2 : -spec.gap / 2));
            break;
        }
        case Distribution::locality:
            for (int i = 0; i < spec.n; ++i) {
                const double target =
                    i == 0 ? spec.first_token_boost
                           : 4.0 * std::exp(-spec.decay_rate * (spec.n - 1 - i));
                t.keys.push_back(aligned_key(t.q, target));
            }
            break;
    }
    for (int i = 0; i < spec.n; ++i) t.values.push_back(gauss_row(g, spec.d_h, 1.0));

    nlohmann::json meta;
    meta["generator"] = format_synthetic_spec(spec);
    t.metadata = meta.dump();
    t.validate();
    return t;
}

namespace {

void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* a) { return key == a; }) == allowed.end())
            throw ConfigError("unknown config key '" + where + key + "'");
    }
}

template <typename T>
void load_field(const nlohmann::json& obj, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

}  // namespace

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    const auto doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        throw ConfigError("config file is not a JSON object: " + path);

    RunConfig rc;
    reject_unknown_keys(doc, {"thr", "order", "chunks", "chunk_bits", "renormalize_output",
                              "mem", "sim", "synthetic"},
                        "");
    load_field(doc, "thr", rc.prune.thr);
    if (doc.contains("order")) {
        std::string order;
        load_field(doc, "order", order);
        if (order == "locality") rc.prune.order_policy = OrderPolicy::locality;
        else if (order == "sequential") rc.prune.order_policy = OrderPolicy::sequential;
        else throw ConfigError("order must be locality or sequential");
    }
    int chunks = rc.prune.chunking.chunks_per_vec();
    int chunk_bits = rc.prune.chunking.chunk_bits;
    load_field(doc, "chunks", chunks);
    load_field(doc, "chunk_bits", chunk_bits);
    rc.prune.chunking.chunk_bits = chunk_bits;
    rc.prune.chunking.total_bits = chunks * chunk_bits;
    load_field(doc, "renormalize_output", rc.prune.renormalize_output);

    if (doc.contains("mem")) {
        const auto& m = doc.at("mem");
        if (!m.is_object()) throw ConfigError("mem must be an object");
        reject_unknown_keys(m, {"latency_cycles", "bytes_per_cycle", "channels", "max_inflight"},
                            "mem.");
        load_field(m, "latency_cycles", rc.mem.latency_cycles);
        load_field(m, "bytes_per_cycle", rc.mem.bytes_per_cycle);
        load_field(m, "channels", rc.mem.channels);
        load_field(m, "max_inflight", rc.mem.max_inflight);
    }
    if (doc.contains("sim")) {
        const auto& s = doc.at("sim");
        if (!s.is_object()) throw ConfigError("sim must be an object");
        reject_unknown_keys(
            s, {"lanes", "scoreboard_capacity", "pe_width", "jitter_cycles", "jitter_seed"},
            "sim.");
        load_field(s, "lanes", rc.sim.lanes);
        load_field(s, "scoreboard_capacity", rc.sim.scoreboard_capacity);
        load_field(s, "pe_width", rc.sim.pe_width);
        load_field(s, "jitter_cycles", rc.sim.jitter_cycles);
        load_field(s, "jitter_seed", rc.sim.jitter_seed);
    }
    if (doc.contains("synthetic")) {
        std::string spec;
        load_field(doc, "synthetic", spec);
        rc.synthetic = parse_synthetic_spec(spec);
    }

    rc.prune.validate();
    rc.mem.validate();
    rc.sim.validate();
    return rc;
}

}  // namespace tpkv
