#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "terngrad/rng.hpp"
#include "terngrad/tensor.hpp"

namespace terngrad {

// 2-bit code map: 00 = 0, 01 = +1, 10 = -1, 11 = invalid. Element k occupies
// bits 2(k mod 4)..2(k mod 4)+1 of byte k/4.
constexpr std::uint8_t kCodeZero = 0b00;
constexpr std::uint8_t kCodePlus = 0b01;
constexpr std::uint8_t kCodeMinus = 0b10;

struct CodecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One bucket's encoding: scaler plus packed ternary codes.
struct TernaryBlock {
    std::string name;
    std::uint32_t n = 0;
    float s = 0.0f;
    std::vector<std::uint8_t> codes;  // ceil(n/4) bytes

    int code_at(std::size_t k) const {
        const std::uint8_t c = (codes[k / 4] >> (2 * (k % 4))) & 0b11;
        switch (c) {
            case kCodeZero: return 0;
            case kCodePlus: return +1;
            case kCodeMinus: return -1;
            default:
                throw CodecError("corrupt ternary code 11 in block " + name +
                                 " at element " + std::to_string(k));
        }
    }

    void set_code(std::size_t k, int v) {
        const std::uint8_t c = v == 0 ? kCodeZero : (v > 0 ? kCodePlus : kCodeMinus);
        codes[k / 4] = static_cast<std::uint8_t>(
            (codes[k / 4] & ~(0b11u << (2 * (k % 4)))) | (c << (2 * (k % 4))));
    }

    double zero_fraction() const {
        if (n == 0) return 0.0;
        std::size_t zeros = 0;
        for (std::size_t k = 0; k < n; ++k)
            if (code_at(k) == 0) ++zeros;
        return static_cast<double>(zeros) / static_cast<double>(n);
    }
};

struct PassthroughBlock {
    std::string name;
    std::vector<float> values;
};

using GradBlock = std::variant<TernaryBlock, PassthroughBlock>;

// One worker's push for one iteration. Blocks follow canonical parameter
// order; a multi-bucket tensor contributes one contiguous run of blocks.
struct EncodedGradient {
    std::uint64_t iteration = 0;
    std::uint16_t worker = 0;
    std::vector<GradBlock> blocks;
};

enum class Bucketing { PerTensor, Global, FixedSize };

struct CodecConfig {
    float clip_factor = 2.5f;
    bool clipping_enabled = true;
    Bucketing bucketing = Bucketing::PerTensor;
    std::size_t bucket_size = 0;  // FixedSize only, >= 1
    bool scaler_sharing = true;
    bool float_mode = false;  // passthrough everything: the fp32 baseline
    std::set<std::string> passthrough;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(clip_factor > 0.0f))
            throw std::invalid_argument("codec: clip factor must be positive");
        if (bucketing == Bucketing::FixedSize && bucket_size < 1)
            throw std::invalid_argument("codec: fixed-size bucket needs k >= 1");
    }
};

// --- clipping -------------------------------------------------------------

// Population standard deviation about the mean, in double.
inline double stddev(std::span<const float> v) {
    if (v.size() < 2) return 0.0;
    double mean = 0.0;
    for (float x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (float x : v) {
        const double d = x - mean;
        var += d * d;
    }
    return std::sqrt(var / static_cast<double>(v.size()));
}

// Limit each element to c standard deviations of its tensor. Buckets with
// fewer than 2 elements pass through unchanged so that bucket size 1
// degenerates to floating gradients.
inline GradTensor clip(const GradTensor& g, float c) {
    if (g.size() < 2) return g;
    const float bound = static_cast<float>(c * stddev(g.values));
    GradTensor out = g;
    for (float& x : out.values)
        if (std::abs(x) > bound) x = std::copysign(bound, x);
    return out;
}

// --- scaler ---------------------------------------------------------------

inline float scaler(std::span<const float> v) {
    float m = 0.0f;
    for (float x : v) m = std::max(m, std::abs(x));
    return m;
}

inline float scaler(const GradTensor& g) { return scaler(std::span<const float>(g.values)); }

inline float share_scalers(std::span<const float> locals) {
    if (locals.empty()) throw CodecError("share_scalers: empty scaler list");
    float m = 0.0f;
    for (float s : locals) m = std::max(m, s);
    return m;
}

// --- ternarize / decode ---------------------------------------------------

// Stochastic ternarization of one bucket: keep sign(g_k) with probability
// |g_k|/s, else 0. rng_base offsets the element index into the stream so all
// buckets of one tensor draw from disjoint counters.
inline TernaryBlock ternarize(std::string name, std::span<const float> g, float s,
                              const RngStream& rng, std::uint64_t rng_base = 0) {
    TernaryBlock blk;
    blk.name = std::move(name);
    blk.n = static_cast<std::uint32_t>(g.size());
    blk.s = s;
    blk.codes.assign((g.size() + 3) / 4, 0);
    if (s == 0.0f) {
        for (float x : g)
            if (x != 0.0f)
                throw CodecError("ternarize: s=0 but gradient has nonzero element");
        return blk;
    }
    for (std::size_t k = 0; k < g.size(); ++k) {
        const float mag = std::abs(g[k]);
        if (mag > s)
            throw CodecError("ternarize: scaler " + std::to_string(s) +
                             " below max |g| in " + blk.name);
        const float p = mag / s;
        if (rng.uniform(rng_base + k) < p)
            blk.set_code(k, g[k] > 0.0f ? +1 : -1);
    }
    return blk;
}

inline TernaryBlock ternarize(const GradTensor& g, float s, const RngStream& rng) {
    return ternarize(g.name, std::span<const float>(g.values), s, rng);
}

inline GradTensor decode(const TernaryBlock& blk) {
    GradTensor out(blk.name, {blk.n});
    for (std::size_t k = 0; k < blk.n; ++k)
        out.values[k] = blk.s * static_cast<float>(blk.code_at(k));
    return out;
}

// --- encode / average -----------------------------------------------------

struct EncodeResult {
    EncodedGradient encoded;
    std::vector<float> local_scalers;  // per bucket, canonical order
};

// Full per-worker encode path: clip -> bucket scalers -> ternarize; tensors
// named in cfg.passthrough are copied verbatim. Deterministic for fixed
// (cfg.seed, t, worker).
inline EncodeResult encode_step(const std::vector<GradTensor>& grads,
                                const CodecConfig& cfg, std::uint64_t t,
                                std::uint16_t worker) {
    cfg.validate();
    EncodeResult res;
    res.encoded.iteration = t;
    res.encoded.worker = worker;

    std::vector<GradTensor> work;
    work.reserve(grads.size());
    for (const auto& g : grads) {
        if (!g.all_finite()) throw CodecError("encode_step: non-finite gradient " + g.name);
        if (cfg.passthrough.contains(g.name) || !cfg.clipping_enabled)
            work.push_back(g);
        else
            work.push_back(clip(g, cfg.clip_factor));
    }

    float global_s = 0.0f;
    if (cfg.bucketing == Bucketing::Global) {
        for (const auto& g : work)
            if (!cfg.passthrough.contains(g.name)) global_s = std::max(global_s, scaler(g));
    }

    for (const auto& g : work) {
        if (cfg.passthrough.contains(g.name)) {
            res.encoded.blocks.push_back(PassthroughBlock{g.name, g.values});
            continue;
        }
        RngStream rng(cfg.seed, t, g.name, worker);
        const std::size_t bucket =
            cfg.bucketing == Bucketing::FixedSize ? cfg.bucket_size : g.size();
        for (std::size_t off = 0; off < g.size(); off += bucket) {
            const std::size_t len = std::min(bucket, g.size() - off);
            std::span<const float> part(&g.values[off], len);
            const float s = cfg.bucketing == Bucketing::Global ? global_s : scaler(part);
            res.local_scalers.push_back(s);
            res.encoded.blocks.push_back(ternarize(g.name, part, s, rng, off));
        }
        if (g.size() == 0) {
            res.local_scalers.push_back(0.0f);
            res.encoded.blocks.push_back(TernaryBlock{g.name, 0, 0.0f, {}});
        }
    }
    return res;
}

// Elementwise average of N workers' encodings. With scaler sharing, every
// block position adopts s = max over workers and the sum stays integer, so
// each output element takes one of at most 2N+1 values. Without sharing,
// decoded floats are summed in double in worker order and divided by N.
inline std::vector<GradTensor> average(const std::vector<EncodedGradient>& encoded,
                                       std::size_t N, bool scaler_sharing) {
    if (encoded.size() != N || N == 0)
        throw CodecError("average: expected " + std::to_string(N) + " messages, got " +
                         std::to_string(encoded.size()));
    const std::size_t nblocks = encoded[0].blocks.size();
    for (const auto& e : encoded) {
        if (e.iteration != encoded[0].iteration)
            throw CodecError("average: mismatched iterations");
        if (e.blocks.size() != nblocks)
            throw CodecError("average: mismatched block structure");
    }

    std::vector<GradTensor> out;  // merged by name, canonical order
    auto append = [&](const std::string& name, std::span<const float> vals) {
        if (out.empty() || out.back().name != name)
            out.emplace_back(name, std::vector<std::size_t>{0});
        auto& t = out.back();
        t.values.insert(t.values.end(), vals.begin(), vals.end());
        t.shape = {t.values.size()};
    };

    const float invN = 1.0f / static_cast<float>(N);
    for (std::size_t b = 0; b < nblocks; ++b) {
        if (std::holds_alternative<PassthroughBlock>(encoded[0].blocks[b])) {
            const auto& first = std::get<PassthroughBlock>(encoded[0].blocks[b]);
            std::vector<float> avg(first.values.size());
            for (std::size_t k = 0; k < avg.size(); ++k) {
                double sum = 0.0;
                for (const auto& e : encoded)
                    sum += std::get<PassthroughBlock>(e.blocks[b]).values[k];
                avg[k] = static_cast<float>(sum / static_cast<double>(N));
            }
            append(first.name, avg);
            continue;
        }
        const auto& first = std::get<TernaryBlock>(encoded[0].blocks[b]);
        for (const auto& e : encoded) {
            const auto& blk = std::get<TernaryBlock>(e.blocks[b]);
            if (blk.name != first.name || blk.n != first.n)
                throw CodecError("average: block structure mismatch at " + first.name);
        }
        std::vector<float> avg(first.n);
        if (scaler_sharing) {
            float s = 0.0f;
            for (const auto& e : encoded)
                s = std::max(s, std::get<TernaryBlock>(e.blocks[b]).s);
            for (std::size_t k = 0; k < first.n; ++k) {
                int sum = 0;
                for (const auto& e : encoded)
                    sum += std::get<TernaryBlock>(e.blocks[b]).code_at(k);
                avg[k] = s * static_cast<float>(sum) * invN;
            }
        } else {
            for (std::size_t k = 0; k < first.n; ++k) {
                double sum = 0.0;
                for (const auto& e : encoded) {
                    const auto& blk = std::get<TernaryBlock>(e.blocks[b]);
                    sum += static_cast<double>(blk.s) * blk.code_at(k);
                }
                avg[k] = static_cast<float>(sum / static_cast<double>(N));
            }
        }
        append(first.name, avg);
    }
    return out;
}

// --- serialization & accounting -------------------------------------------

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_f32(std::vector<std::uint8_t>& b, float v) {
    std::uint32_t u;
    static_assert(sizeof u == sizeof v);
    std::memcpy(&u, &v, 4);
    put_u32(b, u);
}

struct Reader {
    std::span<const std::uint8_t> buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw CodecError("deserialize: truncated at byte " + std::to_string(pos));
    }
    std::uint8_t u8() { need(1); return buf[pos++]; }
    std::uint16_t u16() {
        need(2);
        const std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        const std::uint32_t u = u32();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(&buf[pos]), n);
        pos += n;
        return s;
    }
    std::vector<std::uint8_t> bytes(std::size_t n) {
        need(n);
        std::vector<std::uint8_t> v(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                    buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
        pos += n;
        return v;
    }
};

inline void put_name(std::vector<std::uint8_t>& b, const std::string& name) {
    if (name.size() > 0xFFFF) throw CodecError("tensor name too long");
    put_u16(b, static_cast<std::uint16_t>(name.size()));
    b.insert(b.end(), name.begin(), name.end());
}

}  // namespace detail

constexpr std::uint8_t kBlockTernary = 1;
constexpr std::uint8_t kBlockPassthrough = 2;

inline void serialize_block(std::vector<std::uint8_t>& out, const GradBlock& block) {
    if (const auto* t = std::get_if<TernaryBlock>(&block)) {
        out.push_back(kBlockTernary);
        detail::put_name(out, t->name);
        detail::put_u32(out, t->n);
        detail::put_f32(out, t->s);
        out.insert(out.end(), t->codes.begin(), t->codes.end());
    } else {
        const auto& p = std::get<PassthroughBlock>(block);
        out.push_back(kBlockPassthrough);
        detail::put_name(out, p.name);
        detail::put_u32(out, static_cast<std::uint32_t>(p.values.size()));
        for (float v : p.values) detail::put_f32(out, v);
    }
}

inline GradBlock deserialize_block(detail::Reader& r) {
    const std::uint8_t tag = r.u8();
    const std::string name = r.str(r.u16());
    const std::uint32_t n = r.u32();
    if (tag == kBlockTernary) {
        TernaryBlock t;
        t.name = name;
        t.n = n;
        t.s = r.f32();
        t.codes = r.bytes((n + 3) / 4);
        return t;
    }
    if (tag == kBlockPassthrough) {
        PassthroughBlock p;
        p.name = name;
        p.values.resize(n);
        for (auto& v : p.values) v = r.f32();
        return p;
    }
    throw CodecError("deserialize: unknown block tag " + std::to_string(tag));
}

inline std::vector<std::uint8_t> serialize_encoded(const EncodedGradient& e) {
    std::vector<std::uint8_t> out;
    detail::put_u16(out, static_cast<std::uint16_t>(e.blocks.size()));
    for (const auto& b : e.blocks) serialize_block(out, b);
    return out;
}

inline EncodedGradient deserialize_encoded(std::span<const std::uint8_t> buf,
                                           std::uint64_t iteration,
                                           std::uint16_t worker) {
    detail::Reader r{buf};
    EncodedGradient e;
    e.iteration = iteration;
    e.worker = worker;
    const std::size_t count = r.u16();
    e.blocks.reserve(count);
    for (std::size_t i = 0; i < count; ++i) e.blocks.push_back(deserialize_block(r));
    if (r.pos != buf.size()) throw CodecError("deserialize: trailing bytes");
    return e;
}

// Exact on-wire payload length of one push.
inline std::size_t wire_size(const EncodedGradient& e) {
    std::size_t n = 2;  // block count
    for (const auto& b : e.blocks) {
        if (const auto* t = std::get_if<TernaryBlock>(&b))
            n += 1 + 2 + t->name.size() + 4 + 4 + t->codes.size();
        else {
            const auto& p = std::get<PassthroughBlock>(b);
            n += 1 + 2 + p.name.size() + 4 + 4 * p.values.size();
        }
    }
    return n;
}

// Bytes the same tensors would occupy as raw fp32 blocks.
inline std::size_t float_wire_size(const EncodedGradient& e) {
    std::size_t n = 2;
    for (const auto& b : e.blocks) {
        const auto& name = std::holds_alternative<TernaryBlock>(b)
                               ? std::get<TernaryBlock>(b).name
                               : std::get<PassthroughBlock>(b).name;
        const std::size_t count = std::holds_alternative<TernaryBlock>(b)
                                      ? std::get<TernaryBlock>(b).n
                                      : std::get<PassthroughBlock>(b).values.size();
        n += 1 + 2 + name.size() + 4 + 4 * count;
    }
    return n;
}

// --- histogram ------------------------------------------------------------

struct HistogramBin {
    double edge;  // left edge
    std::size_t count;
};

// Equal-width bins over [min, max]; max lands in the last bin.
inline std::vector<HistogramBin> histogram(std::span<const float> v, std::size_t bins) {
    if (bins < 1) throw std::invalid_argument("histogram: bins must be >= 1");
    std::vector<HistogramBin> out(bins);
    if (v.empty()) {
        for (std::size_t b = 0; b < bins; ++b) out[b] = {0.0, 0};
        return out;
    }
    double lo = v[0], hi = v[0];
    for (float x : v) {
        lo = std::min(lo, static_cast<double>(x));
        hi = std::max(hi, static_cast<double>(x));
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b) out[b] = {lo + width * static_cast<double>(b), 0};
    for (float x : v) {
        std::size_t b = width > 0.0
                            ? static_cast<std::size_t>((static_cast<double>(x) - lo) / width)
                            : 0;
        if (b >= bins) b = bins - 1;
        ++out[b].count;
    }
    return out;
}

inline std::vector<HistogramBin> histogram(const GradTensor& g, std::size_t bins) {
    return histogram(std::span<const float>(g.values), bins);
}

}  // namespace terngrad
