#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "terngrad/codec.hpp"

namespace terngrad {

struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr std::uint16_t kWireMagic = 0x5447;  // "TG"
constexpr std::uint8_t kWireVersion = 1;

enum class MsgType : std::uint8_t {
    Push = 1,
    Pull = 2,
    Register = 3,
    Shutdown = 4,
};

// header: magic u16 | version u8 | type u8 | iteration u64 | worker u16 |
// payload-len u32, little-endian, 18 bytes
constexpr std::size_t kHeaderSize = 18;

struct Message {
    MsgType type = MsgType::Push;
    std::uint64_t iteration = 0;
    std::uint16_t worker = 0;
    std::vector<std::uint8_t> payload;

    std::size_t framed_size() const { return kHeaderSize + payload.size(); }
};

inline std::vector<std::uint8_t> frame(const Message& m) {
    std::vector<std::uint8_t> out;
    out.reserve(m.framed_size());
    detail::put_u16(out, kWireMagic);
    out.push_back(kWireVersion);
    out.push_back(static_cast<std::uint8_t>(m.type));
    detail::put_u64(out, m.iteration);
    detail::put_u16(out, m.worker);
    detail::put_u32(out, static_cast<std::uint32_t>(m.payload.size()));
    out.insert(out.end(), m.payload.begin(), m.payload.end());
    return out;
}

// Parses one frame; buf must hold exactly header + payload.
inline Message unframe(std::span<const std::uint8_t> buf) {
    detail::Reader r{buf};
    if (r.u16() != kWireMagic) throw ProtocolError("bad magic");
    if (r.u8() != kWireVersion) throw ProtocolError("bad version");
    const std::uint8_t type = r.u8();
    if (type < 1 || type > 4) throw ProtocolError("bad message type " + std::to_string(type));
    Message m;
    m.type = static_cast<MsgType>(type);
    m.iteration = r.u64();
    m.worker = r.u16();
    const std::uint32_t len = r.u32();
    if (buf.size() - kHeaderSize != len)
        throw ProtocolError("payload length mismatch: header says " + std::to_string(len) +
                            ", got " + std::to_string(buf.size() - kHeaderSize));
    m.payload = r.bytes(len);
    return m;
}

// --- pull payload ----------------------------------------------------------

// With scaler sharing the server ships integer code sums per element. Sums
// live in {-N..N}; each is stored as a base-(2N+1) digit and digits are
// packed into 64-bit words at the full radix, so the per-element cost
// approaches log2(2N+1) bits.
struct SharedSumBlock {
    std::string name;
    std::uint32_t n = 0;
    std::uint16_t workers = 0;
    float s = 0.0f;               // shared scaler
    std::vector<std::int32_t> sums;  // n entries in [-N, N]
};

// Averaged floats, used for passthrough tensors and when sharing is off.
struct FloatAvgBlock {
    std::string name;
    std::vector<float> values;
};

using PullBlock = std::variant<SharedSumBlock, FloatAvgBlock>;

struct PullMessage {
    std::vector<PullBlock> blocks;
};

constexpr std::uint8_t kPullSharedSum = 3;
constexpr std::uint8_t kPullFloatAvg = 4;

// Largest m with base^m <= 2^64.
inline std::size_t radix_digits_per_word(std::uint64_t base) {
    std::size_t m = 0;
    std::uint64_t acc = 1;
    while (acc <= UINT64_MAX / base) {
        acc *= base;
        ++m;
    }
    return m;
}

inline void serialize_pull_block(std::vector<std::uint8_t>& out, const PullBlock& blk) {
    if (const auto* sb = std::get_if<SharedSumBlock>(&blk)) {
        out.push_back(kPullSharedSum);
        detail::put_name(out, sb->name);
        detail::put_u32(out, sb->n);
        detail::put_u16(out, sb->workers);
        detail::put_f32(out, sb->s);
        const std::uint64_t base = 2ull * sb->workers + 1;
        const std::size_t m = radix_digits_per_word(base);
        const std::size_t words = (sb->n + m - 1) / m;
        detail::put_u32(out, static_cast<std::uint32_t>(words));
        for (std::size_t w = 0; w < words; ++w) {
            std::uint64_t word = 0;
            // little-endian digit order within the word
            const std::size_t lo = w * m;
            const std::size_t hi = std::min(lo + m, static_cast<std::size_t>(sb->n));
            for (std::size_t k = hi; k > lo; --k) {
                const std::int32_t sum = sb->sums[k - 1];
                if (sum < -static_cast<std::int32_t>(sb->workers) ||
                    sum > static_cast<std::int32_t>(sb->workers))
                    throw ProtocolError("pull: code sum out of range");
                word = word * base + static_cast<std::uint64_t>(sum + sb->workers);
            }
            detail::put_u64(out, word);
        }
    } else {
        const auto& fb = std::get<FloatAvgBlock>(blk);
        out.push_back(kPullFloatAvg);
        detail::put_name(out, fb.name);
        detail::put_u32(out, static_cast<std::uint32_t>(fb.values.size()));
        for (float v : fb.values) detail::put_f32(out, v);
    }
}

inline PullBlock deserialize_pull_block(detail::Reader& r) {
    const std::uint8_t tag = r.u8();
    const std::string name = r.str(r.u16());
    const std::uint32_t n = r.u32();
    if (tag == kPullSharedSum) {
        SharedSumBlock sb;
        sb.name = name;
        sb.n = n;
        sb.workers = r.u16();
        if (sb.workers == 0) throw ProtocolError("pull: zero worker count");
        sb.s = r.f32();
        const std::uint64_t base = 2ull * sb.workers + 1;
        const std::size_t m = radix_digits_per_word(base);
        const std::size_t words = r.u32();
        if (words != (n + m - 1) / m) throw ProtocolError("pull: bad word count");
        sb.sums.resize(n);
        for (std::size_t w = 0; w < words; ++w) {
            std::uint64_t word = r.u64();
            const std::size_t lo = w * m;
            const std::size_t hi = std::min(lo + m, static_cast<std::size_t>(n));
            for (std::size_t k = lo; k < hi; ++k) {
                const std::uint64_t digit = word % base;
                word /= base;
                sb.sums[k] = static_cast<std::int32_t>(digit) -
                             static_cast<std::int32_t>(sb.workers);
            }
            if (word != 0) throw ProtocolError("pull: nonzero radix remainder");
        }
        return sb;
    }
    if (tag == kPullFloatAvg) {
        FloatAvgBlock fb;
        fb.name = name;
        fb.values.resize(n);
        for (auto& v : fb.values) v = r.f32();
        return fb;
    }
    throw ProtocolError("pull: unknown block tag " + std::to_string(tag));
}

inline std::vector<std::uint8_t> serialize_pull(const PullMessage& p) {
    std::vector<std::uint8_t> out;
    detail::put_u16(out, static_cast<std::uint16_t>(p.blocks.size()));
    for (const auto& b : p.blocks) serialize_pull_block(out, b);
    return out;
}

inline PullMessage deserialize_pull(std::span<const std::uint8_t> buf) {
    detail::Reader r{buf};
    PullMessage p;
    const std::size_t count = r.u16();
    p.blocks.reserve(count);
    for (std::size_t i = 0; i < count; ++i) p.blocks.push_back(deserialize_pull_block(r));
    if (r.pos != buf.size()) throw ProtocolError("pull: trailing bytes");
    return p;
}

// Decode one pull into flat tensors, merging bucket runs by name. The 1/N
// division happens here, in fp32, identically at every worker.
inline std::vector<GradTensor> decode_pull(const PullMessage& p) {
    std::vector<GradTensor> out;
    auto append = [&](const std::string& name, std::span<const float> vals) {
        if (out.empty() || out.back().name != name)
            out.emplace_back(name, std::vector<std::size_t>{0});
        auto& t = out.back();
        t.values.insert(t.values.end(), vals.begin(), vals.end());
        t.shape = {t.values.size()};
    };
    for (const auto& b : p.blocks) {
        if (const auto* sb = std::get_if<SharedSumBlock>(&b)) {
            const float invN = 1.0f / static_cast<float>(sb->workers);
            std::vector<float> vals(sb->n);
            for (std::size_t k = 0; k < sb->n; ++k)
                vals[k] = sb->s * static_cast<float>(sb->sums[k]) * invN;
            append(sb->name, vals);
        } else {
            const auto& fb = std::get<FloatAvgBlock>(b);
            append(fb.name, fb.values);
        }
    }
    return out;
}

// Bytes the same pull would occupy with raw fp32 averaged gradients.
inline std::size_t float_pull_size(const PullMessage& p) {
    std::size_t n = 2;
    for (const auto& b : p.blocks) {
        if (const auto* sb = std::get_if<SharedSumBlock>(&b))
            n += 1 + 2 + sb->name.size() + 4 + 4 * sb->n;
        else {
            const auto& fb = std::get<FloatAvgBlock>(b);
            n += 1 + 2 + fb.name.size() + 4 + 4 * fb.values.size();
        }
    }
    return n;
}

}  // namespace terngrad
