#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

namespace terngrad {

// Philox4x32-10 counter-based generator. A draw is a pure function of
// (key, counter), so streams keyed by (seed, iteration, tensor, worker)
// reproduce exactly regardless of thread scheduling or transport order.
namespace philox {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                          std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
        ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
               static_cast<std::uint32_t>(p1),
               static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
               static_cast<std::uint32_t>(p0)};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

}  // namespace philox

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// One logical random stream. uniform(k) is independent of call order and of
// any other stream with a distinct (seed, iteration, name, worker) key.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t iteration,
              std::string_view tensor_name, std::uint64_t worker = 0) {
        const std::uint64_t nh = fnv1a64(tensor_name);
        key_ = {static_cast<std::uint32_t>(seed ^ nh),
                static_cast<std::uint32_t>((seed >> 32) ^ (nh >> 32) ^ (worker * 0x9E3779B97F4A7C15ull))};
        hi_ = {static_cast<std::uint32_t>(iteration),
               static_cast<std::uint32_t>(iteration >> 32)};
    }

    std::uint32_t bits(std::uint64_t index) const {
        const std::uint64_t ctr = index >> 2;
        const auto out = philox::block(
            {static_cast<std::uint32_t>(ctr), static_cast<std::uint32_t>(ctr >> 32),
             hi_[0], hi_[1]},
            key_);
        return out[index & 3];
    }

    // Uniform in [0, 1); never returns 1.0 exactly.
    float uniform(std::uint64_t index) const {
        return static_cast<float>(bits(index)) * 0x1p-32f;
    }

    // Standard normal via Box-Muller on two lanes.
    float normal(std::uint64_t index) const {
        const double u1 = (static_cast<double>(bits(2 * index)) + 0.5) * 0x1p-32;
        const double u2 = static_cast<double>(bits(2 * index + 1)) * 0x1p-32;
        return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) *
                                  std::cos(6.283185307179586 * u2));
    }

private:
    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 2> hi_;
};

}  // namespace terngrad
