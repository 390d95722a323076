#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "terngrad/codec.hpp"
#include "terngrad/rng.hpp"

using namespace terngrad;

namespace {

GradTensor gaussian_tensor(const std::string& name, std::size_t n, std::uint64_t seed) {
    GradTensor g(name, {n});
    RngStream rs(seed, 0, "gauss/" + name);
    for (std::size_t k = 0; k < n; ++k) g.values[k] = rs.normal(k);
    return g;
}

GradTensor uniform_tensor(const std::string& name, std::size_t n, std::uint64_t seed) {
    GradTensor g(name, {n});
    RngStream rs(seed, 0, "unif/" + name);
    for (std::size_t k = 0; k < n; ++k) g.values[k] = 2.0f * rs.uniform(k) - 1.0f;
    return g;
}

double phi_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("clip leaves small tensors alone") {
    GradTensor g("g", {4}, {1.0f, -1.0f, 1.0f, -1.0f});
    const auto c = clip(g, 2.5f);
    CHECK(c.values == g.values);
}

TEST_CASE("clip fraction matches the normal-CDF oracle") {
    const auto g = gaussian_tensor("g", 1000000, 11);
    const auto c = clip(g, 2.5f);
    std::size_t changed = 0;
    for (std::size_t k = 0; k < g.size(); ++k)
        if (c.values[k] != g.values[k]) ++changed;
    const double expected = 2.0 * phi_cdf(-2.5);  // 0.01242
    CHECK(static_cast<double>(changed) / g.size() ==
          doctest::Approx(expected).epsilon(0.002 / expected));
}

TEST_CASE("clip geometry: length and angle shifts stay in the published band") {
    const auto g = gaussian_tensor("g", 1000000, 12);
    const auto c = clip(g, 2.5f);
    const double ratio = l2_norm(c.values) / l2_norm(g.values);
    CHECK(ratio >= 0.985);
    CHECK(ratio <= 0.995);
    double dot = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k)
        dot += static_cast<double>(g.values[k]) * c.values[k];
    const double angle =
        std::acos(dot / (l2_norm(g.values) * l2_norm(c.values))) * 180.0 / M_PI;
    CHECK(angle >= 1.0);
    CHECK(angle <= 4.0);
}

TEST_CASE("scaler basics") {
    CHECK(scaler(GradTensor("g", {3}, {0.5f, -2.0f, 1.0f})) == 2.0f);
    CHECK(scaler(GradTensor("g", {3}, {0.0f, 0.0f, 0.0f})) == 0.0f);
    CHECK(scaler(GradTensor("g", {1}, {-3.5f})) == 3.5f);
    CHECK(scaler(GradTensor("g", {0}, {})) == 0.0f);
}

TEST_CASE("share_scalers is max") {
    const std::vector<float> a{0.1f, 0.3f, 0.2f};
    CHECK(share_scalers(a) == 0.3f);
    const std::vector<float> b{0.5f};
    CHECK(share_scalers(b) == 0.5f);
    const std::vector<float> z{0.0f, 0.0f};
    CHECK(share_scalers(z) == 0.0f);
    CHECK_THROWS_AS((void)share_scalers(std::vector<float>{}), CodecError);
}

TEST_CASE("ternarize at probability one is deterministic") {
    GradTensor g("g", {2}, {0.7f, -0.7f});
    RngStream rng(1, 0, "g");
    const auto blk = ternarize(g, 0.7f, rng);
    CHECK(blk.s == 0.7f);
    CHECK(blk.code_at(0) == +1);
    CHECK(blk.code_at(1) == -1);
}

TEST_CASE("ternarize all-zero tensor") {
    GradTensor g("g", {5}, std::vector<float>(5, 0.0f));
    RngStream rng(1, 0, "g");
    const auto blk = ternarize(g, 0.0f, rng);
    CHECK(blk.s == 0.0f);
    for (std::size_t k = 0; k < 5; ++k) CHECK(blk.code_at(k) == 0);
    const auto blk2 = ternarize(g, 1.0f, rng);
    for (std::size_t k = 0; k < 5; ++k) CHECK(blk2.code_at(k) == 0);
}

TEST_CASE("ternarize rejects an undersized scaler") {
    GradTensor g("g", {2}, {0.5f, -0.9f});
    RngStream rng(1, 0, "g");
    CHECK_THROWS_AS((void)ternarize(g, 0.6f, rng), CodecError);
}

TEST_CASE("ternary estimator is unbiased (Monte-Carlo)") {
    GradTensor g("g", {2}, {0.3f, -0.6f});
    const float s = 0.6f;
    const int draws = 100000;
    double sum0 = 0.0, sum1 = 0.0;
    for (int t = 0; t < draws; ++t) {
        RngStream rng(5, static_cast<std::uint64_t>(t), "g");
        const auto d = decode(ternarize(g, s, rng));
        sum0 += d.values[0];
        sum1 += d.values[1];
    }
    const double se = s / std::sqrt(static_cast<double>(draws));
    CHECK(std::abs(sum0 / draws - 0.3) <= 4 * se);
    CHECK(std::abs(sum1 / draws - (-0.6)) <= 4 * se);
}

TEST_CASE("zero-fraction law") {
    const auto g = uniform_tensor("g", 64, 21);
    const float s = scaler(g);
    const double expected = 1.0 - l1_norm(g.values) / (g.size() * s);
    const int draws = 100000;
    double zeros = 0.0;
    for (int t = 0; t < draws; ++t) {
        RngStream rng(9, static_cast<std::uint64_t>(t), "g");
        zeros += ternarize(g, s, rng).zero_fraction();
    }
    CHECK(zeros / draws == doctest::Approx(expected).epsilon(0.01 / expected));
}

TEST_CASE("decode basics and pack round-trip") {
    TernaryBlock blk;
    blk.name = "g";
    blk.n = 3;
    blk.s = 2.0f;
    blk.codes.assign(1, 0);
    blk.set_code(0, +1);
    blk.set_code(1, 0);
    blk.set_code(2, -1);
    const auto d = decode(blk);
    CHECK(d.values == std::vector<float>{2.0f, 0.0f, -2.0f});

    TernaryBlock z;
    z.name = "z";
    z.n = 6;
    z.s = 0.0f;
    z.codes.assign(2, 0);
    for (float v : decode(z).values) CHECK(v == 0.0f);

    // five codes cross a byte boundary; the padded final byte must round-trip
    TernaryBlock five;
    five.name = "f";
    five.n = 5;
    five.s = 1.0f;
    five.codes.assign(2, 0);
    const int want[5] = {+1, -1, 0, 0, +1};
    for (int k = 0; k < 5; ++k) five.set_code(static_cast<std::size_t>(k), want[k]);
    for (int k = 0; k < 5; ++k) CHECK(five.code_at(static_cast<std::size_t>(k)) == want[k]);
    CHECK((five.codes[1] >> 2) == 0);  // trailing pad bits stay 00
}

TEST_CASE("decode flags corrupt 11 codes") {
    TernaryBlock blk;
    blk.name = "g";
    blk.n = 1;
    blk.s = 1.0f;
    blk.codes = {0b11};
    CHECK_THROWS_AS((void)decode(blk), CodecError);
}

TEST_CASE("average arithmetic with shared scaler") {
    auto make = [](std::uint16_t worker, std::initializer_list<int> codes) {
        TernaryBlock blk;
        blk.name = "g";
        blk.n = static_cast<std::uint32_t>(codes.size());
        blk.s = 1.0f;
        blk.codes.assign((blk.n + 3) / 4, 0);
        std::size_t k = 0;
        for (int c : codes) blk.set_code(k++, c);
        EncodedGradient e;
        e.worker = worker;
        e.blocks.push_back(blk);
        return e;
    };
    const auto avg = average({make(0, {+1, 0}), make(1, {+1, -1})}, 2, true);
    REQUIRE(avg.size() == 1);
    CHECK(avg[0].values == std::vector<float>{1.0f, -0.5f});
}

TEST_CASE("shared-scaler average has at most 2N+1 levels") {
    const std::size_t n = 10000;
    const std::size_t N = 4;
    std::vector<EncodedGradient> enc;
    for (std::uint16_t w = 0; w < N; ++w) {
        const auto g = uniform_tensor("g", n, 31);
        RngStream rng(40, 0, "g", w);
        EncodedGradient e;
        e.worker = w;
        e.blocks.push_back(ternarize(g, 1.0f, rng));
        enc.push_back(std::move(e));
    }
    const auto avg = average(enc, N, true);
    std::set<float> distinct(avg[0].values.begin(), avg[0].values.end());
    CHECK(distinct.size() <= 2 * N + 1);
}

TEST_CASE("average of one message is its decode") {
    const auto g = uniform_tensor("g", 37, 77);
    RngStream rng(3, 0, "g");
    EncodedGradient e;
    e.blocks.push_back(ternarize(g, scaler(g), rng));
    const auto avg = average({e}, 1, true);
    const auto dec = decode(std::get<TernaryBlock>(e.blocks[0]));
    CHECK(avg[0].values == dec.values);
}

TEST_CASE("average validates structure") {
    EncodedGradient a, b;
    a.iteration = 1;
    b.iteration = 2;
    a.blocks.push_back(PassthroughBlock{"g", {1.0f}});
    b.blocks.push_back(PassthroughBlock{"g", {1.0f}});
    CHECK_THROWS_AS((void)average({a, b}, 2, true), CodecError);
    CHECK_THROWS_AS((void)average({a}, 2, true), CodecError);
}

TEST_CASE("encode_step passthrough is verbatim") {
    CodecConfig cfg;
    cfg.passthrough = {"fc.last"};
    const auto g1 = gaussian_tensor("fc1.weight", 64, 51);
    const auto g2 = gaussian_tensor("fc.last", 16, 52);
    const auto res = encode_step({g1, g2}, cfg, 0, 0);
    const auto& pb = std::get<PassthroughBlock>(res.encoded.blocks[1]);
    CHECK(pb.values == g2.values);
}

TEST_CASE("bucket size one degenerates to clipped floating gradients") {
    CodecConfig cfg;
    cfg.bucketing = Bucketing::FixedSize;
    cfg.bucket_size = 1;
    const auto g = gaussian_tensor("g", 101, 61);
    const auto res = encode_step({g}, cfg, 0, 0);
    const auto expect = clip(g, cfg.clip_factor);
    std::size_t k = 0;
    for (const auto& b : res.encoded.blocks) {
        const auto dec = decode(std::get<TernaryBlock>(b));
        for (float v : dec.values) CHECK(v == expect.values[k++]);
    }
    CHECK(k == g.size());
}

TEST_CASE("encode_step is deterministic in (seed, t, worker)") {
    CodecConfig cfg;
    cfg.seed = 1234;
    const auto g = gaussian_tensor("g", 333, 71);
    const auto a = encode_step({g}, cfg, 7, 3);
    const auto b = encode_step({g}, cfg, 7, 3);
    const auto c = encode_step({g}, cfg, 8, 3);
    CHECK(serialize_encoded(a.encoded) == serialize_encoded(b.encoded));
    CHECK(serialize_encoded(a.encoded) != serialize_encoded(c.encoded));
}

TEST_CASE("global bucketing uses one scaler for all tensors") {
    CodecConfig cfg;
    cfg.bucketing = Bucketing::Global;
    cfg.clipping_enabled = false;
    const GradTensor a("a", {2}, {0.5f, -0.25f});
    const GradTensor b("b", {2}, {2.0f, 0.0f});
    const auto res = encode_step({a, b}, cfg, 0, 0);
    CHECK(std::get<TernaryBlock>(res.encoded.blocks[0]).s == 2.0f);
    CHECK(std::get<TernaryBlock>(res.encoded.blocks[1]).s == 2.0f);
}

TEST_CASE("wire_size accounting") {
    CodecConfig cfg;
    cfg.clipping_enabled = false;
    const auto g = gaussian_tensor("g", 10000, 81);
    const auto res = encode_step({g}, cfg, 0, 0);
    // 2500 code bytes + 4-byte scaler dominate; vs. 40000 float bytes
    CHECK(static_cast<double>(float_wire_size(res.encoded)) / wire_size(res.encoded) >=
          15.9);

    const auto one = encode_step({gaussian_tensor("g", 1, 82)}, cfg, 0, 0);
    const auto& blk = std::get<TernaryBlock>(one.encoded.blocks[0]);
    CHECK(blk.codes.size() == 1);  // 1 code byte + 4-byte scaler payload

    EncodedGradient pe;
    pe.blocks.push_back(PassthroughBlock{"", {1.0f, 2.0f, 3.0f}});
    CHECK(wire_size(pe) == 2 + 1 + 2 + 4 + 12);  // 12 payload bytes of floats
}

TEST_CASE("per-bucket scalers never exceed the tensor scaler") {
    const auto g = gaussian_tensor("g", 1000, 91);
    const float whole = scaler(g);
    for (std::size_t bucket : {1ul, 7ul, 64ul, 1000ul}) {
        CodecConfig cfg;
        cfg.bucketing = Bucketing::FixedSize;
        cfg.bucket_size = bucket;
        cfg.clipping_enabled = false;
        const auto res = encode_step({g}, cfg, 0, 0);
        for (float s : res.local_scalers) CHECK(s <= whole);
    }
}

TEST_CASE("bound-gap inequality holds exactly") {
    RngStream dims(7, 0, "dims");
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + dims.bits(static_cast<std::uint64_t>(trial)) % 512;
        const auto g = gaussian_tensor("g", n, 1000 + static_cast<std::uint64_t>(trial));
        const double lhs = static_cast<double>(max_abs(g.values)) * l1_norm(g.values);
        const double rhs = l2_norm(g.values) * l2_norm(g.values);
        CHECK(lhs >= rhs);
    }
    // equality iff all nonzero magnitudes are equal
    const GradTensor eq("g", {4}, {0.5f, -0.5f, 0.0f, 0.5f});
    const double lhs = static_cast<double>(max_abs(eq.values)) * l1_norm(eq.values);
    const double rhs = l2_norm(eq.values) * l2_norm(eq.values);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("histogram basics") {
    const GradTensor c("g", {5}, std::vector<float>(5, 3.0f));
    auto h = histogram(c, 7);
    std::size_t nonzero = 0, total = 0;
    for (const auto& b : h) {
        if (b.count) ++nonzero;
        total += b.count;
    }
    CHECK(nonzero == 1);
    CHECK(total == 5);

    const GradTensor two("g", {2}, {-1.0f, 1.0f});
    auto h2 = histogram(two, 2);
    CHECK(h2[0].count == 1);
    CHECK(h2[1].count == 1);
}

TEST_CASE("histogram matches the normal-PDF oracle") {
    const auto g = gaussian_tensor("g", 100000, 101);
    const std::size_t bins = 100;
    const auto h = histogram(g, bins);
    double lo = g.values[0], hi = g.values[0];
    for (float v : g.values) {
        lo = std::min(lo, static_cast<double>(v));
        hi = std::max(hi, static_cast<double>(v));
    }
    const double width = (hi - lo) / bins;
    for (const auto& b : h) {
        const double expected =
            (phi_cdf(b.edge + width) - phi_cdf(b.edge)) * static_cast<double>(g.size());
        // Poisson bin counts: stay within 5 standard deviations
        if (expected >= 500.0)
            CHECK(std::abs(b.count - expected) <= 5.0 * std::sqrt(expected));
    }
}

TEST_CASE("serialize/deserialize round-trips an encoded gradient") {
    CodecConfig cfg;
    cfg.passthrough = {"p"};
    const auto res = encode_step(
        {gaussian_tensor("a", 13, 111), gaussian_tensor("p", 5, 112)}, cfg, 3, 1);
    const auto bytes = serialize_encoded(res.encoded);
    CHECK(bytes.size() == wire_size(res.encoded));
    const auto back = deserialize_encoded(bytes, 3, 1);
    CHECK(serialize_encoded(back) == bytes);
}
