#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "terngrad/rng.hpp"
#include "terngrad/wire.hpp"

using namespace terngrad;

TEST_CASE("frame/unframe round-trip") {
    Message m;
    m.type = MsgType::Push;
    m.iteration = 12345678901ull;
    m.worker = 7;
    m.payload = {1, 2, 3, 4, 5};
    const auto bytes = frame(m);
    CHECK(bytes.size() == kHeaderSize + 5);
    CHECK(bytes[0] == 0x47);  // magic "TG" little-endian
    CHECK(bytes[1] == 0x54);
    const Message back = unframe(bytes);
    CHECK(back.type == m.type);
    CHECK(back.iteration == m.iteration);
    CHECK(back.worker == m.worker);
    CHECK(back.payload == m.payload);
}

TEST_CASE("unframe rejects corruption") {
    Message m;
    m.payload = {9};
    auto bytes = frame(m);
    auto bad_magic = bytes;
    bad_magic[0] ^= 0xFF;
    CHECK_THROWS_AS((void)unframe(bad_magic), ProtocolError);
    auto bad_len = bytes;
    bad_len.push_back(0);  // trailing byte disagrees with header length
    CHECK_THROWS_AS((void)unframe(bad_len), ProtocolError);
    auto bad_type = bytes;
    bad_type[3] = 9;
    CHECK_THROWS_AS((void)unframe(bad_type), ProtocolError);
}

TEST_CASE("radix packing capacity") {
    CHECK(radix_digits_per_word(3) == 40);   // N=1
    CHECK(radix_digits_per_word(5) == 27);   // N=2
    CHECK(radix_digits_per_word(9) == 20);   // N=4
    CHECK(radix_digits_per_word(17) == 15);  // N=8
}

TEST_CASE("shared-sum pull block round-trips") {
    for (std::uint16_t N : {1, 2, 4, 8, 5}) {
        SharedSumBlock sb;
        sb.name = "fc.weight";
        sb.workers = N;
        sb.n = 1003;
        sb.s = 0.125f;
        sb.sums.resize(sb.n);
        RngStream rs(77, N, "sums");
        for (std::size_t k = 0; k < sb.n; ++k)
            sb.sums[k] = static_cast<std::int32_t>(rs.bits(k) % (2u * N + 1)) - N;
        PullMessage p;
        p.blocks.push_back(sb);
        const auto bytes = serialize_pull(p);
        const PullMessage back = deserialize_pull(bytes);
        const auto& rb = std::get<SharedSumBlock>(back.blocks[0]);
        CHECK(rb.sums == sb.sums);
        CHECK(rb.s == sb.s);
        CHECK(rb.name == sb.name);
    }
}

TEST_CASE("shared-sum payload approaches 32/log2(2N+1) bits") {
    SharedSumBlock sb;
    sb.name = "g";
    sb.workers = 4;
    sb.n = 1000000;
    sb.sums.assign(sb.n, 0);
    PullMessage p;
    p.blocks.push_back(sb);
    const double ratio = static_cast<double>(float_pull_size(p)) / serialize_pull(p).size();
    const double ideal = 32.0 / std::log2(9.0);  // 10.095
    CHECK(ratio == doctest::Approx(ideal).epsilon(0.05));
}

TEST_CASE("pull sum out of range is rejected") {
    SharedSumBlock sb;
    sb.name = "g";
    sb.workers = 2;
    sb.n = 1;
    sb.sums = {3};
    PullMessage p;
    p.blocks.push_back(sb);
    CHECK_THROWS_AS((void)serialize_pull(p), ProtocolError);
}

TEST_CASE("float-avg pull block round-trips and decodes") {
    PullMessage p;
    p.blocks.push_back(FloatAvgBlock{"a", {1.5f, -2.25f}});
    p.blocks.push_back(FloatAvgBlock{"a", {3.0f}});  // second bucket, same tensor
    p.blocks.push_back(FloatAvgBlock{"b", {0.0f}});
    const PullMessage back = deserialize_pull(serialize_pull(p));
    const auto tensors = decode_pull(back);
    REQUIRE(tensors.size() == 2);
    CHECK(tensors[0].name == "a");
    CHECK(tensors[0].values == std::vector<float>{1.5f, -2.25f, 3.0f});
    CHECK(tensors[1].name == "b");
}

TEST_CASE("decode_pull divides shared sums by N in fp32") {
    SharedSumBlock sb;
    sb.name = "g";
    sb.workers = 4;
    sb.n = 3;
    sb.s = 1.0f;
    sb.sums = {4, -2, 0};
    PullMessage p;
    p.blocks.push_back(sb);
    const auto tensors = decode_pull(p);
    CHECK(tensors[0].values == std::vector<float>{1.0f, -0.5f, 0.0f});
}

TEST_CASE("fuzzed messages round-trip bit-identically") {
    RngStream rs(2024, 0, "fuzz");
    std::uint64_t ctr = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        Message m;
        m.type = static_cast<MsgType>(1 + rs.bits(ctr++) % 4);
        m.iteration = (static_cast<std::uint64_t>(rs.bits(ctr++)) << 32) | rs.bits(ctr++);
        m.worker = static_cast<std::uint16_t>(rs.bits(ctr++));
        m.payload.resize(rs.bits(ctr++) % 2048);
        for (auto& b : m.payload) b = static_cast<std::uint8_t>(rs.bits(ctr++));
        const auto bytes = frame(m);
        const Message back = unframe(bytes);
        CHECK(frame(back) == bytes);
    }
}
