#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "terngrad/perfmodel.hpp"
#include "terngrad/rng.hpp"

using namespace terngrad;

namespace {

PerfModelParams reference_params() {
    PerfModelParams p;
    p.gpus_per_machine = 4;
    p.machines = 2;
    p.batch = 256;
    p.grad_bytes = 100e6;
    p.gpu_bw = 10e9;
    p.cpu_gpu_bw = 10e9;
    p.net_latency = 1e-5;
    p.net_bw = 12.5e9;
    p.step_time = 0.5;
    return p;
}

PerfModelParams random_params(std::uint64_t trial) {
    RngStream rs(404, trial, "perf");
    PerfModelParams p;
    p.gpus_per_machine = 1 + rs.bits(0) % 8;
    p.machines = 1 + rs.bits(1) % 16;
    p.batch = 1 + rs.bits(2) % 1024;
    p.grad_bytes = 1e6 + rs.uniform(3) * 5e8;
    p.gpu_bw = 1e9 + rs.uniform(4) * 5e10;
    p.cpu_gpu_bw = 1e9 + rs.uniform(5) * 2e10;
    p.net_latency = rs.uniform(6) * 1e-3;
    p.net_bw = 1e8 + rs.uniform(7) * 1e10;
    p.step_time = p.grad_bytes / p.cpu_gpu_bw + 0.01 + rs.uniform(8);
    return p;
}

}  // namespace

TEST_CASE("t_comm hand-computed value") {
    const auto p = reference_params();
    // 0.01*2 + 0.01 + (1e-5 + 0.008)*1
    CHECK(t_comm(p) == doctest::Approx(0.03801).epsilon(1e-12));
}

TEST_CASE("t_comm single worker reduces to the CPU-GPU transfer") {
    auto p = reference_params();
    p.gpus_per_machine = 1;
    p.machines = 1;
    CHECK(t_comm(p) == doctest::Approx(p.grad_bytes / p.cpu_gpu_bw).epsilon(1e-12));
}

TEST_CASE("t_strong and throughput hand-computed values") {
    const auto p = reference_params();
    // (0.5-0.01)/8 + 0.03801
    CHECK(t_strong(p) == doctest::Approx(0.09926).epsilon(1e-12));
    CHECK(tput_strong(p) == doctest::Approx(256.0 / 0.09926).epsilon(1e-12));
}

TEST_CASE("t_weak hand-computed value") {
    PerfModelParams p = reference_params();
    p.machines = 1;
    p.batch = 128;
    // 0.5 + 0.01*2
    CHECK(t_weak(p) == doctest::Approx(0.52).epsilon(1e-12));
    CHECK(tput_weak(p) == doctest::Approx(4 * 128.0 / 0.52).epsilon(1e-12));
}

TEST_CASE("degenerate N=1 equals the profiled step") {
    auto p = reference_params();
    p.gpus_per_machine = 1;
    p.machines = 1;
    CHECK(t_strong(p) == doctest::Approx(p.step_time).epsilon(1e-12));
    CHECK(t_weak(p) == doctest::Approx(p.step_time).epsilon(1e-12));
    CHECK(tput_strong(p) == doctest::Approx(p.batch / p.step_time).epsilon(1e-12));
}

TEST_CASE("monotonicity over a random parameter sweep") {
    for (std::uint64_t trial = 0; trial < 1000; ++trial) {
        const auto p = random_params(trial);
        // more network bandwidth never hurts
        auto faster = p;
        faster.net_bw *= 2.0;
        CHECK(t_comm(faster) <= t_comm(p) + 1e-15);
        CHECK(tput_weak(faster) + 1e-12 >= tput_weak(p));
        // shrinking the payload never hurts
        auto smaller = p;
        smaller.grad_bytes /= 16.0;
        CHECK(t_comm(smaller) <= t_comm(p) + 1e-15);
        if (p.machines > 1) CHECK(t_comm(smaller) < t_comm(p));
        // throughput identities
        CHECK(tput_strong(p) * t_strong(p) == doctest::Approx(p.batch).epsilon(1e-12));
        CHECK(t_comm(p) >= p.grad_bytes / p.cpu_gpu_bw - 1e-15);
        CHECK(tput_strong(p) > 0.0);
        CHECK(tput_weak(p) > 0.0);
    }
}

TEST_CASE("comm terms scale linearly in gradient size") {
    auto p = reference_params();
    const double full = t_comm(p);
    const double base_latency = p.net_latency * std::log2(p.machines);
    auto half = p;
    half.grad_bytes /= 2.0;
    CHECK(t_comm(half) - base_latency ==
          doctest::Approx((full - base_latency) / 2.0).epsilon(1e-12));
}

TEST_CASE("invalid parameters are rejected at the boundary") {
    auto p = reference_params();
    p.step_time = p.grad_bytes / p.cpu_gpu_bw;  // T_comp would be zero/negative
    CHECK_THROWS_AS((void)t_comm(p), std::invalid_argument);
    auto q = reference_params();
    q.gpu_bw = 0.0;
    CHECK_THROWS_AS((void)t_comm(q), std::invalid_argument);
}

TEST_CASE("speedup curve limits") {
    auto p = reference_params();
    auto ideal = [](double b) { return b / 16.0; };
    // infinite bandwidth: compression buys nothing
    auto fast = p;
    fast.gpu_bw = fast.cpu_gpu_bw = fast.net_bw = 1e18;
    fast.net_latency = 0.0;
    const auto rows = speedup_curve(fast, ideal, {2, 8, 64});
    for (const auto& r : rows) CHECK(r.speedup == doctest::Approx(1.0).epsilon(1e-6));

    // speedup shrinks as bandwidth grows, at fixed N > 1
    double prev = 1e300;
    for (double bw : {1e8, 1e9, 1e10, 1e11}) {
        auto q = p;
        q.net_bw = bw;
        const auto row = speedup_curve(q, ideal, {8});
        CHECK(row[0].speedup <= prev + 1e-12);
        prev = row[0].speedup;
    }
}
