#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "terngrad/optimizer.hpp"

using namespace terngrad;

namespace {

std::vector<GradTensor> scalar(const std::string& name, float v) {
    return {GradTensor(name, {1}, {v})};
}

}  // namespace

TEST_CASE("polynomial schedule") {
    const auto s = LrSchedule::polynomial(0.1, 0.5, 100);
    CHECK(s.lr(0) == doctest::Approx(0.1));
    CHECK(s.lr(75) == doctest::Approx(0.05));
    CHECK(s.lr(100) == doctest::Approx(0.0));
    CHECK(s.lr(150) == doctest::Approx(0.0));  // clamped past max-iter
}

TEST_CASE("staircase schedule") {
    const auto s = LrSchedule::staircase(0.1, 0.1, 10);
    CHECK(s.lr(25) == doctest::Approx(0.001));
    CHECK(s.lr(0) == doctest::Approx(0.1));
}

TEST_CASE("polynomial is monotonically nonincreasing") {
    const auto s = LrSchedule::polynomial(0.3, 0.5, 500);
    double prev = s.lr(0);
    for (std::uint64_t t = 1; t <= 600; ++t) {
        const double cur = s.lr(t);
        CHECK(cur <= prev + 1e-15);
        prev = cur;
    }
}

TEST_CASE("vanilla update") {
    OptimizerState opt({OptimizerRule::Vanilla});
    auto w = scalar("w", 1.0f);
    opt.apply(w, scalar("w", 2.0f), 0.1);
    CHECK(w[0].values[0] == doctest::Approx(0.8f));
}

TEST_CASE("momentum accumulates velocity") {
    OptimizerConfig cfg;
    cfg.rule = OptimizerRule::Momentum;
    cfg.momentum = 0.9;
    OptimizerState opt(cfg);
    auto w = scalar("w", 0.0f);
    opt.apply(w, scalar("w", 1.0f), 0.1);
    CHECK(w[0].values[0] == doctest::Approx(-0.1f));
    opt.apply(w, scalar("w", 1.0f), 0.1);
    CHECK(w[0].values[0] == doctest::Approx(-0.29f));  // v = 1.9
}

TEST_CASE("adam first step moves by about -rate*sign(g)") {
    // closed form at t=1: m_hat = g, v_hat = g^2, so the step is
    // -rate * g / (|g| + eps) ~= -rate * sign(g)
    for (float g : {0.5f, -2.0f, 1e-3f}) {
        OptimizerConfig cfg;
        cfg.rule = OptimizerRule::Adam;
        OptimizerState opt(cfg);
        auto w = scalar("w", 0.0f);
        opt.apply(w, scalar("w", g), 0.01);
        const double expected = -0.01 * (g > 0 ? 1.0 : -1.0);
        CHECK(w[0].values[0] == doctest::Approx(expected).epsilon(1e-3));
    }
}

TEST_CASE("weight decay folds into the effective gradient") {
    OptimizerConfig cfg;
    cfg.weight_decay = 0.5;
    OptimizerState opt(cfg);
    auto w = scalar("w", 2.0f);
    opt.apply(w, scalar("w", 0.0f), 0.1);
    CHECK(w[0].values[0] == doctest::Approx(2.0f - 0.1f * 1.0f));
}

TEST_CASE("zero rate leaves parameters unchanged") {
    OptimizerState opt({OptimizerRule::Vanilla});
    auto w = scalar("w", 1.5f);
    opt.apply(w, scalar("w", 3.0f), 0.0);
    CHECK(w[0].values[0] == 1.5f);
}

TEST_CASE("shape mismatch raises") {
    OptimizerState opt({OptimizerRule::Vanilla});
    auto w = scalar("w", 1.0f);
    std::vector<GradTensor> g{GradTensor("w", {2}, {1.0f, 1.0f})};
    CHECK_THROWS_AS(opt.apply(w, g, 0.1), std::invalid_argument);
}

TEST_CASE("ema fixed point and arithmetic") {
    const auto w = scalar("w", 1.0f);
    EmaShadow ema(0.5, scalar("w", 0.0f));
    for (int i = 0; i < 3; ++i) ema.update(w);
    CHECK(ema.evaluation_params()[0].values[0] == doctest::Approx(0.875f));

    EmaShadow instant(0.0, scalar("w", 0.0f));
    instant.update(w);
    CHECK(instant.evaluation_params()[0].values[0] == 1.0f);

    // high decay converges geometrically toward constant params
    EmaShadow slow(0.9999, scalar("w", 0.0f));
    for (int i = 0; i < 1000; ++i) slow.update(w);
    const double err = 1.0 - slow.evaluation_params()[0].values[0];
    CHECK(err == doctest::Approx(std::pow(0.9999, 1000)).epsilon(1e-2));
}
