#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "terngrad/tensor.hpp"

namespace terngrad {

// --- learning-rate schedules ----------------------------------------------

enum class ScheduleKind { Constant, Polynomial, Staircase };

struct LrSchedule {
    ScheduleKind kind = ScheduleKind::Constant;
    double base = 0.1;
    double power = 0.5;        // polynomial
    std::uint64_t max_iter = 1;
    double factor = 0.1;       // staircase
    std::uint64_t step = 1;

    static LrSchedule constant(double base) { return {ScheduleKind::Constant, base}; }
    static LrSchedule polynomial(double base, double power, std::uint64_t max_iter) {
        LrSchedule s;
        s.kind = ScheduleKind::Polynomial;
        s.base = base;
        s.power = power;
        s.max_iter = max_iter;
        return s;
    }
    static LrSchedule staircase(double base, double factor, std::uint64_t step) {
        LrSchedule s;
        s.kind = ScheduleKind::Staircase;
        s.base = base;
        s.factor = factor;
        s.step = step;
        return s;
    }

    double lr(std::uint64_t t) const {
        switch (kind) {
            case ScheduleKind::Constant:
                return base;
            case ScheduleKind::Polynomial: {
                const std::uint64_t tc = std::min(t, max_iter);
                const double frac = 1.0 - static_cast<double>(tc) / static_cast<double>(max_iter);
                return base * std::pow(frac, power);
            }
            case ScheduleKind::Staircase:
                return base * std::pow(factor, static_cast<double>(t / step));
        }
        return base;
    }
};

// --- update rules ----------------------------------------------------------

enum class OptimizerRule { Vanilla, Momentum, Adam };

struct OptimizerConfig {
    OptimizerRule rule = OptimizerRule::Vanilla;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

// Per-worker optimizer state. Applied identically at every worker to the same
// averaged gradient, so parameter consistency follows from determinism alone.
class OptimizerState {
public:
    explicit OptimizerState(OptimizerConfig cfg) : cfg_(cfg) {}

    const OptimizerConfig& config() const { return cfg_; }
    std::uint64_t step_count() const { return step_; }

    void apply(std::vector<GradTensor>& params,
               const std::vector<GradTensor>& avg_grad, double rate) {
        if (params.size() != avg_grad.size())
            throw std::invalid_argument("optimizer: param/grad count mismatch");
        if (buffers_.empty()) init_buffers(params);
        ++step_;
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto& w = params[p].values;
            const auto& g = avg_grad[p].values;
            if (w.size() != g.size())
                throw std::invalid_argument("optimizer: shape mismatch on " + params[p].name);
            switch (cfg_.rule) {
                case OptimizerRule::Vanilla:
                    for (std::size_t k = 0; k < w.size(); ++k) {
                        const float eff = g[k] + static_cast<float>(cfg_.weight_decay) * w[k];
                        w[k] -= static_cast<float>(rate) * eff;
                    }
                    break;
                case OptimizerRule::Momentum: {
                    // gradient-accumulation form: v <- mu*v + g; w <- w - rate*v
                    auto& v = buffers_[p].values;
                    for (std::size_t k = 0; k < w.size(); ++k) {
                        const float eff = g[k] + static_cast<float>(cfg_.weight_decay) * w[k];
                        v[k] = static_cast<float>(cfg_.momentum) * v[k] + eff;
                        w[k] -= static_cast<float>(rate) * v[k];
                    }
                    break;
                }
                case OptimizerRule::Adam: {
                    auto& m = buffers_[p].values;
                    auto& v = buffers2_[p].values;
                    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
                    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
                    for (std::size_t k = 0; k < w.size(); ++k) {
                        const double eff = g[k] + cfg_.weight_decay * w[k];
                        m[k] = static_cast<float>(cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * eff);
                        v[k] = static_cast<float>(cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * eff * eff);
                        const double mhat = m[k] / bc1;
                        const double vhat = v[k] / bc2;
                        w[k] -= static_cast<float>(rate * mhat / (std::sqrt(vhat) + cfg_.epsilon));
                    }
                    break;
                }
            }
        }
    }

private:
    void init_buffers(const std::vector<GradTensor>& params) {
        for (const auto& p : params) {
            buffers_.emplace_back(p.name, p.shape);
            if (cfg_.rule == OptimizerRule::Adam) buffers2_.emplace_back(p.name, p.shape);
        }
    }

    OptimizerConfig cfg_;
    std::uint64_t step_ = 0;
    std::vector<GradTensor> buffers_;   // velocity, or first moment
    std::vector<GradTensor> buffers2_;  // second moment (Adam)
};

// --- parameter EMA ---------------------------------------------------------

// shadow <- decay*shadow + (1-decay)*w, evaluated after each update; shadow
// is what evaluation reads, training params are never touched.
class EmaShadow {
public:
    EmaShadow(double decay, const std::vector<GradTensor>& params)
        : decay_(decay), shadow_(params) {
        if (decay < 0.0 || decay >= 1.0 + 1e-12)
            throw std::invalid_argument("ema: decay must be in [0,1)");
    }

    void update(const std::vector<GradTensor>& params) {
        for (std::size_t p = 0; p < shadow_.size(); ++p)
            for (std::size_t k = 0; k < shadow_[p].values.size(); ++k)
                shadow_[p].values[k] = static_cast<float>(
                    decay_ * shadow_[p].values[k] + (1.0 - decay_) * params[p].values[k]);
    }

    const std::vector<GradTensor>& evaluation_params() const { return shadow_; }
    double decay() const { return decay_; }

private:
    double decay_;
    std::vector<GradTensor> shadow_;
};

}  // namespace terngrad
