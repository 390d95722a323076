#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "terngrad/rng.hpp"
#include "terngrad/tensor.hpp"

namespace terngrad {

enum class ModelKind { LinearSoftmax, Mlp1Hidden };

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "linear-softmax") return ModelKind::LinearSoftmax;
    if (s == "mlp-1-hidden") return ModelKind::Mlp1Hidden;
    throw std::invalid_argument("unknown model tag: " + s);
}

// Two fixed architectures, no autodiff graph. Forward/backward are
// deterministic pure functions of (parameters, batch); accumulations run in
// double to keep the fp32 trajectory stable at desk scale.
class Model {
public:
    Model(ModelKind kind, std::size_t dim, std::size_t classes,
          std::size_t hidden = 32)
        : kind_(kind), dim_(dim), classes_(classes), hidden_(hidden) {
        if (kind_ == ModelKind::LinearSoftmax) {
            params_.emplace_back("fc.weight", std::vector<std::size_t>{classes_, dim_});
            params_.emplace_back("fc.bias", std::vector<std::size_t>{classes_});
        } else {
            params_.emplace_back("fc1.weight", std::vector<std::size_t>{hidden_, dim_});
            params_.emplace_back("fc1.bias", std::vector<std::size_t>{hidden_});
            params_.emplace_back("fc2.weight", std::vector<std::size_t>{classes_, hidden_});
            params_.emplace_back("fc2.bias", std::vector<std::size_t>{classes_});
        }
    }

    // Identical seed -> identical init on every worker; parameters then never
    // cross the wire (only gradients do).
    void init_random(std::uint64_t seed, float scale = 0.1f) {
        for (auto& p : params_) {
            RngStream rs(seed, 0, "init/" + p.name);
            const bool is_bias = p.name.ends_with(".bias");
            for (std::size_t k = 0; k < p.size(); ++k)
                p.values[k] = is_bias ? 0.0f : scale * rs.normal(k);
        }
    }

    ModelKind kind() const { return kind_; }
    std::size_t input_dim() const { return dim_; }
    std::size_t num_classes() const { return classes_; }
    std::vector<GradTensor>& parameters() { return params_; }
    const std::vector<GradTensor>& parameters() const { return params_; }

    struct ForwardBackward {
        double loss = 0.0;
        std::vector<GradTensor> grads;
    };

    ForwardBackward forward_backward(const Batch& batch) const {
        check_batch(batch);
        return kind_ == ModelKind::LinearSoftmax ? fb_linear(batch) : fb_mlp(batch);
    }

    double loss(const Batch& batch) const { return forward_backward(batch).loss; }

    // argmax class per row
    std::vector<int> predict(const Batch& batch) const {
        check_batch(batch);
        std::vector<int> out(batch.batch_size);
        std::vector<double> logits;
        for (std::size_t r = 0; r < batch.batch_size; ++r) {
            logits_for_row(batch, r, logits);
            out[r] = static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                                      logits.begin());
        }
        return out;
    }

    double accuracy(const Batch& batch) const {
        const auto pred = predict(batch);
        std::size_t hit = 0;
        for (std::size_t r = 0; r < pred.size(); ++r)
            if (pred[r] == batch.labels[r]) ++hit;
        return batch.batch_size ? static_cast<double>(hit) / batch.batch_size : 0.0;
    }

private:
    void check_batch(const Batch& batch) const {
        if (batch.batch_size == 0 || batch.dim != dim_)
            throw std::invalid_argument("batch dim " + std::to_string(batch.dim) +
                                        " does not match model dim " +
                                        std::to_string(dim_));
        if (batch.inputs.size() != batch.batch_size * batch.dim ||
            batch.labels.size() != batch.batch_size)
            throw std::invalid_argument("batch inputs/labels size mismatch");
        for (int y : batch.labels)
            if (y < 0 || static_cast<std::size_t>(y) >= classes_)
                throw std::invalid_argument("label out of range");
    }

    // logits for one row under current params (used by predict/eval only)
    void logits_for_row(const Batch& batch, std::size_t r,
                        std::vector<double>& logits) const {
        const float* x = &batch.inputs[r * dim_];
        if (kind_ == ModelKind::LinearSoftmax) {
            const auto& W = params_[0].values;
            const auto& b = params_[1].values;
            logits.assign(classes_, 0.0);
            for (std::size_t c = 0; c < classes_; ++c) {
                double z = b[c];
                for (std::size_t d = 0; d < dim_; ++d) z += static_cast<double>(W[c * dim_ + d]) * x[d];
                logits[c] = z;
            }
        } else {
            const auto& W1 = params_[0].values;
            const auto& b1 = params_[1].values;
            const auto& W2 = params_[2].values;
            const auto& b2 = params_[3].values;
            std::vector<double> h(hidden_);
            for (std::size_t u = 0; u < hidden_; ++u) {
                double z = b1[u];
                for (std::size_t d = 0; d < dim_; ++d) z += static_cast<double>(W1[u * dim_ + d]) * x[d];
                h[u] = std::tanh(z);
            }
            logits.assign(classes_, 0.0);
            for (std::size_t c = 0; c < classes_; ++c) {
                double z = b2[c];
                for (std::size_t u = 0; u < hidden_; ++u) z += static_cast<double>(W2[c * hidden_ + u]) * h[u];
                logits[c] = z;
            }
        }
    }

    // softmax cross-entropy with row-max subtraction; fills dlogits in place
    static double softmax_ce_grad(std::vector<double>& logits, int label) {
        const double m = *std::max_element(logits.begin(), logits.end());
        double denom = 0.0;
        for (double& z : logits) {
            z = std::exp(z - m);
            denom += z;
        }
        const double loss = -std::log(logits[static_cast<std::size_t>(label)] / denom);
        for (std::size_t c = 0; c < logits.size(); ++c) logits[c] /= denom;
        logits[static_cast<std::size_t>(label)] -= 1.0;
        return loss;
    }

    ForwardBackward fb_linear(const Batch& batch) const {
        ForwardBackward out;
        std::vector<double> dW(classes_ * dim_, 0.0), db(classes_, 0.0);
        std::vector<double> logits;
        double loss = 0.0;
        for (std::size_t r = 0; r < batch.batch_size; ++r) {
            logits_for_row(batch, r, logits);
            loss += softmax_ce_grad(logits, batch.labels[r]);
            const float* x = &batch.inputs[r * dim_];
            for (std::size_t c = 0; c < classes_; ++c) {
                db[c] += logits[c];
                for (std::size_t d = 0; d < dim_; ++d) dW[c * dim_ + d] += logits[c] * x[d];
            }
        }
        const double inv = 1.0 / static_cast<double>(batch.batch_size);
        out.loss = loss * inv;
        out.grads.emplace_back("fc.weight", params_[0].shape);
        out.grads.emplace_back("fc.bias", params_[1].shape);
        for (std::size_t k = 0; k < dW.size(); ++k) out.grads[0].values[k] = static_cast<float>(dW[k] * inv);
        for (std::size_t k = 0; k < db.size(); ++k) out.grads[1].values[k] = static_cast<float>(db[k] * inv);
        return out;
    }

    ForwardBackward fb_mlp(const Batch& batch) const {
        ForwardBackward out;
        const auto& W1 = params_[0].values;
        const auto& b1 = params_[1].values;
        const auto& W2 = params_[2].values;
        const auto& b2 = params_[3].values;
        std::vector<double> dW1(hidden_ * dim_, 0.0), db1(hidden_, 0.0);
        std::vector<double> dW2(classes_ * hidden_, 0.0), db2(classes_, 0.0);
        std::vector<double> h(hidden_), logits(classes_), dh(hidden_);
        double loss = 0.0;
        for (std::size_t r = 0; r < batch.batch_size; ++r) {
            const float* x = &batch.inputs[r * dim_];
            for (std::size_t u = 0; u < hidden_; ++u) {
                double z = b1[u];
                for (std::size_t d = 0; d < dim_; ++d) z += static_cast<double>(W1[u * dim_ + d]) * x[d];
                h[u] = std::tanh(z);
            }
            for (std::size_t c = 0; c < classes_; ++c) {
                double z = b2[c];
                for (std::size_t u = 0; u < hidden_; ++u) z += static_cast<double>(W2[c * hidden_ + u]) * h[u];
                logits[c] = z;
            }
            loss += softmax_ce_grad(logits, batch.labels[r]);
            for (std::size_t u = 0; u < hidden_; ++u) {
                double g = 0.0;
                for (std::size_t c = 0; c < classes_; ++c) g += logits[c] * static_cast<double>(W2[c * hidden_ + u]);
                dh[u] = g * (1.0 - h[u] * h[u]);
            }
            for (std::size_t c = 0; c < classes_; ++c) {
                db2[c] += logits[c];
                for (std::size_t u = 0; u < hidden_; ++u) dW2[c * hidden_ + u] += logits[c] * h[u];
            }
            for (std::size_t u = 0; u < hidden_; ++u) {
                db1[u] += dh[u];
                for (std::size_t d = 0; d < dim_; ++d) dW1[u * dim_ + d] += dh[u] * x[d];
            }
        }
        const double inv = 1.0 / static_cast<double>(batch.batch_size);
        out.loss = loss * inv;
        out.grads.emplace_back("fc1.weight", params_[0].shape);
        out.grads.emplace_back("fc1.bias", params_[1].shape);
        out.grads.emplace_back("fc2.weight", params_[2].shape);
        out.grads.emplace_back("fc2.bias", params_[3].shape);
        const std::vector<double>* src[4] = {&dW1, &db1, &dW2, &db2};
        for (int p = 0; p < 4; ++p)
            for (std::size_t k = 0; k < src[p]->size(); ++k)
                out.grads[static_cast<std::size_t>(p)].values[k] =
                    static_cast<float>((*src[p])[k] * inv);
        return out;
    }

    ModelKind kind_;
    std::size_t dim_, classes_, hidden_;
    std::vector<GradTensor> params_;
};

}  // namespace terngrad
