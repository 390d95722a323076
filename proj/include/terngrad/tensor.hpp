#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace terngrad {

// Named, shaped, dense fp32 block. Holds both gradients and parameters.
struct GradTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> values;

    GradTensor() = default;
    GradTensor(std::string n, std::vector<std::size_t> s)
        : name(std::move(n)), shape(std::move(s)) {
        values.assign(element_count(shape), 0.0f);
    }
    GradTensor(std::string n, std::vector<std::size_t> s, std::vector<float> v)
        : name(std::move(n)), shape(std::move(s)), values(std::move(v)) {
        if (values.size() != element_count(shape))
            throw std::invalid_argument("GradTensor " + name + ": values/shape mismatch");
    }

    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    std::size_t size() const { return values.size(); }

    bool all_finite() const {
        for (float v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

struct Batch {
    std::size_t batch_size = 0;
    std::size_t dim = 0;
    std::vector<float> inputs;  // batch_size x dim, row-major
    std::vector<int> labels;
};

inline double l1_norm(const std::vector<float>& v) {
    double s = 0.0;
    for (float x : v) s += std::abs(static_cast<double>(x));
    return s;
}

inline double l2_norm(const std::vector<float>& v) {
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(s);
}

inline float max_abs(const std::vector<float>& v) {
    float m = 0.0f;
    for (float x : v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace terngrad
