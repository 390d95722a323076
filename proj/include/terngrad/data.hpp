#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "terngrad/rng.hpp"
#include "terngrad/tensor.hpp"

namespace terngrad {

struct Dataset {
    std::size_t dim = 0;
    std::size_t classes = 0;
    std::vector<float> inputs;  // n x dim, row-major
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }

    Batch whole() const { return slice_indices(0, size()); }

    // Samples [start, start+count) with wraparound. Sharding across workers is
    // pure (iteration, worker) arithmetic, so no data channel is needed.
    Batch slice_wrapped(std::size_t start, std::size_t count) const {
        Batch b;
        b.batch_size = count;
        b.dim = dim;
        b.inputs.resize(count * dim);
        b.labels.resize(count);
        for (std::size_t r = 0; r < count; ++r) {
            const std::size_t src = (start + r) % size();
            std::copy(inputs.begin() + static_cast<std::ptrdiff_t>(src * dim),
                      inputs.begin() + static_cast<std::ptrdiff_t>((src + 1) * dim),
                      b.inputs.begin() + static_cast<std::ptrdiff_t>(r * dim));
            b.labels[r] = labels[src];
        }
        return b;
    }

    Batch slice_indices(std::size_t start, std::size_t count) const {
        return slice_wrapped(start, count);
    }
};

enum class SyntheticTask { Blobs, LinearSeparable };

inline SyntheticTask synthetic_task_from_string(const std::string& s) {
    if (s == "blobs") return SyntheticTask::Blobs;
    if (s == "linear-separable") return SyntheticTask::LinearSeparable;
    throw std::invalid_argument("unknown synthetic task: " + s);
}

// Deterministic synthetic data. linear-separable enforces a score margin so a
// zero-training-error linear classifier is guaranteed to exist.
inline Dataset make_synthetic(SyntheticTask task, std::size_t n, std::size_t dim,
                              std::size_t classes, std::uint64_t seed) {
    if (n < 1 || dim < 1 || classes < 1)
        throw std::invalid_argument("make_synthetic: n, dim, classes must be >= 1");
    Dataset ds;
    ds.dim = dim;
    ds.classes = classes;
    ds.inputs.resize(n * dim);
    ds.labels.resize(n);

    if (task == SyntheticTask::Blobs) {
        RngStream centers(seed, 0, "blobs/centers");
        std::vector<float> mu(classes * dim);
        for (std::size_t k = 0; k < mu.size(); ++k) mu[k] = 3.0f * centers.normal(k);
        RngStream noise(seed, 0, "blobs/noise");
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t c = r % classes;
            ds.labels[r] = static_cast<int>(c);
            for (std::size_t d = 0; d < dim; ++d)
                ds.inputs[r * dim + d] = mu[c * dim + d] + 0.7f * noise.normal(r * dim + d);
        }
    } else {
        // ground-truth linear scorer; keep samples whose top-2 score gap >= margin
        RngStream wstar(seed, 0, "linsep/w");
        std::vector<float> W(classes * dim);
        for (std::size_t k = 0; k < W.size(); ++k) W[k] = wstar.normal(k);
        const double margin = 0.2;
        RngStream xs(seed, 0, "linsep/x");
        std::uint64_t attempt = 0;
        std::vector<double> score(classes);
        std::vector<float> x(dim);
        for (std::size_t r = 0; r < n;) {
            for (std::size_t d = 0; d < dim; ++d)
                x[d] = 2.0f * xs.uniform(attempt * dim + d) - 1.0f;
            ++attempt;
            double best = -1e300, second = -1e300;
            std::size_t arg = 0;
            for (std::size_t c = 0; c < classes; ++c) {
                double z = 0.0;
                for (std::size_t d = 0; d < dim; ++d) z += static_cast<double>(W[c * dim + d]) * x[d];
                score[c] = z;
                if (z > best) { second = best; best = z; arg = c; }
                else if (z > second) second = z;
            }
            if (classes > 1 && best - second < margin) continue;
            ds.labels[r] = static_cast<int>(arg);
            std::copy(x.begin(), x.end(), ds.inputs.begin() + static_cast<std::ptrdiff_t>(r * dim));
            ++r;
        }
    }
    return ds;
}

struct IdxFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// IDX reader (MNIST layout): big-endian magic 0x0000_08xx, dims, raw ubytes.
// Pixels are scaled to [0,1]. Label files (magic 0x801) fill labels instead.
inline Dataset read_idx(const std::string& path, std::size_t classes = 10) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IdxFormatError("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    auto be32 = [&](std::size_t off) -> std::uint32_t {
        if (off + 4 > bytes.size())
            throw IdxFormatError(path + ": truncated header at byte offset " +
                                 std::to_string(off));
        return (static_cast<std::uint32_t>(bytes[off]) << 24) |
               (static_cast<std::uint32_t>(bytes[off + 1]) << 16) |
               (static_cast<std::uint32_t>(bytes[off + 2]) << 8) |
               static_cast<std::uint32_t>(bytes[off + 3]);
    };
    const std::uint32_t magic = be32(0);
    if ((magic & 0xFFFFFF00u) != 0x00000800u)
        throw IdxFormatError(path + ": bad magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%08x", magic);
            return std::string(buf);
        }() + " at byte offset 0");
    const std::size_t ndims = magic & 0xFFu;
    if (ndims < 1 || ndims > 3)
        throw IdxFormatError(path + ": unsupported dimension count " +
                             std::to_string(ndims));
    std::vector<std::size_t> dims(ndims);
    std::size_t total = 1;
    for (std::size_t d = 0; d < ndims; ++d) {
        dims[d] = be32(4 + 4 * d);
        total *= dims[d];
    }
    const std::size_t payload_off = 4 + 4 * ndims;
    if (bytes.size() - payload_off != total)
        throw IdxFormatError(path + ": payload length mismatch, expected " +
                             std::to_string(total) + " bytes, got " +
                             std::to_string(bytes.size() - payload_off));

    Dataset ds;
    ds.classes = classes;
    if (ndims == 1) {
        ds.dim = 0;
        ds.labels.resize(dims[0]);
        for (std::size_t r = 0; r < dims[0]; ++r)
            ds.labels[r] = static_cast<int>(bytes[payload_off + r]);
    } else {
        const std::size_t n = dims[0];
        const std::size_t feat = total / n;
        ds.dim = feat;
        ds.inputs.resize(total);
        ds.labels.assign(n, 0);
        for (std::size_t k = 0; k < total; ++k)
            ds.inputs[k] = static_cast<float>(bytes[payload_off + k]) / 255.0f;
    }
    return ds;
}

}  // namespace terngrad
