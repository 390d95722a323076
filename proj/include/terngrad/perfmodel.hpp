#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

namespace terngrad {

// Analytical throughput model for data-parallel training with a hypercube
// all-reduce (log2 hops). A single profiled step time T(1,1,K,|g|) anchors
// the computation term; everything else is bandwidth arithmetic.
struct PerfModelParams {
    double gpus_per_machine = 1;  // i
    double machines = 1;          // j
    double batch = 1;             // K: total (strong) or per-worker (weak)
    double grad_bytes = 0;        // |g|
    double gpu_bw = 1;            // C_gwd, bytes/s
    double cpu_gpu_bw = 1;        // C_cwd, bytes/s
    double net_latency = 0;       // C_ncost, seconds
    double net_bw = 1;            // C_nwd, bytes/s
    double step_time = 1;         // profiled T(1,1,K,|g|), seconds

    void validate() const {
        if (gpus_per_machine < 1 || machines < 1 || batch < 1)
            throw std::invalid_argument("perfmodel: i, j, K must be >= 1");
        if (grad_bytes < 0) throw std::invalid_argument("perfmodel: |g| must be >= 0");
        if (gpu_bw <= 0 || cpu_gpu_bw <= 0 || net_bw <= 0)
            throw std::invalid_argument("perfmodel: bandwidths must be positive");
        if (net_latency < 0) throw std::invalid_argument("perfmodel: latency must be >= 0");
        if (step_time <= grad_bytes / cpu_gpu_bw)
            throw std::invalid_argument(
                "perfmodel: profiled step time must exceed the CPU-GPU transfer time");
    }

    double workers() const { return gpus_per_machine * machines; }
};

inline double t_comm(const PerfModelParams& p) {
    p.validate();
    return p.grad_bytes / p.gpu_bw * std::log2(p.gpus_per_machine) +
           p.grad_bytes / p.cpu_gpu_bw +
           (p.net_latency + p.grad_bytes / p.net_bw) * std::log2(p.machines);
}

inline double t_strong(const PerfModelParams& p) {
    return (p.step_time - p.grad_bytes / p.cpu_gpu_bw) / p.workers() + t_comm(p);
}

inline double tput_strong(const PerfModelParams& p) { return p.batch / t_strong(p); }

inline double t_weak(const PerfModelParams& p) {
    p.validate();
    // the C_cwd terms cancel between T_comp and T_comm
    return p.step_time + p.grad_bytes / p.gpu_bw * std::log2(p.gpus_per_machine) +
           (p.net_latency + p.grad_bytes / p.net_bw) * std::log2(p.machines);
}

inline double tput_weak(const PerfModelParams& p) {
    return p.workers() * p.batch / t_weak(p);
}

struct SpeedupRow {
    double workers;
    double gpus_per_machine;
    double machines;
    double tput_float;
    double tput_ternary;
    double speedup;
};

// Evaluates float vs. compressed throughput across worker counts.
// compressed_bytes maps raw |g| to on-wire bytes (fed from the codec's real
// serialization, not the ideal 32/log2(3) ratio). max_gpus_per_machine caps
// i; remaining parallelism goes to machines.
inline std::vector<SpeedupRow> speedup_curve(
    PerfModelParams base, const std::function<double(double)>& compressed_bytes,
    const std::vector<double>& worker_counts, double max_gpus_per_machine = 4,
    bool weak = true) {
    std::vector<SpeedupRow> rows;
    for (double n : worker_counts) {
        PerfModelParams p = base;
        p.gpus_per_machine = std::min(n, max_gpus_per_machine);
        p.machines = n / p.gpus_per_machine;
        PerfModelParams q = p;
        q.grad_bytes = compressed_bytes(p.grad_bytes);
        // the profiled step includes the |g|/C_cwd transfer; shrinking |g|
        // shrinks that component of the profile too
        q.step_time = p.step_time - (p.grad_bytes - q.grad_bytes) / p.cpu_gpu_bw;
        const double tf = weak ? tput_weak(p) : tput_strong(p);
        const double tt = weak ? tput_weak(q) : tput_strong(q);
        rows.push_back({n, p.gpus_per_machine, p.machines, tf, tt, tt / tf});
    }
    return rows;
}

}  // namespace terngrad
