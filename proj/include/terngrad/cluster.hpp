#pragma once

#include <cstdint>
#include <deque>
#include <exception>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "terngrad/codec.hpp"
#include "terngrad/data.hpp"
#include "terngrad/model.hpp"
#include "terngrad/optimizer.hpp"
#include "terngrad/transport.hpp"
#include "terngrad/wire.hpp"

namespace terngrad {

enum class TransportKind { InProcess, Socket };

struct ClusterConfig {
    std::size_t workers = 1;
    TransportKind transport = TransportKind::InProcess;
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;  // 0 = ephemeral
    std::uint64_t seed = 42;
    CodecConfig codec;
    std::size_t total_batch = 64;  // strong scaling: split as M/N
    bool weak_scaling = false;     // weak scaling: total_batch is per worker

    std::size_t per_worker_batch() const {
        if (weak_scaling) return total_batch;
        if (workers == 0 || total_batch % workers != 0)
            throw std::invalid_argument("cluster: worker count must divide total batch");
        return total_batch / workers;
    }
};

struct TrainSpec {
    ModelKind model = ModelKind::LinearSoftmax;
    std::size_t hidden = 32;
    ClusterConfig cluster;
    OptimizerConfig opt;
    LrSchedule schedule = LrSchedule::constant(0.1);
    double ema_decay = 0.9999;
    std::uint64_t iterations = 100;
};

struct IterationRecord {
    std::uint64_t iteration = 0;
    double mean_loss = 0.0;
    double eval_accuracy = 0.0;  // on EMA params, worker 0
    double zero_fraction = 0.0;  // mean over workers, code-weighted
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
};

struct TrafficStats {
    std::uint64_t bytes_up = 0;         // worker -> server, framed
    std::uint64_t bytes_down = 0;       // server -> worker, framed
    std::uint64_t float_bytes_up = 0;   // same traffic at raw fp32
    std::uint64_t float_bytes_down = 0;

    double up_reduction() const {
        return bytes_up ? static_cast<double>(float_bytes_up) / bytes_up : 1.0;
    }
    double down_reduction() const {
        return bytes_down ? static_cast<double>(float_bytes_down) / bytes_down : 1.0;
    }
};

struct WorkerResult {
    std::vector<double> losses;          // per iteration
    std::vector<double> zero_fractions;  // per iteration
    std::vector<double> eval_accuracy;   // worker 0 only
    std::vector<GradTensor> final_params;
    std::vector<GradTensor> ema_params;
    std::vector<GradTensor> last_grads;  // raw gradients of the final iteration
    bool diverged = false;
};

struct RunResult {
    std::vector<IterationRecord> records;
    std::vector<WorkerResult> workers;
    TrafficStats traffic;
    bool diverged = false;

    double final_loss() const {
        return records.empty() ? 0.0 : records.back().mean_loss;
    }
    double final_eval_accuracy() const {
        return records.empty() ? 0.0 : records.back().eval_accuracy;
    }
};

// --- server ----------------------------------------------------------------

// One synchronous aggregation round: wait for all N pushes of iteration t,
// fold them, broadcast one identical Pull. With scaler sharing the fold is
// pure integer code sums plus a max over scalers; the 1/N division happens
// at the workers.
class ParameterServer {
public:
    ParameterServer(ServerTransport& transport, std::size_t workers, bool scaler_sharing)
        : transport_(transport), n_(workers), sharing_(scaler_sharing) {}

    void wait_for_registration() {
        std::set<std::uint16_t> seen;
        while (seen.size() < n_) {
            Message m = transport_.recv();
            if (m.type == MsgType::Push) {
                // a fast worker's first push can overtake a slow worker's
                // Register in the shared inbox; keep it for step(0)
                pending_.push_back(std::move(m));
                continue;
            }
            if (m.type != MsgType::Register)
                throw ProtocolError("server: expected Register, got type " +
                                    std::to_string(static_cast<int>(m.type)));
            if (!seen.insert(m.worker).second)
                throw ProtocolError("server: duplicate registration");
        }
    }

    void run(std::uint64_t iterations) {
        wait_for_registration();
        for (std::uint64_t t = 0; t < iterations; ++t) step(t);
        drain_shutdown();
    }

    void step(std::uint64_t t) {
        std::map<std::uint16_t, EncodedGradient> received;
        while (received.size() < n_) {
            const Message m = next_message();
            if (m.type != MsgType::Push)
                throw ProtocolError("server: unexpected message type mid-iteration");
            if (m.iteration != t)
                throw ProtocolError("server: iteration skew, expected " + std::to_string(t) +
                                    " got " + std::to_string(m.iteration));
            if (received.contains(m.worker))
                throw ProtocolError("server: duplicate push from worker " +
                                    std::to_string(m.worker));
            traffic_.bytes_up += m.framed_size();
            EncodedGradient e = deserialize_encoded(m.payload, m.iteration, m.worker);
            traffic_.float_bytes_up += kHeaderSize + float_wire_size(e);
            received.emplace(m.worker, std::move(e));
        }
        const PullMessage pull = aggregate(received);
        Message out;
        out.type = MsgType::Pull;
        out.iteration = t;
        out.payload = serialize_pull(pull);
        for (std::uint16_t w = 0; w < n_; ++w) {
            transport_.send(w, out);
            traffic_.bytes_down += out.framed_size();
            traffic_.float_bytes_down += kHeaderSize + float_pull_size(pull);
        }
    }

    const TrafficStats& traffic() const { return traffic_; }

private:
    PullMessage aggregate(const std::map<std::uint16_t, EncodedGradient>& received) const {
        const auto& first = received.begin()->second;
        for (const auto& [w, e] : received)
            if (e.blocks.size() != first.blocks.size())
                throw ProtocolError("server: block structure mismatch from worker " +
                                    std::to_string(w));
        PullMessage pull;
        for (std::size_t b = 0; b < first.blocks.size(); ++b) {
            if (std::holds_alternative<PassthroughBlock>(first.blocks[b])) {
                const auto& f = std::get<PassthroughBlock>(first.blocks[b]);
                FloatAvgBlock fb;
                fb.name = f.name;
                fb.values.resize(f.values.size());
                for (std::size_t k = 0; k < fb.values.size(); ++k) {
                    double sum = 0.0;  // worker-id order, deterministic
                    for (const auto& [w, e] : received)
                        sum += std::get<PassthroughBlock>(e.blocks[b]).values[k];
                    fb.values[k] = static_cast<float>(sum / static_cast<double>(n_));
                }
                pull.blocks.push_back(std::move(fb));
                continue;
            }
            const auto& f = std::get<TernaryBlock>(first.blocks[b]);
            if (sharing_) {
                SharedSumBlock sb;
                sb.name = f.name;
                sb.n = f.n;
                sb.workers = static_cast<std::uint16_t>(n_);
                for (const auto& [w, e] : received)
                    sb.s = std::max(sb.s, std::get<TernaryBlock>(e.blocks[b]).s);
                sb.sums.assign(f.n, 0);
                for (const auto& [w, e] : received) {
                    const auto& blk = std::get<TernaryBlock>(e.blocks[b]);
                    if (blk.n != f.n)
                        throw ProtocolError("server: bucket size mismatch at " + f.name);
                    for (std::size_t k = 0; k < blk.n; ++k) sb.sums[k] += blk.code_at(k);
                }
                pull.blocks.push_back(std::move(sb));
            } else {
                FloatAvgBlock fb;
                fb.name = f.name;
                fb.values.assign(f.n, 0.0f);
                for (std::size_t k = 0; k < f.n; ++k) {
                    double sum = 0.0;
                    for (const auto& [w, e] : received) {
                        const auto& blk = std::get<TernaryBlock>(e.blocks[b]);
                        sum += static_cast<double>(blk.s) * blk.code_at(k);
                    }
                    fb.values[k] = static_cast<float>(sum / static_cast<double>(n_));
                }
                pull.blocks.push_back(std::move(fb));
            }
        }
        return pull;
    }

    void drain_shutdown() {
        std::size_t got = 0;
        while (got < n_) {
            const Message m = next_message();
            if (m.type == MsgType::Shutdown) ++got;
        }
    }

    Message next_message() {
        if (!pending_.empty()) {
            Message m = std::move(pending_.front());
            pending_.pop_front();
            return m;
        }
        return transport_.recv();
    }

    std::deque<Message> pending_;
    ServerTransport& transport_;
    std::size_t n_;
    bool sharing_;
    TrafficStats traffic_;
};

// --- worker ----------------------------------------------------------------

class Worker {
public:
    Worker(WorkerTransport& transport, std::uint16_t id, const TrainSpec& spec,
           const Dataset& dataset)
        : transport_(transport), id_(id), spec_(spec), dataset_(dataset) {}

    WorkerResult run() {
        WorkerResult res;
        Model model(spec_.model, dataset_.dim, dataset_.classes, spec_.hidden);
        model.init_random(spec_.cluster.seed);
        OptimizerState opt(spec_.opt);
        EmaShadow ema(spec_.ema_decay, model.parameters());

        Message reg;
        reg.type = MsgType::Register;
        reg.worker = id_;
        transport_.send(reg);

        const std::size_t per = spec_.cluster.per_worker_batch();
        const std::size_t n_workers = spec_.cluster.workers;
        const std::size_t stride = spec_.cluster.weak_scaling
                                       ? per * n_workers
                                       : spec_.cluster.total_batch;
        CodecConfig codec = spec_.cluster.codec;
        codec.seed = spec_.cluster.seed;
        if (codec.float_mode)
            for (const auto& p : model.parameters()) codec.passthrough.insert(p.name);

        for (std::uint64_t t = 0; t < spec_.iterations; ++t) {
            const std::size_t start = static_cast<std::size_t>(t) * stride + id_ * per;
            const Batch batch = dataset_.slice_wrapped(start, per);
            auto fb = model.forward_backward(batch);
            if (!std::isfinite(fb.loss)) res.diverged = true;

            auto enc = encode_step(fb.grads, codec, t, id_);
            Message push;
            push.type = MsgType::Push;
            push.iteration = t;
            push.worker = id_;
            push.payload = serialize_encoded(enc.encoded);
            transport_.send(push);

            const Message reply = transport_.recv();
            if (reply.type != MsgType::Pull)
                throw ProtocolError("worker: expected Pull");
            if (reply.iteration != t)
                throw ProtocolError("worker: pull iteration skew");
            auto avg = decode_pull(deserialize_pull(reply.payload));
            reshape_like(avg, model.parameters());

            opt.apply(model.parameters(), avg, spec_.schedule.lr(t));
            ema.update(model.parameters());

            res.losses.push_back(fb.loss);
            res.zero_fractions.push_back(zero_fraction(enc.encoded));
            if (id_ == 0) {
                const Batch eval = dataset_.whole();
                Model shadow(spec_.model, dataset_.dim, dataset_.classes, spec_.hidden);
                shadow.parameters() = ema.evaluation_params();
                res.eval_accuracy.push_back(shadow.accuracy(eval));
            }
            if (t + 1 == spec_.iterations) res.last_grads = fb.grads;
        }

        Message bye;
        bye.type = MsgType::Shutdown;
        bye.worker = id_;
        bye.iteration = spec_.iterations;
        transport_.send(bye);

        res.final_params = model.parameters();
        res.ema_params = ema.evaluation_params();
        return res;
    }

private:
    static void reshape_like(std::vector<GradTensor>& avg,
                             const std::vector<GradTensor>& params) {
        if (avg.size() != params.size())
            throw ProtocolError("worker: averaged gradient tensor count mismatch");
        for (std::size_t p = 0; p < avg.size(); ++p) {
            if (avg[p].name != params[p].name || avg[p].values.size() != params[p].size())
                throw ProtocolError("worker: averaged gradient mismatch at " + params[p].name);
            avg[p].shape = params[p].shape;
        }
    }

    static double zero_fraction(const EncodedGradient& e) {
        std::size_t zeros = 0, total = 0;
        for (const auto& b : e.blocks) {
            if (const auto* t = std::get_if<TernaryBlock>(&b)) {
                for (std::size_t k = 0; k < t->n; ++k)
                    if (t->code_at(k) == 0) ++zeros;
                total += t->n;
            }
        }
        return total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
    }

    WorkerTransport& transport_;
    std::uint16_t id_;
    const TrainSpec& spec_;
    const Dataset& dataset_;
};

// --- orchestration ----------------------------------------------------------

// Runs the whole cluster (server + N workers) in one process. The transport
// kind decides whether messages cross real sockets or in-process mailboxes;
// the bytes on the wire are identical either way.
inline RunResult run_cluster(const TrainSpec& spec, const Dataset& dataset) {
    const std::size_t n = spec.cluster.workers;
    if (n == 0) throw std::invalid_argument("cluster: need at least one worker");
    spec.cluster.codec.validate();
    (void)spec.cluster.per_worker_batch();  // validates divisibility up front

    RunResult result;
    result.workers.resize(n);
    std::vector<std::exception_ptr> errors(n + 1);

    auto worker_body = [&](std::uint16_t id, WorkerTransport& wt) {
        try {
            Worker w(wt, id, spec, dataset);
            result.workers[id] = w.run();
        } catch (...) {
            errors[id + 1] = std::current_exception();
        }
    };

    if (spec.cluster.transport == TransportKind::InProcess) {
        InProcessHub hub(n);
        InProcessServerTransport st(hub);
        ParameterServer server(st, n, spec.cluster.codec.scaler_sharing);
        std::thread server_thread([&] {
            try {
                server.run(spec.iterations);
            } catch (...) {
                errors[0] = std::current_exception();
            }
        });
        std::vector<std::thread> threads;
        std::vector<std::unique_ptr<InProcessWorkerTransport>> wts;
        for (std::uint16_t i = 0; i < n; ++i)
            wts.push_back(std::make_unique<InProcessWorkerTransport>(hub, i));
        for (std::uint16_t i = 0; i < n; ++i)
            threads.emplace_back(worker_body, i, std::ref(*wts[i]));
        for (auto& th : threads) th.join();
        server_thread.join();
        result.traffic = server.traffic();
    } else {
        auto st = std::make_unique<SocketServerTransport>(spec.cluster.port, n);
        const std::uint16_t port = st->port();
        ParameterServer server(*st, n, spec.cluster.codec.scaler_sharing);
        std::thread server_thread([&] {
            try {
                server.run(spec.iterations);
            } catch (...) {
                errors[0] = std::current_exception();
            }
        });
        std::vector<std::thread> threads;
        for (std::uint16_t i = 0; i < n; ++i)
            threads.emplace_back([&, i] {
                try {
                    SocketWorkerTransport wt(spec.cluster.host, port, i);
                    Worker w(wt, i, spec, dataset);
                    result.workers[i] = w.run();
                } catch (...) {
                    errors[i + 1] = std::current_exception();
                }
            });
        for (auto& th : threads) th.join();
        server_thread.join();
        result.traffic = server.traffic();
    }

    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    // fold per-worker records into the aggregate view
    result.records.resize(spec.iterations);
    const double up_per_iter =
        spec.iterations ? static_cast<double>(result.traffic.bytes_up) / spec.iterations : 0;
    const double down_per_iter =
        spec.iterations ? static_cast<double>(result.traffic.bytes_down) / spec.iterations : 0;
    for (std::uint64_t t = 0; t < spec.iterations; ++t) {
        auto& rec = result.records[t];
        rec.iteration = t;
        for (const auto& w : result.workers) {
            rec.mean_loss += w.losses[t] / static_cast<double>(n);
            rec.zero_fraction += w.zero_fractions[t] / static_cast<double>(n);
            result.diverged = result.diverged || w.diverged;
        }
        rec.eval_accuracy = result.workers[0].eval_accuracy[t];
        rec.bytes_up = static_cast<std::uint64_t>(up_per_iter);
        rec.bytes_down = static_cast<std::uint64_t>(down_per_iter);
    }
    return result;
}

}  // namespace terngrad
