// terngrad: experiment runner and inspection front end.
//
// Subcommands: train, bench-codec, perf-model, inspect.
// Exit codes: 0 success, 2 config error, 3 numeric divergence, 4 transport failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "terngrad/cluster.hpp"
#include "terngrad/codec.hpp"
#include "terngrad/config.hpp"
#include "terngrad/csv.hpp"
#include "terngrad/data.hpp"
#include "terngrad/perfmodel.hpp"

namespace tg = terngrad;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitTransport = 4;

void apply_seed_override(tg::ExperimentConfig& cfg) {
    if (const char* env = std::getenv("TERNGRAD_SEED")) {
        cfg.spec.cluster.seed = std::strtoull(env, nullptr, 10);
        cfg.canonical += "|TERNGRAD_SEED=" + std::string(env);
    }
}

void write_run_dump(const fs::path& path, const tg::ExperimentConfig& cfg,
                    const tg::RunResult& result, std::uint64_t last_iteration) {
    json dump;
    std::string cfg_json = cfg.canonical;  // TERNGRAD_SEED override is appended after '|'
    if (const auto bar = cfg_json.find('|'); bar != std::string::npos) cfg_json.resize(bar);
    dump["config"] = json::parse(cfg_json);
    dump["config_hash"] = cfg.config_hash_hex();
    dump["iteration"] = last_iteration;
    dump["seed"] = cfg.spec.cluster.seed;
    json workers = json::array();
    for (const auto& w : result.workers) {
        json grads = json::array();
        for (const auto& g : w.last_grads) {
            json t;
            t["name"] = g.name;
            t["shape"] = g.shape;
            t["values"] = g.values;
            grads.push_back(std::move(t));
        }
        workers.push_back(json{{"grads", std::move(grads)}});
    }
    dump["workers"] = std::move(workers);
    std::ofstream out(path);
    out << dump.dump();
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& role, int worker_id, std::uint16_t listen_port,
              const std::string& connect) {
    tg::ExperimentConfig cfg = tg::load_experiment_config(config_path);
    apply_seed_override(cfg);
    fs::create_directories(out_dir);
    const tg::Dataset dataset = cfg.dataset.load(cfg.spec.cluster.seed);

    if (role == "server") {
        tg::SocketServerTransport st(listen_port ? listen_port : cfg.spec.cluster.port,
                                     cfg.spec.cluster.workers);
        std::cerr << "server listening on port " << st.port() << "\n";
        tg::ParameterServer server(st, cfg.spec.cluster.workers,
                                   cfg.spec.cluster.codec.scaler_sharing &&
                                       !cfg.spec.cluster.codec.float_mode);
        server.run(cfg.spec.iterations);
        tg::CsvWriter csv((fs::path(out_dir) / "traffic.csv").string(), cfg.config_hash_hex());
        csv.row({"bytes_up", "bytes_down", "up_reduction", "down_reduction"});
        const auto& tr = server.traffic();
        csv.row({std::to_string(tr.bytes_up), std::to_string(tr.bytes_down),
                 tg::CsvWriter::num(tr.up_reduction()), tg::CsvWriter::num(tr.down_reduction())});
        return kExitOk;
    }
    if (role == "worker") {
        const auto colon = connect.find(':');
        if (colon == std::string::npos)
            throw tg::ConfigError("--connect expects host:port");
        const std::string host = connect.substr(0, colon);
        const auto port = static_cast<std::uint16_t>(std::stoi(connect.substr(colon + 1)));
        tg::SocketWorkerTransport wt(host, port, static_cast<std::uint16_t>(worker_id));
        tg::Worker worker(wt, static_cast<std::uint16_t>(worker_id), cfg.spec, dataset);
        const tg::WorkerResult res = worker.run();
        tg::CsvWriter csv((fs::path(out_dir) / ("metrics-worker" + std::to_string(worker_id) +
                                                ".csv"))
                              .string(),
                          cfg.config_hash_hex());
        csv.row({"iteration", "loss", "zero_fraction", "eval_accuracy"});
        for (std::size_t t = 0; t < res.losses.size(); ++t)
            csv.row({std::to_string(t), tg::CsvWriter::num(res.losses[t]),
                     tg::CsvWriter::num(res.zero_fractions[t]),
                     worker_id == 0 ? tg::CsvWriter::num(res.eval_accuracy[t]) : ""});
        return res.diverged ? kExitDiverged : kExitOk;
    }

    const tg::RunResult result = tg::run_cluster(cfg.spec, dataset);
    tg::CsvWriter csv((fs::path(out_dir) / "metrics.csv").string(), cfg.config_hash_hex());
    csv.row({"iteration", "mean_loss", "eval_accuracy", "zero_fraction", "bytes_up",
             "bytes_down"});
    for (const auto& r : result.records)
        csv.row({std::to_string(r.iteration), tg::CsvWriter::num(r.mean_loss),
                 tg::CsvWriter::num(r.eval_accuracy), tg::CsvWriter::num(r.zero_fraction),
                 std::to_string(r.bytes_up), std::to_string(r.bytes_down)});
    if (cfg.spec.iterations > 0)
        write_run_dump(fs::path(out_dir) / "run.json", cfg, result, cfg.spec.iterations - 1);
    return result.diverged ? kExitDiverged : kExitOk;
}

int cmd_bench_codec(const std::vector<std::size_t>& sizes, int trials,
                    const std::string& out_dir) {
    if (trials < 1) throw tg::ConfigError("bench-codec: trials must be >= 1");
    for (std::size_t n : sizes)
        if (n == 0) throw tg::ConfigError("bench-codec: size 0 rejected");
    fs::create_directories(out_dir);
    std::string key = "bench";
    for (std::size_t n : sizes) key += "," + std::to_string(n);
    tg::CsvWriter csv((fs::path(out_dir) / "bench_codec.csv").string(),
                      [&] {
                          std::ostringstream os;
                          os << std::hex << tg::fnv1a64(key);
                          return os.str();
                      }());
    csv.row({"n", "trial", "encode_melem_per_s", "decode_melem_per_s", "compression_ratio"});
    for (std::size_t n : sizes) {
        tg::GradTensor g("g", {n});
        tg::RngStream rs(7, 0, "bench");
        for (std::size_t k = 0; k < n; ++k) g.values[k] = rs.normal(k);
        tg::CodecConfig cc;
        cc.seed = 7;
        for (int trial = 0; trial < trials; ++trial) {
            const auto t0 = std::chrono::steady_clock::now();
            auto enc = tg::encode_step({g}, cc, static_cast<std::uint64_t>(trial), 0);
            const auto t1 = std::chrono::steady_clock::now();
            const auto& blk = std::get<tg::TernaryBlock>(enc.encoded.blocks[0]);
            auto dec = tg::decode(blk);
            const auto t2 = std::chrono::steady_clock::now();
            const double enc_s = std::chrono::duration<double>(t1 - t0).count();
            const double dec_s = std::chrono::duration<double>(t2 - t1).count();
            const double ratio = static_cast<double>(tg::float_wire_size(enc.encoded)) /
                                 static_cast<double>(tg::wire_size(enc.encoded));
            csv.row({std::to_string(n), std::to_string(trial),
                     tg::CsvWriter::num(n / enc_s / 1e6), tg::CsvWriter::num(n / dec_s / 1e6),
                     tg::CsvWriter::num(ratio)});
        }
    }
    return kExitOk;
}

// on-wire bytes for one ternary tensor of raw size B, real serialization
double ternary_bytes_for(double raw_bytes) {
    const double n = raw_bytes / 4.0;
    return 2 + 1 + 2 + 1 + 4 + 4 + std::ceil(n / 4.0);
}

int cmd_perf_model(const std::string& scenario_path, const std::string& out_dir) {
    const tg::PerfScenario sc = tg::load_perf_scenario(scenario_path);
    fs::create_directories(out_dir);
    const auto rows = tg::speedup_curve(sc.base, ternary_bytes_for, sc.worker_counts,
                                        sc.max_gpus_per_machine, sc.weak);
    std::ifstream in(scenario_path);
    std::stringstream ss;
    ss << in.rdbuf();
    std::ostringstream hash;
    hash << std::hex << tg::fnv1a64(ss.str());
    tg::CsvWriter csv((fs::path(out_dir) / (sc.name + ".csv")).string(), hash.str());
    csv.row({"N", "i", "j", "tput_float", "tput_ternary", "speedup"});
    for (const auto& r : rows)
        csv.row({tg::CsvWriter::num(r.workers), tg::CsvWriter::num(r.gpus_per_machine),
                 tg::CsvWriter::num(r.machines), tg::CsvWriter::num(r.tput_float),
                 tg::CsvWriter::num(r.tput_ternary), tg::CsvWriter::num(r.speedup)});
    return kExitOk;
}

void write_histogram_csv(const fs::path& path, const std::string& hash,
                         const std::vector<tg::HistogramBin>& bins) {
    tg::CsvWriter csv(path.string(), hash);
    csv.row({"bin_edge", "count"});
    for (const auto& b : bins)
        csv.row({tg::CsvWriter::num(b.edge, 12), std::to_string(b.count)});
}

int cmd_inspect(const std::string& run_path, const std::string& tensor, std::size_t bins,
                const std::string& out_dir) {
    std::ifstream in(run_path);
    if (!in) throw tg::ConfigError("cannot open run file " + run_path);
    json dump;
    try {
        dump = json::parse(in);
    } catch (const json::exception& e) {
        throw tg::ConfigError(std::string("run file is not valid JSON: ") + e.what());
    }
    const tg::ExperimentConfig cfg = tg::parse_experiment_config(dump.at("config").dump());
    const std::uint64_t iteration = dump.at("iteration").get<std::uint64_t>();
    const std::uint64_t seed = dump.at("seed").get<std::uint64_t>();
    const std::string hash = dump.at("config_hash").get<std::string>();
    fs::create_directories(out_dir);

    // per-worker gradients of the dumped iteration
    std::vector<std::vector<tg::GradTensor>> grads;
    for (const auto& w : dump.at("workers")) {
        std::vector<tg::GradTensor> gs;
        for (const auto& t : w.at("grads")) {
            tg::GradTensor g;
            g.name = t.at("name").get<std::string>();
            g.shape = t.at("shape").get<std::vector<std::size_t>>();
            g.values = t.at("values").get<std::vector<float>>();
            gs.push_back(std::move(g));
        }
        grads.push_back(std::move(gs));
    }
    if (grads.empty()) throw tg::ConfigError("run file has no workers");

    const tg::GradTensor* original = nullptr;
    for (const auto& g : grads[0])
        if (g.name == tensor) original = &g;
    if (!original) throw tg::ConfigError("tensor '" + tensor + "' not in run file");

    tg::CodecConfig codec = cfg.spec.cluster.codec;
    codec.seed = seed;
    const tg::GradTensor clipped =
        codec.clipping_enabled ? tg::clip(*original, codec.clip_factor) : *original;

    std::vector<tg::EncodedGradient> encoded;
    for (std::uint16_t w = 0; w < grads.size(); ++w)
        encoded.push_back(tg::encode_step(grads[w], codec, iteration, w).encoded);
    tg::GradTensor ternary("ternary", {0});
    for (const auto& b : encoded[0].blocks) {
        if (const auto* t = std::get_if<tg::TernaryBlock>(&b)) {
            if (t->name != tensor) continue;
            const auto dec = tg::decode(*t);
            ternary.values.insert(ternary.values.end(), dec.values.begin(), dec.values.end());
        } else if (std::get<tg::PassthroughBlock>(b).name == tensor) {
            const auto& p = std::get<tg::PassthroughBlock>(b);
            ternary.values.insert(ternary.values.end(), p.values.begin(), p.values.end());
        }
    }
    ternary.shape = {ternary.values.size()};

    const auto averaged = tg::average(encoded, encoded.size(), codec.scaler_sharing);
    const tg::GradTensor* avg = nullptr;
    for (const auto& g : averaged)
        if (g.name == tensor) avg = &g;
    if (!avg) throw tg::ConfigError("tensor '" + tensor + "' missing from average");

    const fs::path dir(out_dir);
    write_histogram_csv(dir / ("hist_" + tensor + "_original.csv"), hash,
                        tg::histogram(*original, bins));
    write_histogram_csv(dir / ("hist_" + tensor + "_clipped.csv"), hash,
                        tg::histogram(clipped, bins));
    write_histogram_csv(dir / ("hist_" + tensor + "_ternary.csv"), hash,
                        tg::histogram(ternary, bins));
    write_histogram_csv(dir / ("hist_" + tensor + "_averaged.csv"), hash,
                        tg::histogram(*avg, bins));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TernGrad-style ternary gradient training harness"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", role = "all", connect = "127.0.0.1:7447";
    int worker_id = 0;
    std::uint16_t listen_port = 0;
    auto* train = app.add_subcommand("train", "run a training experiment");
    train->add_option("--config", config_path, "experiment config JSON")->required();
    train->add_option("--out", out_dir, "output directory");
    train->add_option("--role", role, "all | server | worker (socket multi-process mode)")
        ->check(CLI::IsMember({"all", "server", "worker"}));
    train->add_option("--id", worker_id, "worker id for --role worker");
    train->add_option("--listen", listen_port, "server listen port (0 = from config)");
    train->add_option("--connect", connect, "server host:port for --role worker");

    std::vector<std::size_t> sizes{1000, 100000, 1000000};
    int trials = 3;
    std::string bench_out = "out";
    auto* bench = app.add_subcommand("bench-codec", "encode/decode throughput and ratios");
    bench->add_option("--sizes", sizes, "tensor sizes");
    bench->add_option("--trials", trials, "trials per size");
    bench->add_option("--out", bench_out, "output directory");

    std::string scenario_path, perf_out = "out";
    auto* perf = app.add_subcommand("perf-model", "throughput model speedup curves");
    perf->add_option("--scenario", scenario_path, "scenario key=value file")->required();
    perf->add_option("--out", perf_out, "output directory");

    std::string run_path, tensor;
    std::size_t bins = 50;
    std::string inspect_out = "out";
    auto* inspect = app.add_subcommand("inspect", "gradient histograms from a run dump");
    inspect->add_option("--run", run_path, "run.json produced by train")->required();
    inspect->add_option("--tensor", tensor, "tensor name")->required();
    inspect->add_option("--bins", bins, "histogram bins");
    inspect->add_option("--out", inspect_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed())
            return cmd_train(config_path, out_dir, role, worker_id, listen_port, connect);
        if (bench->parsed()) return cmd_bench_codec(sizes, trials, bench_out);
        if (perf->parsed()) return cmd_perf_model(scenario_path, perf_out);
        if (inspect->parsed()) return cmd_inspect(run_path, tensor, bins, inspect_out);
    } catch (const tg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const tg::TransportError& e) {
        std::cerr << "transport error: " << e.what() << "\n";
        return kExitTransport;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
