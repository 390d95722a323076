#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "terngrad/cluster.hpp"
#include "terngrad/data.hpp"
#include "terngrad/perfmodel.hpp"
#include "terngrad/rng.hpp"

namespace terngrad {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetSpec {
    SyntheticTask task = SyntheticTask::LinearSeparable;
    std::size_t n = 1000;
    std::size_t dim = 8;
    std::size_t classes = 2;
    std::string idx_images;  // optional: read IDX instead of synthesizing
    std::string idx_labels;

    Dataset load(std::uint64_t seed) const {
        if (!idx_images.empty()) {
            Dataset ds = read_idx(idx_images, classes);
            if (!idx_labels.empty()) {
                const Dataset labels = read_idx(idx_labels, classes);
                if (labels.labels.size() != ds.labels.size())
                    throw ConfigError("dataset: image/label count mismatch");
                ds.labels = labels.labels;
            }
            return ds;
        }
        return make_synthetic(task, n, dim, classes, seed);
    }
};

struct ExperimentConfig {
    TrainSpec spec;
    DatasetSpec dataset;
    std::string canonical;  // serialized form the hash covers

    std::uint64_t config_hash() const { return fnv1a64(canonical); }
    std::string config_hash_hex() const {
        std::ostringstream os;
        os << std::hex << config_hash();
        return os.str();
    }
};

namespace detail_cfg {

using nlohmann::json;

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config field '" + key + "': " + e.what());
    }
}

inline void check_keys(const json& j, const std::string& scope,
                       std::initializer_list<const char*> allowed) {
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (k == a) ok = true;
        if (!ok) throw ConfigError("unknown config key '" + scope + "." + k + "'");
    }
}

}  // namespace detail_cfg

inline ExperimentConfig parse_experiment_config(const std::string& text) {
    using nlohmann::json;
    using detail_cfg::get_or;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    detail_cfg::check_keys(j, "", {"seed", "iterations", "model", "dataset", "cluster",
                                   "codec", "optimizer", "schedule", "ema"});

    ExperimentConfig cfg;
    TrainSpec& s = cfg.spec;
    s.cluster.seed = get_or<std::uint64_t>(j, "seed", 42);
    s.iterations = get_or<std::uint64_t>(j, "iterations", 100);

    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail_cfg::check_keys(m, "model", {"tag", "hidden"});
        s.model = model_kind_from_string(get_or<std::string>(m, "tag", "linear-softmax"));
        s.hidden = get_or<std::size_t>(m, "hidden", 32);
    }
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        detail_cfg::check_keys(d, "dataset",
                               {"task", "n", "dim", "classes", "idx_images", "idx_labels"});
        cfg.dataset.task =
            synthetic_task_from_string(get_or<std::string>(d, "task", "linear-separable"));
        cfg.dataset.n = get_or<std::size_t>(d, "n", 1000);
        cfg.dataset.dim = get_or<std::size_t>(d, "dim", 8);
        cfg.dataset.classes = get_or<std::size_t>(d, "classes", 2);
        cfg.dataset.idx_images = get_or<std::string>(d, "idx_images", "");
        cfg.dataset.idx_labels = get_or<std::string>(d, "idx_labels", "");
    }
    if (j.contains("cluster")) {
        const auto& c = j.at("cluster");
        detail_cfg::check_keys(
            c, "cluster", {"workers", "transport", "host", "port", "total_batch", "weak_scaling"});
        s.cluster.workers = get_or<std::size_t>(c, "workers", 1);
        const std::string tr = get_or<std::string>(c, "transport", "in-process");
        if (tr == "in-process")
            s.cluster.transport = TransportKind::InProcess;
        else if (tr == "socket")
            s.cluster.transport = TransportKind::Socket;
        else
            throw ConfigError("cluster.transport must be 'in-process' or 'socket'");
        s.cluster.host = get_or<std::string>(c, "host", "127.0.0.1");
        s.cluster.port = get_or<std::uint16_t>(c, "port", 0);
        s.cluster.total_batch = get_or<std::size_t>(c, "total_batch", 64);
        s.cluster.weak_scaling = get_or<bool>(c, "weak_scaling", false);
    }
    if (j.contains("codec")) {
        const auto& c = j.at("codec");
        detail_cfg::check_keys(c, "codec",
                               {"mode", "clip_factor", "clipping", "bucketing", "bucket_size",
                                "scaler_sharing", "passthrough"});
        const std::string mode = get_or<std::string>(c, "mode", "ternary");
        if (mode == "float")
            s.cluster.codec.float_mode = true;
        else if (mode != "ternary")
            throw ConfigError("codec.mode must be 'ternary' or 'float'");
        s.cluster.codec.clip_factor = get_or<float>(c, "clip_factor", 2.5f);
        s.cluster.codec.clipping_enabled = get_or<bool>(c, "clipping", true);
        const std::string b = get_or<std::string>(c, "bucketing", "per-tensor");
        if (b == "per-tensor")
            s.cluster.codec.bucketing = Bucketing::PerTensor;
        else if (b == "global")
            s.cluster.codec.bucketing = Bucketing::Global;
        else if (b == "fixed-size")
            s.cluster.codec.bucketing = Bucketing::FixedSize;
        else
            throw ConfigError("codec.bucketing must be per-tensor, global or fixed-size");
        s.cluster.codec.bucket_size = get_or<std::size_t>(c, "bucket_size", 0);
        s.cluster.codec.scaler_sharing = get_or<bool>(c, "scaler_sharing", true);
        for (const auto& name : get_or<std::vector<std::string>>(c, "passthrough", {}))
            s.cluster.codec.passthrough.insert(name);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        detail_cfg::check_keys(o, "optimizer",
                               {"rule", "momentum", "beta1", "beta2", "epsilon", "weight_decay"});
        const std::string rule = get_or<std::string>(o, "rule", "vanilla");
        if (rule == "vanilla")
            s.opt.rule = OptimizerRule::Vanilla;
        else if (rule == "momentum")
            s.opt.rule = OptimizerRule::Momentum;
        else if (rule == "adam")
            s.opt.rule = OptimizerRule::Adam;
        else
            throw ConfigError("optimizer.rule must be vanilla, momentum or adam");
        s.opt.momentum = get_or<double>(o, "momentum", 0.9);
        s.opt.beta1 = get_or<double>(o, "beta1", 0.9);
        s.opt.beta2 = get_or<double>(o, "beta2", 0.999);
        s.opt.epsilon = get_or<double>(o, "epsilon", 1e-8);
        s.opt.weight_decay = get_or<double>(o, "weight_decay", 0.0);
    }
    if (j.contains("schedule")) {
        const auto& sc = j.at("schedule");
        detail_cfg::check_keys(sc, "schedule",
                               {"kind", "base", "power", "max_iter", "factor", "step"});
        const std::string kind = get_or<std::string>(sc, "kind", "constant");
        const double base = get_or<double>(sc, "base", 0.1);
        if (kind == "constant")
            s.schedule = LrSchedule::constant(base);
        else if (kind == "polynomial")
            s.schedule = LrSchedule::polynomial(
                base, get_or<double>(sc, "power", 0.5),
                get_or<std::uint64_t>(sc, "max_iter", s.iterations));
        else if (kind == "staircase")
            s.schedule = LrSchedule::staircase(base, get_or<double>(sc, "factor", 0.1),
                                               get_or<std::uint64_t>(sc, "step", 100));
        else
            throw ConfigError("schedule.kind must be constant, polynomial or staircase");
    }
    if (j.contains("ema")) {
        const auto& e = j.at("ema");
        detail_cfg::check_keys(e, "ema", {"decay"});
        s.ema_decay = get_or<double>(e, "decay", 0.9999);
    }

    cfg.canonical = j.dump();  // nlohmann objects are key-sorted
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_experiment_config(ss.str());
}

// --- perf-model scenarios ---------------------------------------------------

// Flat key = value lines, '#' comments. Keys mirror PerfModelParams plus the
// sweep controls.
struct PerfScenario {
    PerfModelParams base;
    std::vector<double> worker_counts;
    double max_gpus_per_machine = 4;
    bool weak = true;
    std::string name;
};

inline PerfScenario parse_perf_scenario(const std::string& text, std::string name = "") {
    PerfScenario sc;
    sc.name = std::move(name);
    sc.base.batch = 256;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (eq == std::string::npos)
            throw ConfigError("scenario line " + std::to_string(lineno) + ": expected key = value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "grad_bytes") sc.base.grad_bytes = std::stod(val);
            else if (key == "gpu_bw") sc.base.gpu_bw = std::stod(val);
            else if (key == "cpu_gpu_bw") sc.base.cpu_gpu_bw = std::stod(val);
            else if (key == "net_latency") sc.base.net_latency = std::stod(val);
            else if (key == "net_bw") sc.base.net_bw = std::stod(val);
            else if (key == "step_time") sc.base.step_time = std::stod(val);
            else if (key == "batch") sc.base.batch = std::stod(val);
            else if (key == "max_gpus_per_machine") sc.max_gpus_per_machine = std::stod(val);
            else if (key == "scaling") {
                if (val == "weak") sc.weak = true;
                else if (val == "strong") sc.weak = false;
                else throw ConfigError("scaling must be weak or strong");
            } else if (key == "workers") {
                std::istringstream ws(val);
                std::string tok;
                while (std::getline(ws, tok, ','))
                    sc.worker_counts.push_back(std::stod(tok));
            } else
                throw ConfigError("scenario line " + std::to_string(lineno) +
                                  ": unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ConfigError("scenario line " + std::to_string(lineno) + ": bad number '" +
                              val + "'");
        }
    }
    if (sc.worker_counts.empty())
        for (double n = 2; n <= 512; n *= 2) sc.worker_counts.push_back(n);
    sc.base.validate();
    return sc;
}

inline PerfScenario load_perf_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string name = path;
    const auto slash = name.find_last_of('/');
    if (slash != std::string::npos) name = name.substr(slash + 1);
    const auto dot = name.find_last_of('.');
    if (dot != std::string::npos) name = name.substr(0, dot);
    return parse_perf_scenario(ss.str(), name);
}

}  // namespace terngrad
