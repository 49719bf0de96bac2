#include "ckn/run_config.hpp"

#include <set>

#include "ckn/error.hpp"

namespace ckn {

namespace {

void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <class T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

template <class T>
void read_optional(const Json& j, const char* key, std::optional<T>& out, const std::string& where) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null()) {
        out.reset();
        return;
    }
    T v;
    read(j, key, v, where);
    out = v;
}

template <class T>
Json optional_json(const std::optional<T>& v) {
    return v ? Json(*v) : Json(nullptr);
}

}  // namespace

NetworkSpec NetworkChoice::resolve() const {
    if (spec) {
        if (arch) throw ConfigError("give either an architecture name or a network spec, not both");
        return *spec;
    }
    if (!arch) throw ConfigError("no network given (use --arch or --config)");
    NetworkSpec s = builtin_architecture(*arch, filters);
    if (supervised_kernels) s = supervised_variant(std::move(s), sigma);
    return s;
}

Json to_json(const OptimizerConfig& c) {
    Json j;
    j["optimizer"] = to_string(c.optimizer);
    j["hessian"] = to_string(c.hessian);
    j["loss"] = to_string(c.loss);
    j["tau"] = c.tau;
    j["lambda"] = optional_json(c.lambda);
    j["batch_size"] = c.batch_size;
    j["iterations"] = c.iterations;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["log_every"] = c.log_every;
    j["step_lo"] = optional_json(c.step_lo);
    j["step_hi"] = c.step_hi;
    j["search_every"] = c.search_every;
    j["search_iters"] = c.search_iters;
    j["refresh_radius"] = c.refresh_radius;
    j["fixed_step"] = optional_json(c.fixed_step);
    j["rollback"] = c.rollback;
    j["rollback_drop"] = c.rollback_drop;
    j["classifier_max_iters"] = c.classifier_max_iters;
    j["cv_lo"] = c.cv_lo;
    j["cv_hi"] = c.cv_hi;
    j["cv_step"] = c.cv_step;
    j["ball_radius"] = optional_json(c.ball_radius);
    j["init_patches"] = c.init.patches_per_layer;
    j["kmeans_iters"] = c.init.kmeans_iters;
    j["metrics_subset"] = c.metrics_subset;
    j["record_timing"] = c.record_timing;
    return j;
}

OptimizerConfig optimizer_config_from_json(const Json& j, OptimizerConfig c) {
    const std::string w = "optimizer";
    check_keys(j,
               {"optimizer", "hessian", "loss", "tau", "lambda", "batch_size", "iterations",
                "seed", "threads", "log_every", "step_lo", "step_hi", "search_every",
                "search_iters", "refresh_radius", "fixed_step", "rollback", "rollback_drop",
                "classifier_max_iters", "cv_lo", "cv_hi", "cv_step", "ball_radius",
                "init_patches", "kmeans_iters", "metrics_subset", "record_timing"},
               w);
    std::string name;
    if (j.contains("optimizer")) {
        read(j, "optimizer", name, w);
        c.optimizer = optimizer_from_string(name);
    }
    if (j.contains("hessian")) {
        read(j, "hessian", name, w);
        c.hessian = hessian_from_string(name);
    }
    if (j.contains("loss")) {
        read(j, "loss", name, w);
        c.loss = loss_from_string(name);
    }
    read(j, "tau", c.tau, w);
    read_optional(j, "lambda", c.lambda, w);
    read(j, "batch_size", c.batch_size, w);
    read(j, "iterations", c.iterations, w);
    read(j, "seed", c.seed, w);
    read(j, "threads", c.threads, w);
    read(j, "log_every", c.log_every, w);
    read_optional(j, "step_lo", c.step_lo, w);
    read(j, "step_hi", c.step_hi, w);
    read(j, "search_every", c.search_every, w);
    read(j, "search_iters", c.search_iters, w);
    read(j, "refresh_radius", c.refresh_radius, w);
    read_optional(j, "fixed_step", c.fixed_step, w);
    read(j, "rollback", c.rollback, w);
    read(j, "rollback_drop", c.rollback_drop, w);
    read(j, "classifier_max_iters", c.classifier_max_iters, w);
    read(j, "cv_lo", c.cv_lo, w);
    read(j, "cv_hi", c.cv_hi, w);
    read(j, "cv_step", c.cv_step, w);
    read_optional(j, "ball_radius", c.ball_radius, w);
    read(j, "init_patches", c.init.patches_per_layer, w);
    read(j, "kmeans_iters", c.init.kmeans_iters, w);
    read(j, "metrics_subset", c.metrics_subset, w);
    read(j, "record_timing", c.record_timing, w);
    c.validate();
    return c;
}

Json to_json(const DataConfig& c) {
    Json j;
    j["dataset"] = c.dataset;
    j["dir"] = c.dir;
    j["train_size"] = c.train_size;
    j["val_size"] = c.val_size;
    j["test_size"] = c.test_size;
    j["split_seed"] = c.split_seed;
    return j;
}

DataConfig data_config_from_json(const Json& j, DataConfig c) {
    const std::string w = "data";
    check_keys(j, {"dataset", "dir", "train_size", "val_size", "test_size", "split_seed"}, w);
    read(j, "dataset", c.dataset, w);
    read(j, "dir", c.dir, w);
    read(j, "train_size", c.train_size, w);
    read(j, "val_size", c.val_size, w);
    read(j, "test_size", c.test_size, w);
    read(j, "split_seed", c.split_seed, w);
    if (c.dataset != "mnist" && c.dataset != "cifar10")
        throw ConfigError("data.dataset must be mnist or cifar10");
    return c;
}

Json to_json(const NetworkChoice& c) {
    if (c.spec) return to_json(*c.spec);
    Json j;
    j["arch"] = c.arch ? Json(to_string(*c.arch)) : Json(nullptr);
    j["filters"] = optional_json(c.filters);
    j["kernels"] = c.supervised_kernels ? "supervised" : "builtin";
    j["sigma"] = c.sigma;
    return j;
}

NetworkChoice network_choice_from_json(const Json& j) {
    NetworkChoice c;
    if (j.is_object() && j.contains("layers")) {
        try {
            c.spec = network_from_json(j);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(std::string("network spec: ") + e.what());
        }
        return c;
    }
    const std::string w = "network";
    check_keys(j, {"arch", "filters", "kernels", "sigma"}, w);
    std::string name;
    read(j, "arch", name, w);
    if (!name.empty()) c.arch = builtin_from_string(name);
    read_optional(j, "filters", c.filters, w);
    std::string kernels = "supervised";
    read(j, "kernels", kernels, w);
    if (kernels != "supervised" && kernels != "builtin")
        throw ConfigError("network.kernels must be supervised or builtin");
    c.supervised_kernels = kernels == "supervised";
    read(j, "sigma", c.sigma, w);
    return c;
}

Json to_json(const RunConfig& c) {
    Json j;
    j["network"] = to_json(c.network);
    j["optimizer"] = to_json(c.optimizer);
    j["data"] = to_json(c.data);
    return j;
}

RunConfig run_config_from_json(const Json& j) {
    RunConfig c;
    if (j.is_object() && j.contains("layers")) {
        c.network = network_choice_from_json(j);
        return c;
    }
    check_keys(j, {"network", "optimizer", "data"}, "run config");
    if (j.contains("network")) c.network = network_choice_from_json(j.at("network"));
    if (j.contains("optimizer")) c.optimizer = optimizer_config_from_json(j.at("optimizer"));
    if (j.contains("data")) c.data = data_config_from_json(j.at("data"));
    return c;
}

RunConfig read_run_config(const std::string& path) {
    Json j;
    try {
        j = read_json_file(path);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace ckn
