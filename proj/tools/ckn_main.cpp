// Command-line front end: translate, init, train, eval, gradcheck.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "ckn/arch.hpp"
#include "ckn/checkpoint.hpp"
#include "ckn/error.hpp"
#include "ckn/gradcheck.hpp"
#include "ckn/run_config.hpp"

namespace fs = std::filesystem;
using namespace ckn;

namespace {

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCheckpoint = 3;
constexpr int kExitGradcheck = 4;

// Flags shared by the subcommands; unset values leave the config file in charge.
struct Flags {
    std::string arch;
    std::string config;
    std::optional<int> filters;
    std::optional<std::uint64_t> seed;
    std::optional<int> iters;
    std::optional<int> batch;
    std::string optimizer;
    std::string hessian;
    std::optional<double> tau;
    std::optional<double> lambda;
    std::string data_dir;
    std::string dataset;
    std::optional<std::size_t> train_size;
    std::optional<std::size_t> val_size;
    std::optional<std::size_t> test_size;
    std::string out_dir = ".";
    std::optional<int> threads;
    std::optional<int> log_every;
    std::optional<int> init_patches;
    std::string kernels;
    bool no_timing = false;
};

void add_network_flags(CLI::App* app, Flags& f) {
    app->add_option("--arch", f.arch, "Built-in architecture: lenet1, lenet5, allcnnc");
    app->add_option("--config", f.config, "Run config or network spec (JSON)");
    app->add_option("--filters", f.filters, "Filters per layer for built-in architectures");
    app->add_option("--kernels", f.kernels,
                    "Kernels of built-ins: supervised (rbf_sphere, default) or builtin");
}

void add_data_flags(CLI::App* app, Flags& f) {
    app->add_option("--data-dir", f.data_dir, "Dataset directory (default: $CKN_DATA_DIR)");
    app->add_option("--dataset", f.dataset, "mnist or cifar10");
    app->add_option("--train-size", f.train_size, "Training images kept after the split (0 = all)");
    app->add_option("--val-size", f.val_size, "Validation images held out from the training set");
    app->add_option("--test-size", f.test_size, "Test images used (0 = all)");
}

void add_run_flags(CLI::App* app, Flags& f) {
    app->add_option("--seed", f.seed, "Random seed (default 0)");
    app->add_option("--iters", f.iters, "Optimizer iterations");
    app->add_option("--batch", f.batch, "Mini-batch size");
    app->add_option("--optimizer", f.optimizer, "ulr or sgo");
    app->add_option("--hessian", f.hessian, "full or diag");
    app->add_option("--tau", f.tau, "Regularization of the quadratic classifier model");
    app->add_option("--lambda", f.lambda, "Classifier L2 penalty (default: cross-validated)");
    app->add_option("--out-dir", f.out_dir, "Directory for metrics, checkpoints and specs");
    app->add_option("--threads", f.threads, "Worker threads (1 is bit-deterministic)");
    app->add_option("--log-every", f.log_every, "Iterations between metrics rows");
    app->add_option("--init-patches", f.init_patches, "Patches sampled per layer for the k-means initialization");
    app->add_flag("--no-timing", f.no_timing, "Write zero wall-clock times")->group("");
}

RunConfig resolve(const Flags& f) {
    if (!f.arch.empty() && !f.config.empty())
        throw ConfigError("--arch and --config are mutually exclusive");
    RunConfig rc = f.config.empty() ? RunConfig{} : read_run_config(f.config);
    if (!f.arch.empty()) {
        rc.network = NetworkChoice{};
        rc.network.arch = builtin_from_string(f.arch);
    }
    if (f.filters) {
        if (rc.network.spec) throw ConfigError("--filters applies to built-in architectures only");
        rc.network.filters = *f.filters;
    }
    if (!f.kernels.empty()) {
        if (f.kernels != "supervised" && f.kernels != "builtin")
            throw ConfigError("--kernels must be supervised or builtin");
        rc.network.supervised_kernels = f.kernels == "supervised";
    }
    auto& o = rc.optimizer;
    if (f.seed) o.seed = *f.seed;
    if (f.iters) o.iterations = *f.iters;
    if (f.batch) o.batch_size = *f.batch;
    if (!f.optimizer.empty()) o.optimizer = optimizer_from_string(f.optimizer);
    if (!f.hessian.empty()) o.hessian = hessian_from_string(f.hessian);
    if (f.tau) o.tau = *f.tau;
    if (f.lambda) o.lambda = *f.lambda;
    if (f.threads) o.threads = *f.threads;
    if (f.log_every) o.log_every = *f.log_every;
    if (f.init_patches) o.init.patches_per_layer = *f.init_patches;
    if (f.no_timing) o.record_timing = false;
    o.validate();
    auto& d = rc.data;
    if (!f.data_dir.empty()) {
        d.dir = f.data_dir;
    } else if (d.dir.empty()) {
        if (const char* env = std::getenv("CKN_DATA_DIR")) d.dir = env;
    }
    if (!f.dataset.empty()) d.dataset = f.dataset;
    if (f.train_size) d.train_size = *f.train_size;
    if (f.val_size) d.val_size = *f.val_size;
    if (f.test_size) d.test_size = *f.test_size;
    return rc;
}

void print_row(const MetricsRow& r) {
    std::printf("iter %d  loss %.6f  train_acc %.4f  val_acc %.4f  step %.6g\n", r.iteration,
                r.train_loss, r.train_acc, r.val_acc, r.step);
    std::fflush(stdout);
}

int run_training(const Flags& f, bool init_only) {
    RunConfig rc = resolve(f);
    if (init_only) rc.optimizer.iterations = 0;
    const NetworkSpec spec = rc.network.resolve();
    validate_shapes(spec);
    fs::create_directories(f.out_dir);
    write_text_file((fs::path(f.out_dir) / "run.json").string(), dump(to_json(rc)));
    write_text_file((fs::path(f.out_dir) / "spec.json").string(), dump(to_json(spec)));

    const PreparedData data = prepare_data(rc.data);
    const auto provenance = data.train.provenance;
    const std::string metrics = (fs::path(f.out_dir) / "metrics.csv").string();
    const std::string latest = (fs::path(f.out_dir) / "checkpoint.ckpt").string();
    write_metrics_header(metrics);
    TrainHooks hooks;
    hooks.on_log = [&](const TrainState& s, const MetricsRow& r) {
        append_metrics_row(metrics, r);
        save_checkpoint(latest, make_checkpoint(s, provenance));
        print_row(r);
    };
    const TrainState st = train_supervised(spec, data.train, data.val.size() ? &data.val : nullptr,
                                           rc.optimizer, hooks);
    const std::string final_path =
        (fs::path(f.out_dir) / (init_only ? "init.ckpt" : "final.ckpt")).string();
    save_checkpoint(final_path, make_checkpoint(st, provenance));
    const Network net(spec);
    std::printf("test_accuracy %.4f\n", model_accuracy(net, st.model, data.test, rc.optimizer.threads));
    return 0;
}

int run_translate(const Flags& f, const std::string& out) {
    NetworkSpec spec;
    if (!f.config.empty()) {
        if (!f.arch.empty()) throw ConfigError("--arch and --config are mutually exclusive");
        spec = translate_convnet(read_json_file(f.config));
    } else if (!f.arch.empty()) {
        spec = builtin_architecture(builtin_from_string(f.arch), f.filters);
    } else {
        throw ConfigError("translate needs --config (ConvNet description) or --arch");
    }
    const auto shapes = validate_shapes(spec);
    const std::string text = dump(to_json(spec));
    if (out.empty()) {
        std::cout << text;
        std::cerr << format_shape_report(spec, shapes);
    } else {
        write_text_file(out, text);
        std::cout << format_shape_report(spec, shapes);
    }
    return 0;
}

int run_eval(const Flags& f, const std::string& checkpoint, const std::string& split,
             std::size_t limit) {
    const Checkpoint c = load_checkpoint(checkpoint);
    RunConfig rc = resolve(f);
    DataConfig& d = rc.data;
    Dataset ds;
    if (split == "test") {
        if (limit) d.test_size = limit;
        ds = load_test_split(d, c.provenance);
    } else if (split == "train") {
        if (d.dir.empty()) throw ConfigError("no data directory given");
        Dataset raw = d.dataset == "mnist" ? load_mnist_dir(d.dir, true)
                                           : throw ConfigError("--split train supports mnist only");
        if (limit) raw = head(raw, limit);
        ds = replay_provenance(std::move(raw), c.provenance);
    } else {
        throw ConfigError("--split must be test or train");
    }
    const Network net(c.model.spec);
    std::printf("accuracy %.4f\n", model_accuracy(net, c.model, ds, rc.optimizer.threads));
    return 0;
}

int run_gradcheck(const Flags& f, int count, bool corrupt) {
    const BuiltinArch family = builtin_from_string(f.arch.empty() ? "lenet5" : f.arch);
    const int cap = std::min(f.filters.value_or(4), 4);
    const std::uint64_t seed = f.seed.value_or(0);
    GradcheckOptions opt;
    opt.corrupt_vjp = corrupt;
    int status = 0;
    for (int i = 0; i < count; ++i) {
        const NetworkSpec spec = tiny_family_network(family, seed + static_cast<std::uint64_t>(i), cap);
        const GradcheckReport rep = gradient_check(spec, seed + static_cast<std::uint64_t>(i), opt);
        std::cout << rep.format();
        if (!rep.passed) {
            std::cerr << "gradcheck failed: " << rep.failure << '\n';
            status = kExitGradcheck;
        }
    }
    return status;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Convolutional kernel networks: translation, training and evaluation"};
    app.require_subcommand(1);
    Flags f;

    auto* translate = app.add_subcommand("translate", "Translate a ConvNet description into a CKN spec");
    std::string out;
    translate->add_option("--arch", f.arch, "Dump a built-in architecture instead");
    translate->add_option("--config", f.config, "ConvNet description (JSON)");
    translate->add_option("--filters", f.filters, "Filter override for --arch");
    translate->add_option("--out", out, "Spec output file (default: stdout)");

    auto* init = app.add_subcommand("init", "Unsupervised initialization and classifier fit");
    add_network_flags(init, f);
    add_data_flags(init, f);
    add_run_flags(init, f);

    auto* train = app.add_subcommand("train", "Supervised training");
    add_network_flags(train, f);
    add_data_flags(train, f);
    add_run_flags(train, f);

    auto* eval = app.add_subcommand("eval", "Accuracy of a checkpoint");
    std::string checkpoint;
    std::string split = "test";
    std::size_t limit = 0;
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--split", split, "test or train");
    eval->add_option("--limit", limit, "Evaluate the first N images only");
    add_data_flags(eval, f);
    eval->add_option("--threads", f.threads, "Worker threads");

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check on tiny networks");
    int count = 1;
    bool corrupt = false;
    gradcheck->add_option("--arch", f.arch, "Architecture family (default lenet5)");
    gradcheck->add_option("--filters", f.filters, "Filter cap (at most 4)");
    gradcheck->add_option("--seed", f.seed, "Random seed");
    gradcheck->add_option("--count", count, "Number of random networks");
    gradcheck->add_flag("--corrupt-vjp", corrupt, "Perturb one analytic gradient")->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*translate) return run_translate(f, out);
        if (*init) return run_training(f, true);
        if (*train) return run_training(f, false);
        if (*eval) return run_eval(f, checkpoint, split, limit);
        if (*gradcheck) return run_gradcheck(f, count, corrupt);
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return kExitCheckpoint;
    } catch (const TranslationError& e) {
        std::cerr << "translation error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitError;
}
