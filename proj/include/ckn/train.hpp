#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ckn/classifier.hpp"
#include "ckn/data.hpp"
#include "ckn/error.hpp"
#include "ckn/init.hpp"
#include "ckn/network.hpp"
#include "ckn/ulr.hpp"

namespace ckn {

enum class OptimizerKind { Sgo, Ulr };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& name);
std::string to_string(HessianMode m);
HessianMode hessian_from_string(const std::string& name);
std::string to_string(LossKind k);
LossKind loss_from_string(const std::string& name);

struct OptimizerConfig {
    OptimizerKind optimizer = OptimizerKind::Ulr;
    HessianMode hessian = HessianMode::Full;
    LossKind loss = LossKind::Multinomial;
    double tau = 0.03125;
    // Classifier L2 strength; cross-validated on the validation set when unset.
    std::optional<double> lambda;
    int batch_size = 128;
    int iterations = 0;
    std::uint64_t seed = 0;
    int threads = 1;
    int log_every = 25;

    // Step sizes 2^i for i in [step_lo, step_hi], searched every `search_every`
    // iterations over 2^j s, |j| <= refresh_radius, around the current step s.
    // step_lo defaults to -6 for ULR and -10 for SGO.
    std::optional<int> step_lo;
    int step_hi = 2;
    int search_every = 100;
    int search_iters = 5;
    int refresh_radius = 3;
    std::optional<double> fixed_step;

    // Restore the last logged state and divide the step by 4 when the training
    // accuracy drops by more than rollback_drop between log rows.
    bool rollback = true;
    double rollback_drop = 0.02;

    int classifier_max_iters = 1000;
    int cv_lo = -40;
    int cv_hi = 0;
    int cv_step = 1;
    // Radius of the classifier ball for SGO; unset means the penalized form only.
    std::optional<double> ball_radius;

    InitOptions init;
    // Training metrics use the first `metrics_subset` training images (0 = all).
    std::size_t metrics_subset = 0;
    bool record_timing = true;

    // Throws ConfigError on an invalid combination.
    void validate() const;
};

// A trained network: filters, the feature normalization and the linear classifier.
struct Model {
    NetworkSpec spec;
    Weights weights;
    FeatureNormalization norm;
    Classifier cls;
    double lambda = 0.0;
};

struct MetricsRow {
    int iteration = 0;
    double wall_seconds = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;  // NaN without a validation set
    double max_row_dev = 0.0;
    double step = 0.0;
};

struct TrainState {
    Model model;
    int iteration = 0;
    double step = 0.0;
    std::vector<MetricsRow> metrics;
    std::mt19937_64 rng;
};

struct Batch {
    std::vector<const FeatureMap*> images;
    std::vector<int> labels;
};

// Draws batch_size distinct training indices.
Batch draw_batch(const Dataset& ds, int batch_size, std::mt19937_64& rng);

// Raw (unnormalized) features, one row per image.
Matrix extract_features(const Network& net, const Weights& w, const std::vector<FeatureMap>& images,
                        int threads);
Matrix model_features(const Network& net, const Model& m, const std::vector<FeatureMap>& images,
                      int threads);
double model_accuracy(const Network& net, const Model& m, const Dataset& ds, int threads);

// W <- row-normalize(W - step G); a row that vanishes keeps its previous value.
FilterBank project_rows(const FilterBank& W, const Matrix& G, double step);

// One projected stochastic gradient step on the batch objective.
void sgo_step(const Network& net, TrainState& state, const Batch& batch,
              const OptimizerConfig& cfg);

// One Ultimate Layer Reversal step: minimize the (quadratic model of the)
// classifier objective, step the filters along the normalized gradient of the
// minimal value and refit the classifier on the batch at the new filters.
void ulr_step(const Network& net, TrainState& state, const Batch& batch,
              const OptimizerConfig& cfg);

// Batch objective value of the current model (loss + lambda ||V||^2).
double batch_objective(const Network& net, const Model& m, const Batch& batch,
                       const OptimizerConfig& cfg);

// Picks the candidate minimizing `evaluate` after `iters` calls of `advance`,
// each candidate run from its own copy of `state`. Candidates that throw or
// produce a non-finite value count as diverged.
template <class State, class Advance, class Evaluate>
double step_size_search(const State& state, const std::vector<double>& candidates, int iters,
                        Advance&& advance, Evaluate&& evaluate);

// Full protocol on the state: runs search_iters steps from a copy per candidate
// and evaluates the objective on `probe`.
double search_step(const Network& net, const TrainState& state, const Dataset& train,
                   const Batch& probe, const std::vector<double>& candidates,
                   const OptimizerConfig& cfg);

std::vector<double> initial_step_grid(const OptimizerConfig& cfg);
std::vector<double> refresh_step_grid(double current, int radius);

struct TrainHooks {
    // Called after each metrics row is recorded.
    std::function<void(const TrainState&, const MetricsRow&)> on_log;
};

// Unsupervised initialization, classifier fit, T optimizer iterations with the
// step-size protocol, and a final cross-validated classifier fit that is kept
// unless the trained classifier scores higher on the validation set.
TrainState train_supervised(const NetworkSpec& spec, const Dataset& train, const Dataset* val,
                            const OptimizerConfig& cfg, const TrainHooks& hooks = {});

// Fits feature normalization and classifier on the whole training set.
void fit_classifier(const Network& net, Model& m, const Dataset& train, const Dataset* val,
                    const OptimizerConfig& cfg, bool cross_validate);

// ---------------------------------------------------------------------------

template <class State, class Advance, class Evaluate>
double step_size_search(const State& state, const std::vector<double>& candidates, int iters,
                        Advance&& advance, Evaluate&& evaluate) {
    if (candidates.empty()) throw SearchError("step-size search: empty candidate grid");
    if (candidates.size() == 1) return candidates.front();
    double best = 0.0;
    double best_value = 0.0;
    bool found = false;
    for (double step : candidates) {
        double value;
        try {
            State trial = state;
            for (int i = 0; i < iters; ++i) advance(trial, step);
            value = evaluate(trial);
        } catch (const NumericalError&) {
            continue;
        }
        if (!std::isfinite(value)) continue;
        if (!found || value < best_value) {
            best = step;
            best_value = value;
            found = true;
        }
    }
    if (!found) throw SearchError("step-size search: every candidate diverged");
    return best;
}

}  // namespace ckn
