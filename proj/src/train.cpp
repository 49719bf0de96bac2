#include "ckn/train.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <unordered_set>

namespace ckn {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgo ? "sgo" : "ulr"; }

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "sgo") return OptimizerKind::Sgo;
    if (name == "ulr") return OptimizerKind::Ulr;
    throw ConfigError("unknown optimizer '" + name + "' (expected sgo or ulr)");
}

std::string to_string(HessianMode m) { return m == HessianMode::Full ? "full" : "diag"; }

HessianMode hessian_from_string(const std::string& name) {
    if (name == "full") return HessianMode::Full;
    if (name == "diag" || name == "diagonal") return HessianMode::Diagonal;
    throw ConfigError("unknown Hessian mode '" + name + "' (expected full or diag)");
}

std::string to_string(LossKind k) {
    return k == LossKind::Multinomial ? "multinomial" : "least_squares";
}

LossKind loss_from_string(const std::string& name) {
    if (name == "multinomial") return LossKind::Multinomial;
    if (name == "least_squares") return LossKind::LeastSquares;
    throw ConfigError("unknown loss '" + name + "' (expected multinomial or least_squares)");
}

void OptimizerConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (lambda && !(*lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (iterations < 0) throw ConfigError("iterations must be non-negative");
    if (log_every < 1) throw ConfigError("log_every must be at least 1");
    if (step_lo && *step_lo > step_hi) throw ConfigError("empty step-size grid");
    if (search_every < 1 || search_iters < 1 || refresh_radius < 0)
        throw ConfigError("invalid step-size search parameters");
    if (fixed_step && !(*fixed_step > 0.0)) throw ConfigError("fixed step must be positive");
    if (cv_lo > cv_hi || cv_step < 1) throw ConfigError("empty cross-validation grid");
    if (ball_radius && !(*ball_radius > 0.0)) throw ConfigError("ball radius must be positive");
    if (classifier_max_iters < 1) throw ConfigError("classifier_max_iters must be positive");
    if (threads < 1) throw ConfigError("threads must be at least 1");
}

Batch draw_batch(const Dataset& ds, int batch_size, std::mt19937_64& rng) {
    const std::size_t n = ds.size();
    if (n == 0) throw InsufficientDataError("cannot draw a batch from an empty dataset");
    const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(batch_size), n);
    // Floyd's algorithm: b distinct indices in draw order.
    std::vector<std::size_t> picked;
    std::unordered_set<std::size_t> seen;
    picked.reserve(b);
    for (std::size_t j = n - b; j < n; ++j) {
        std::uniform_int_distribution<std::size_t> dist(0, j);
        const std::size_t t = dist(rng);
        const std::size_t k = seen.count(t) ? j : t;
        seen.insert(k);
        picked.push_back(k);
    }
    Batch batch;
    for (auto i : picked) {
        batch.images.push_back(&ds.images[i]);
        batch.labels.push_back(ds.labels[i]);
    }
    return batch;
}

Matrix extract_features(const Network& net, const Weights& w, const std::vector<FeatureMap>& images,
                        int threads) {
    std::vector<const FeatureMap*> ptrs;
    ptrs.reserve(images.size());
    for (const auto& im : images) ptrs.push_back(&im);
    return forward_batch(net, ptrs, w, threads, false).features;
}

Matrix model_features(const Network& net, const Model& m, const std::vector<FeatureMap>& images,
                      int threads) {
    return feature_normalization_apply(extract_features(net, m.weights, images, threads), m.norm);
}

double model_accuracy(const Network& net, const Model& m, const Dataset& ds, int threads) {
    return accuracy(model_features(net, m, ds.images, threads), ds.labels, m.cls);
}

FilterBank project_rows(const FilterBank& W, const Matrix& G, double step) {
    if (G.rows() != W.rows() || G.cols() != W.cols())
        throw ShapeError("project_rows: gradient shape does not match the filters");
    if (!G.allFinite()) throw NumericalError("non-finite filter gradient");
    FilterBank out = W;
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
        const Eigen::RowVectorXd row = W.row(r) - step * G.row(r);
        const double nrm = row.norm();
        if (nrm > 0.0 && std::isfinite(nrm)) out.row(r) = row / nrm;
    }
    return out;
}

namespace {

Matrix batch_targets(const Batch& batch, int classes) { return one_hot(batch.labels, classes); }

bool trainable(const Network& net, std::size_t l) {
    const auto& p = net.plans()[l];
    return p.projects() && p.spec.trainable;
}

}  // namespace

double batch_objective(const Network& net, const Model& m, const Batch& batch,
                       const OptimizerConfig& cfg) {
    const BatchPass bp = forward_batch(net, batch.images, m.weights, cfg.threads, false);
    const Matrix X = feature_normalization_apply(bp.features, m.norm);
    return classifier_objective(X, batch_targets(batch, net.spec().classes), m.cls, m.lambda,
                                cfg.loss);
}

void sgo_step(const Network& net, TrainState& state, const Batch& batch,
              const OptimizerConfig& cfg) {
    if (batch.images.empty()) throw InsufficientDataError("sgo_step: empty batch");
    Model& m = state.model;
    const BatchPass bp = forward_batch(net, batch.images, m.weights, cfg.threads, true);
    const Matrix X = feature_normalization_apply(bp.features, m.norm);
    const Matrix Y = batch_targets(batch, net.spec().classes);
    const double n = static_cast<double>(X.rows());
    const Matrix Z = m.cls.logits(X);
    Matrix G;  // d objective / d logits
    if (cfg.loss == LossKind::Multinomial) {
        const Matrix E = (Z.colwise() - Z.rowwise().maxCoeff()).array().exp().matrix();
        const Vector s = E.rowwise().sum();
        const Matrix P = s.cwiseInverse().asDiagonal() * E;
        G = (P - Y) / n;
    } else {
        G = 2.0 * (Z - Y) / n;
    }
    const Matrix feature_grad = G * m.cls.V.transpose() / m.norm.scale;
    if (!feature_grad.allFinite()) throw NumericalError("sgo_step: non-finite gradient");
    const NetworkGradient ng = backward_batch(net, bp, m.weights, feature_grad, cfg.threads);

    const double step = state.step;
    for (std::size_t l = 0; l < net.size(); ++l)
        if (trainable(net, l)) m.weights[l] = project_rows(m.weights[l], ng.weights[l], step);
    m.cls.V -= step * (X.transpose() * G + 2.0 * m.lambda * m.cls.V);
    m.cls.c -= step * G.colwise().sum().transpose();
    if (cfg.ball_radius) {
        const double nrm = m.cls.V.norm();
        if (nrm > *cfg.ball_radius) m.cls.V *= *cfg.ball_radius / nrm;
    }
}

void ulr_step(const Network& net, TrainState& state, const Batch& batch,
              const OptimizerConfig& cfg) {
    if (batch.images.empty()) throw InsufficientDataError("ulr_step: empty batch");
    Model& m = state.model;
    const Matrix Y = batch_targets(batch, net.spec().classes);
    const BatchPass bp = forward_batch(net, batch.images, m.weights, cfg.threads, true);
    const Matrix X = feature_normalization_apply(bp.features, m.norm);

    Matrix feature_grad;
    if (cfg.loss == LossKind::LeastSquares) {
        const auto sol = ulr_least_squares(X, Y, m.lambda);
        feature_grad = ulr_least_squares_feature_grad(X, Y, sol);
    } else {
        feature_grad = ulr_quadratic(X, Y, m.cls, m.lambda, cfg.tau, cfg.hessian, cfg.loss, true)
                           .feature_grad;
    }
    feature_grad /= m.norm.scale;
    if (!feature_grad.allFinite()) throw NumericalError("ulr_step: non-finite gradient");
    const NetworkGradient ng = backward_batch(net, bp, m.weights, feature_grad, cfg.threads);

    // Each layer's gradient is scaled to unit Frobenius norm; zero layers stay put.
    for (std::size_t l = 0; l < net.size(); ++l) {
        if (!trainable(net, l)) continue;
        const double nrm = ng.weights[l].norm();
        if (nrm > 0.0) m.weights[l] = project_rows(m.weights[l], ng.weights[l] / nrm, state.step);
    }

    const BatchPass after = forward_batch(net, batch.images, m.weights, cfg.threads, false);
    const Matrix X1 = feature_normalization_apply(after.features, m.norm);
    if (cfg.loss == LossKind::LeastSquares)
        m.cls = ulr_least_squares(X1, Y, m.lambda).cls;
    else
        m.cls = ulr_quadratic(X1, Y, m.cls, m.lambda, cfg.tau, cfg.hessian, cfg.loss, false).minimizer;
}

namespace {

void optimizer_step(const Network& net, TrainState& s, const Batch& b, const OptimizerConfig& cfg) {
    if (cfg.optimizer == OptimizerKind::Sgo)
        sgo_step(net, s, b, cfg);
    else
        ulr_step(net, s, b, cfg);
}

}  // namespace

double search_step(const Network& net, const TrainState& state, const Dataset& train,
                   const Batch& probe, const std::vector<double>& candidates,
                   const OptimizerConfig& cfg) {
    auto advance = [&](TrainState& s, double step) {
        s.step = step;
        const Batch b = draw_batch(train, cfg.batch_size, s.rng);
        optimizer_step(net, s, b, cfg);
    };
    auto evaluate = [&](const TrainState& s) { return batch_objective(net, s.model, probe, cfg); };
    return step_size_search(state, candidates, cfg.search_iters, advance, evaluate);
}

std::vector<double> initial_step_grid(const OptimizerConfig& cfg) {
    const int lo = cfg.step_lo.value_or(cfg.optimizer == OptimizerKind::Ulr ? -6 : -10);
    if (lo > cfg.step_hi) throw ConfigError("empty step-size grid");
    return power_grid(lo, cfg.step_hi);
}

std::vector<double> refresh_step_grid(double current, int radius) {
    std::vector<double> g;
    for (int j = -radius; j <= radius; ++j) g.push_back(std::ldexp(current, j));
    return g;
}

void fit_classifier(const Network& net, Model& m, const Dataset& train, const Dataset* val,
                    const OptimizerConfig& cfg, bool cross_validate) {
    const Matrix raw = extract_features(net, m.weights, train.images, cfg.threads);
    m.norm = feature_normalization_fit(raw);
    const Matrix X = feature_normalization_apply(raw, m.norm);
    if (cfg.lambda) {
        m.lambda = *cfg.lambda;
    } else if (cross_validate) {
        if (!val || val->size() == 0)
            throw ConfigError("cross-validating lambda needs a validation set (or set lambda)");
        const Matrix Xv = model_features(net, m, val->images, cfg.threads);
        m.lambda = cross_validate_l2(X, train.labels, Xv, val->labels, net.spec().classes,
                                     power_grid(cfg.cv_lo, cfg.cv_hi, cfg.cv_step),
                                     cfg.classifier_max_iters)
                       .lambda;
    }
    m.cls = classifier_train(X, train.labels, net.spec().classes, m.lambda,
                             cfg.classifier_max_iters)
                .cls;
}

namespace {

double max_row_dev(const Network& net, const Weights& w) {
    double dev = 0.0;
    for (std::size_t l = 0; l < net.size(); ++l)
        if (net.plans()[l].projects()) dev = std::max(dev, max_row_norm_deviation(w[l]));
    return dev;
}

class Evaluator {
public:
    Evaluator(const Network& net, const Dataset& train, const Dataset* val,
              const OptimizerConfig& cfg)
        : net_(net), val_(val), cfg_(cfg),
          train_(cfg.metrics_subset ? head(train, cfg.metrics_subset) : train),
          Y_(one_hot(train_.labels, net.spec().classes)),
          start_(std::chrono::steady_clock::now()) {}

    MetricsRow row(const TrainState& s) const {
        MetricsRow r;
        r.iteration = s.iteration;
        const Matrix X = model_features(net_, s.model, train_.images, cfg_.threads);
        r.train_loss = classifier_objective(X, Y_, s.model.cls, s.model.lambda, cfg_.loss);
        r.train_acc = accuracy(X, train_.labels, s.model.cls);
        r.val_acc = val_ && val_->size() ? model_accuracy(net_, s.model, *val_, cfg_.threads)
                                        : std::numeric_limits<double>::quiet_NaN();
        r.max_row_dev = max_row_dev(net_, s.model.weights);
        r.step = s.step;
        r.wall_seconds = elapsed();
        return r;
    }

    double elapsed() const {
        if (!cfg_.record_timing) return 0.0;
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    const Network& net_;
    const Dataset* val_;
    const OptimizerConfig& cfg_;
    Dataset train_;
    Matrix Y_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace

TrainState train_supervised(const NetworkSpec& spec, const Dataset& train, const Dataset* val,
                            const OptimizerConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    train.validate();
    if (train.size() == 0) throw InsufficientDataError("empty training set");
    if (val) val->validate();
    const Network net(spec);
    const Evaluator eval(net, train, val, cfg);

    TrainState st;
    st.rng.seed(cfg.seed);
    st.model.spec = spec;
    InitOptions io = cfg.init;
    io.threads = cfg.threads;
    st.model.weights = unsupervised_init(net, train.images, cfg.seed, io);
    fit_classifier(net, st.model, train, val, cfg, true);

    auto record = [&](const MetricsRow& r) {
        st.metrics.push_back(r);
        if (hooks.on_log) hooks.on_log(st, r);
    };

    const int T = cfg.iterations;
    auto probe_for = [&](int t) {
        std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                          0x70726f62u, static_cast<std::uint32_t>(t)};
        std::mt19937_64 prng(seq);
        return draw_batch(train, cfg.batch_size, prng);
    };
    if (T > 0)
        st.step = cfg.fixed_step ? *cfg.fixed_step
                                 : search_step(net, st, train, probe_for(0), initial_step_grid(cfg), cfg);
    MetricsRow last = eval.row(st);
    record(last);
    Model snapshot = st.model;

    for (int t = 1; t <= T; ++t) {
        if (!cfg.fixed_step && t > 1 && (t - 1) % cfg.search_every == 0)
            st.step = search_step(net, st, train, probe_for(t),
                                  refresh_step_grid(st.step, cfg.refresh_radius), cfg);
        const Batch b = draw_batch(train, cfg.batch_size, st.rng);
        optimizer_step(net, st, b, cfg);
        st.iteration = t;
        if (t % cfg.log_every != 0 && t != T) continue;
        MetricsRow r = eval.row(st);
        if (cfg.rollback && r.train_acc < last.train_acc - cfg.rollback_drop) {
            st.model = snapshot;
            st.step /= 4.0;
            r = last;
            r.iteration = t;
            r.step = st.step;
            r.wall_seconds = eval.elapsed();
        }
        record(r);
        last = r;
        snapshot = st.model;
    }

    // The refit replaces the trained classifier unless it does worse on validation.
    const Model trained = st.model;
    fit_classifier(net, st.model, train, val, cfg, true);
    if (T > 0 && val && val->size() &&
        model_accuracy(net, trained, *val, cfg.threads) > model_accuracy(net, st.model, *val, cfg.threads))
        st.model = trained;
    record(eval.row(st));
    return st;
}

}  // namespace ckn
