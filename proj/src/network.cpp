#include "ckn/network.hpp"

#include <cmath>
#include <string>

#include "ckn/error.hpp"
#include "ckn/parallel.hpp"

namespace ckn {

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
    Dims d = spec_.input;
    plans_.reserve(spec_.layers.size());
    for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
        try {
            plans_.push_back(plan_layer(spec_.layers[l], d, spec_.epsilon, spec_.newton_outer,
                                        spec_.newton_inner));
        } catch (const Error& e) {
            throw ValidationError("layer " + std::to_string(l) + ": " + e.what());
        }
        d = plans_.back().out;
    }
}

Dims Network::output_dims() const { return plans_.empty() ? spec_.input : plans_.back().out; }

void Network::set_unit_row_tolerance(double tol) {
    for (auto& p : plans_) p.unit_row_tolerance = tol;
}

void Network::check_weights(const Weights& w) const {
    if (w.size() != plans_.size())
        throw ShapeError("got " + std::to_string(w.size()) + " filter banks for " +
                         std::to_string(plans_.size()) + " layers");
    for (std::size_t l = 0; l < plans_.size(); ++l) {
        const auto& p = plans_[l];
        const long rows = p.projects() ? p.spec.filters : 0;
        const long cols = p.projects() ? p.patch_length() : 0;
        if (w[l].rows() != rows || w[l].cols() != cols)
            throw ShapeError("layer " + std::to_string(l) + ": filter bank is " +
                             std::to_string(w[l].rows()) + "x" + std::to_string(w[l].cols()) +
                             ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

GramSet Network::grams(const Weights& w) const {
    check_weights(w);
    GramSet g(plans_.size());
    for (std::size_t l = 0; l < plans_.size(); ++l) {
        if (!plans_[l].projects()) continue;
        try {
            g[l] = std::make_shared<GramCache>(gram_forward(w[l], plans_[l].spec.kernel,
                                                            spec_.epsilon, spec_.newton_outer,
                                                            spec_.newton_inner));
        } catch (const NumericalError& e) {
            throw NumericalError("layer " + std::to_string(l) + ": " + e.what());
        }
    }
    return g;
}

FeatureMap Network::prepare_input(const FeatureMap& x) const {
    if (x.dims() == spec_.input) return x;
    if (spec_.input_pad > 0 && x.dims() == spec_.raw_input()) return zero_pad(x, spec_.input_pad);
    throw ShapeError("input is " + to_string(x.dims()) + ", network expects " +
                     to_string(spec_.input));
}

ForwardPass network_forward(const Network& net, const FeatureMap& F0, const Weights& w,
                            const GramSet& grams, bool keep_contexts) {
    ForwardPass pass;
    pass.padded_input = F0.dims() != net.spec().input;
    FeatureMap F = net.prepare_input(F0);
    if (keep_contexts) pass.ctxs.reserve(net.size());
    for (std::size_t l = 0; l < net.size(); ++l) {
        LayerOutput out;
        try {
            out = layer_forward(F, w[l], net.plans()[l], grams[l]);
        } catch (const ShapeError& e) {
            throw ShapeError("layer " + std::to_string(l) + ": " + e.what());
        } catch (const Error& e) {
            throw NumericalError("layer " + std::to_string(l) + ": " + e.what());
        }
        F = std::move(out.F);
        if (keep_contexts) pass.ctxs.push_back(std::move(out.ctx));
    }
    pass.features = F.flatten();
    return pass;
}

ForwardPass network_forward(const Network& net, const FeatureMap& F0, const Weights& w) {
    return network_forward(net, F0, w, net.grams(w), true);
}

namespace {

// Per-input part of the backward sweep. The Gram branch is left to the caller.
struct PartialGradient {
    std::vector<Matrix> weights_data;
    std::vector<Matrix> grad_A;
    std::vector<double> sigma_data;
    Matrix input;
};

bool wants_params(const LayerPlan& p, bool want_sigma) {
    return p.projects() &&
           (p.spec.trainable || (want_sigma && p.spec.kernel.kind == KernelKind::RbfSphere));
}

PartialGradient backward_partial(const Network& net, const ForwardPass& pass, const Weights& w,
                                 const Vector& grad_final, bool want_sigma, bool want_input) {
    const std::size_t L = net.size();
    if (pass.ctxs.size() != L) throw ShapeError("forward pass kept no layer contexts");
    PartialGradient r;
    r.weights_data.resize(L);
    r.grad_A.resize(L);
    r.sigma_data.assign(L, 0.0);
    Matrix G = FeatureMap::unflatten(grad_final, net.output_dims()).values;
    for (std::size_t k = L; k-- > 0;) {
        const auto& plan = net.plans()[k];
        const bool params = wants_params(plan, want_sigma);
        const bool input = k > 0 || want_input;
        auto b = layer_backward(plan, pass.ctxs[k], w[k], G, input, params);
        if (params) {
            r.weights_data[k] = std::move(b.weights_data);
            r.grad_A[k] = std::move(b.grad_A);
            r.sigma_data[k] = b.sigma_data;
        }
        if (input) G = std::move(b.input);
    }
    if (want_input) {
        const auto& spec = net.spec();
        if (pass.padded_input) {
            // Gradient w.r.t. the unpadded image.
            const Dims raw = spec.raw_input();
            Matrix g(raw.channels, raw.locations());
            for (int y = 0; y < raw.height; ++y)
                for (int x = 0; x < raw.width; ++x)
                    g.col(y * raw.width + x) =
                        G.col((y + spec.input_pad) * spec.input.width + x + spec.input_pad);
            r.input = std::move(g);
        } else {
            r.input = std::move(G);
        }
    }
    return r;
}

NetworkGradient finish_gradient(const Network& net, const GramSet& grams, const Weights& w,
                                PartialGradient&& part, bool want_sigma) {
    const std::size_t L = net.size();
    NetworkGradient g;
    g.weights.resize(L);
    g.sigma.assign(L, 0.0);
    for (std::size_t k = 0; k < L; ++k) {
        const auto& plan = net.plans()[k];
        if (!wants_params(plan, want_sigma)) continue;
        const bool sigma = want_sigma && plan.spec.kernel.kind == KernelKind::RbfSphere;
        auto gb = gram_backward(plan, *grams[k], w[k], part.grad_A[k], sigma);
        if (plan.spec.trainable) g.weights[k] = part.weights_data[k] + gb.weights;
        if (sigma) g.sigma[k] = part.sigma_data[k] + gb.sigma;
    }
    g.input = std::move(part.input);
    return g;
}

}  // namespace

NetworkGradient network_backward(const Network& net, const ForwardPass& pass, const Weights& w,
                                 const Vector& grad_final, bool want_sigma, bool want_input) {
    GramSet grams(net.size());
    for (std::size_t k = 0; k < net.size(); ++k)
        if (k < pass.ctxs.size()) grams[k] = pass.ctxs[k].gram;
    auto part = backward_partial(net, pass, w, grad_final, want_sigma, want_input);
    return finish_gradient(net, grams, w, std::move(part), want_sigma);
}

BatchPass forward_batch(const Network& net, std::span<const FeatureMap* const> images,
                        const Weights& w, int threads, bool keep_contexts) {
    BatchPass b;
    b.grams = net.grams(w);
    const std::size_t n = images.size();
    b.features.resize(static_cast<Eigen::Index>(n), net.feature_dim());
    if (keep_contexts) b.passes.resize(n);
    parallel_for(n, threads, [&](std::size_t i) {
        auto pass = network_forward(net, *images[i], w, b.grams, keep_contexts);
        b.features.row(static_cast<Eigen::Index>(i)) = pass.features.transpose();
        if (keep_contexts) b.passes[i] = std::move(pass);
    });
    return b;
}

NetworkGradient backward_batch(const Network& net, const BatchPass& batch, const Weights& w,
                               const Matrix& grad_features, int threads, bool want_sigma) {
    const std::size_t n = batch.passes.size();
    if (static_cast<std::size_t>(grad_features.rows()) != n)
        throw ShapeError("backward_batch: gradient rows do not match the batch");
    std::vector<PartialGradient> parts(n);
    parallel_for(n, threads, [&](std::size_t i) {
        parts[i] = backward_partial(net, batch.passes[i], w,
                                    grad_features.row(static_cast<Eigen::Index>(i)).transpose(),
                                    want_sigma, false);
    });
    // Sequential reduction in batch order keeps the sum independent of the thread count.
    PartialGradient total;
    const std::size_t L = net.size();
    total.weights_data.resize(L);
    total.grad_A.resize(L);
    total.sigma_data.assign(L, 0.0);
    for (std::size_t k = 0; k < L; ++k) {
        if (!wants_params(net.plans()[k], want_sigma)) continue;
        const auto& plan = net.plans()[k];
        total.weights_data[k] = Matrix::Zero(plan.spec.filters, plan.patch_length());
        total.grad_A[k] = Matrix::Zero(plan.spec.filters, plan.spec.filters);
        for (std::size_t i = 0; i < n; ++i) {
            total.weights_data[k] += parts[i].weights_data[k];
            total.grad_A[k] += parts[i].grad_A[k];
            total.sigma_data[k] += parts[i].sigma_data[k];
        }
    }
    return finish_gradient(net, batch.grams, w, std::move(total), want_sigma);
}

Vector softmax(const Vector& z) {
    const double m = z.maxCoeff();
    Vector e = (z.array() - m).exp().matrix();
    return e / e.sum();
}

LossGrad loss_eval_grad(int label, const Vector& logits, const Matrix& V, double lambda) {
    if (label < 0 || label >= logits.size())
        throw ShapeError("label " + std::to_string(label) + " outside " +
                         std::to_string(logits.size()) + " classes");
    LossGrad r;
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    r.loss = lse - logits(label) + lambda * V.squaredNorm();
    r.grad_logits = (logits.array() - lse).exp().matrix();
    r.grad_logits(label) -= 1.0;
    return r;
}

}  // namespace ckn
