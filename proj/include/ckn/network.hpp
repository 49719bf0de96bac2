#pragma once

#include <memory>
#include <span>
#include <vector>

#include "ckn/layer.hpp"
#include "ckn/spec.hpp"

namespace ckn {

// One filter bank per layer; pool-only layers hold an empty matrix.
using Weights = std::vector<FilterBank>;
using GramSet = std::vector<std::shared_ptr<const GramCache>>;

// A NetworkSpec with every layer bound to its input dims.
class Network {
public:
    explicit Network(NetworkSpec spec);

    const NetworkSpec& spec() const { return spec_; }
    const std::vector<LayerPlan>& plans() const { return plans_; }
    std::size_t size() const { return plans_.size(); }
    Dims output_dims() const;
    int feature_dim() const { return static_cast<int>(output_dims().size()); }

    void set_unit_row_tolerance(double tol);

    // Checks layer count and filter shapes; throws ShapeError naming the layer.
    void check_weights(const Weights& w) const;
    GramSet grams(const Weights& w) const;

    // Zero-pads raw images to the declared input size when the spec asks for it.
    FeatureMap prepare_input(const FeatureMap& x) const;

private:
    NetworkSpec spec_;
    std::vector<LayerPlan> plans_;
};

struct ForwardPass {
    Vector features;  // flattened final feature map
    std::vector<LayerContext> ctxs;
    bool padded_input = false;  // the raw input was zero-padded before layer 0
};

ForwardPass network_forward(const Network& net, const FeatureMap& F0, const Weights& w,
                            const GramSet& grams, bool keep_contexts = true);
ForwardPass network_forward(const Network& net, const FeatureMap& F0, const Weights& w);

struct NetworkGradient {
    std::vector<Matrix> weights;  // empty for layers without trainable filters
    std::vector<double> sigma;    // zero unless requested for rbf_sphere layers
    Matrix input;                 // d/dF0 when requested
};

NetworkGradient network_backward(const Network& net, const ForwardPass& pass, const Weights& w,
                                 const Vector& grad_final, bool want_sigma = false,
                                 bool want_input = false);

// Forward over a set of images. Row i of `features` is the feature vector of images[i].
struct BatchPass {
    GramSet grams;
    std::vector<ForwardPass> passes;  // filled when contexts are kept
    Matrix features;
};

BatchPass forward_batch(const Network& net, std::span<const FeatureMap* const> images,
                        const Weights& w, int threads, bool keep_contexts);

// Sum over the batch of the backward passes driven by the rows of grad_features.
NetworkGradient backward_batch(const Network& net, const BatchPass& batch, const Weights& w,
                               const Matrix& grad_features, int threads, bool want_sigma = false);

struct LossGrad {
    double loss = 0.0;
    Vector grad_logits;
};

// Softmax cross-entropy of one example plus lambda ||V||_F^2.
LossGrad loss_eval_grad(int label, const Vector& logits, const Matrix& V, double lambda);

Vector softmax(const Vector& z);

}  // namespace ckn
