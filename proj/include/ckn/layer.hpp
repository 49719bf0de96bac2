#pragma once

#include <memory>
#include <optional>

#include "ckn/geometry.hpp"
#include "ckn/linalg.hpp"
#include "ckn/spec.hpp"

namespace ckn {

using FilterBank = Matrix;  // f x s, unit-norm rows

// Quantities that depend on the filters only: K = W W^T and A = (k(K) + eps I)^{-1/2}.
struct GramCache {
    Matrix K;
    Matrix A;
    NewtonTrace trace;
};

GramCache gram_forward(const FilterBank& W, const KernelSpec& kernel, double epsilon,
                       int newton_outer, int newton_inner);

// A layer bound to its input dims, with the pooling matrix built once.
struct LayerPlan {
    LayerSpec spec;
    Dims in;
    Dims grid;  // channels = patch length s, height x width = patch locations
    Dims out;
    std::optional<SparseMatrix> pool;
    double epsilon = 1e-3;
    int newton_outer = 20;
    int newton_inner = 1;
    // Filter rows must have unit norm within this tolerance. Finite-difference
    // checks evaluate off the sphere and raise it to infinity.
    double unit_row_tolerance = 1e-6;

    bool projects() const { return spec.type != LayerType::PoolOnly; }
    int patch_length() const { return grid.channels; }
};

LayerPlan plan_layer(const LayerSpec& spec, const Dims& in, double epsilon = 1e-3,
                     int newton_outer = 20, int newton_inner = 1);

struct LayerContext {
    Dims in;
    Matrix E;      // s x p patches
    Vector norms;  // p patch norms (ones when the layer does not normalize)
    Matrix Z;      // W E N^{-1}
    Matrix B;      // k(Z)
    std::shared_ptr<const GramCache> gram;
};

struct LayerOutput {
    FeatureMap F;
    LayerContext ctx;
};

LayerOutput layer_forward(const FeatureMap& F_prev, const FilterBank& W, const LayerPlan& plan,
                          std::shared_ptr<const GramCache> gram);
LayerOutput layer_forward(const FeatureMap& F_prev, const FilterBank& W, const LayerSpec& spec,
                          double epsilon = 1e-3, int newton_outer = 20, int newton_inner = 1);

// Reverse pass of one layer for one input, split into the per-input data branch
// and the adjoint of A, which the caller may sum over a batch before gram_backward.
struct LayerBackward {
    Matrix input;         // d/dF_prev
    Matrix weights_data;  // d/dW through k(W E N^{-1})
    Matrix grad_A;        // d/dA
    double sigma_data = 0.0;
};

LayerBackward layer_backward(const LayerPlan& plan, const LayerContext& ctx, const FilterBank& W,
                             const Matrix& grad_out, bool want_input, bool want_params);

struct GramBackward {
    Matrix weights;
    double sigma = 0.0;
};

GramBackward gram_backward(const LayerPlan& plan, const GramCache& gram, const FilterBank& W,
                           const Matrix& grad_A, bool want_sigma);

Matrix layer_vjp_input(const LayerPlan& plan, const LayerContext& ctx, const FilterBank& W,
                       const Matrix& grad_out);
Matrix layer_vjp_weights(const LayerPlan& plan, const LayerContext& ctx, const FilterBank& W,
                         const Matrix& grad_out);
double layer_vjp_bandwidth(const LayerPlan& plan, const LayerContext& ctx, const FilterBank& W,
                           const Matrix& grad_out);

// Largest deviation of a row norm from one.
double max_row_norm_deviation(const Matrix& W);

}  // namespace ckn
