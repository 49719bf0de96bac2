#include "ckn/layer.hpp"

#include <cmath>
#include <limits>

#include "ckn/error.hpp"
#include "ckn/kernels.hpp"

namespace ckn {

GramCache gram_forward(const FilterBank& W, const KernelSpec& kernel, double epsilon,
                       int newton_outer, int newton_inner) {
    GramCache g;
    g.K = W * W.transpose();
    Matrix M = kernel_matrix(kernel, g.K);
    M.diagonal().array() += epsilon;
    auto r = inv_sqrtm_newton(M, newton_outer, newton_inner);
    g.A = std::move(r.T);
    g.trace = std::move(r.trace);
    return g;
}

LayerPlan plan_layer(const LayerSpec& spec, const Dims& in, double epsilon, int newton_outer,
                     int newton_inner) {
    LayerPlan plan;
    plan.spec = spec;
    plan.in = in;
    plan.epsilon = epsilon;
    plan.newton_outer = newton_outer;
    plan.newton_inner = newton_inner;
    if (in.channels < 1 || in.height < 1 || in.width < 1)
        throw GeometryError("layer input " + to_string(in) + " is empty");

    if (spec.type == LayerType::PoolOnly) {
        if (!spec.pooling) throw ConfigError("pool-only layer without a pooling spec");
        plan.grid = in;
        plan.out = pooled_dims(in, *spec.pooling);
        plan.pool = build_pooling(in, *spec.pooling);
        return plan;
    }

    validate(spec.kernel);
    if (spec.filters < 1) throw ConfigError("layer needs at least one filter");
    if (spec.type == LayerType::FullyConnected &&
        (spec.geom.patch_h != in.height || spec.geom.patch_w != in.width || spec.geom.pad != 0))
        throw ConfigError("fully connected layer patch must cover the whole " +
                          std::to_string(in.height) + "x" + std::to_string(in.width) + " input");
    if (spec.type == LayerType::IdentityProjection) {
        if (spec.geom.patch_h != 1 || spec.geom.patch_w != 1 || spec.geom.stride_h != 1 ||
            spec.geom.stride_w != 1 || spec.geom.pad != 0)
            throw ConfigError("identity projection layer must use 1x1 patches with stride 1");
        if (spec.filters != in.channels)
            throw ConfigError("identity projection layer needs filters == input channels (" +
                              std::to_string(in.channels) + ")");
        if (spec.trainable) throw ConfigError("identity projection layer cannot be trainable");
    }
    plan.grid = patch_grid(in, spec.geom);
    const Dims projected{spec.filters, plan.grid.height, plan.grid.width};
    if (spec.pooling) {
        plan.out = pooled_dims(projected, *spec.pooling);
        plan.pool = build_pooling(projected, *spec.pooling);
    } else {
        plan.out = projected;
    }
    return plan;
}

namespace {

void check_filters(const LayerPlan& plan, const FilterBank& W) {
    if (W.rows() != plan.spec.filters || W.cols() != plan.patch_length())
        throw ShapeError("filter bank is " + std::to_string(W.rows()) + "x" +
                         std::to_string(W.cols()) + ", layer expects " +
                         std::to_string(plan.spec.filters) + "x" +
                         std::to_string(plan.patch_length()));
}

Matrix apply_pool(const LayerPlan& plan, const Matrix& Y) {
    if (!plan.pool) return Y;
    return Y * (*plan.pool);
}

Matrix apply_pool_transpose(const LayerPlan& plan, const Matrix& G) {
    if (!plan.pool) return G;
    return G * plan.pool->transpose();
}

}  // namespace

LayerOutput layer_forward(const FeatureMap& F_prev, const FilterBank& W, const LayerPlan& plan,
                          std::shared_ptr<const GramCache> gram) {
    if (F_prev.dims() != plan.in)
        throw ShapeError("layer input is " + to_string(F_prev.dims()) + ", expected " +
                         to_string(plan.in));
    LayerOutput out;
    out.ctx.in = plan.in;
    if (!plan.projects()) {
        out.F = FeatureMap(apply_pool(plan, F_prev.values), plan.out.height, plan.out.width);
        return out;
    }
    check_filters(plan, W);
    if (max_row_norm_deviation(W) > plan.unit_row_tolerance)
        throw ShapeError("filters of stage " + std::to_string(plan.spec.stage) +
                         " are not unit-norm rows");
    if (!gram) throw std::invalid_argument("layer_forward: missing gram cache");

    LayerContext& ctx = out.ctx;
    ctx.E = extract_patches(F_prev, plan.spec.geom);
    if (plan.spec.normalize_patches)
        ctx.norms = patch_norms(ctx.E);
    else
        ctx.norms = Vector::Ones(ctx.E.cols());
    ctx.Z.noalias() = W * ctx.E;
    if (plan.spec.normalize_patches) ctx.Z *= ctx.norms.cwiseInverse().asDiagonal();
    ctx.B = kernel_matrix(plan.spec.kernel, ctx.Z);
    Matrix Y = gram->A * ctx.B;
    if (plan.spec.normalize_patches) Y *= ctx.norms.asDiagonal();
    ctx.gram = std::move(gram);

    out.F = FeatureMap(apply_pool(plan, Y), plan.out.height, plan.out.width);
    if (!out.F.values.allFinite())
        throw NumericalError("layer (stage " + std::to_string(plan.spec.stage) +
                             ") produced non-finite output");
    return out;
}

LayerOutput layer_forward(const FeatureMap& F_prev, const FilterBank& W, const LayerSpec& spec,
                          double epsilon, int newton_outer, int newton_inner) {
    const LayerPlan plan = plan_layer(spec, F_prev.dims(), epsilon, newton_outer, newton_inner);
    std::shared_ptr<const GramCache> gram;
    if (plan.projects())
        gram = std::make_shared<GramCache>(
            gram_forward(W, spec.kernel, epsilon, newton_outer, newton_inner));
    return layer_forward(F_prev, W, plan, std::move(gram));
}

LayerBackward layer_backward(const LayerPlan& plan, const LayerContext& ctx, const FilterBank& W,
                             const Matrix& grad_out, bool want_input, bool want_params) {
    if (grad_out.rows() != plan.out.channels || grad_out.cols() != plan.out.locations())
        throw ShapeError("layer gradient is " + std::to_string(grad_out.rows()) + "x" +
                         std::to_string(grad_out.cols()) + ", expected " + to_string(plan.out));
    LayerBackward r;
    const Matrix GY = apply_pool_transpose(plan, grad_out);
    if (!plan.projects()) {
        if (want_input) r.input = GY;
        return r;
    }
    check_filters(plan, W);
    const bool norm = plan.spec.normalize_patches;
    const KernelSpec& kernel = plan.spec.kernel;
    const Matrix& A = ctx.gram->A;

    // Y = A B N
    Matrix GBN = A.transpose() * GY;  // adjoint of B N
    if (want_params) {
        Matrix BN = ctx.B;
        if (norm) BN *= ctx.norms.asDiagonal();
        r.grad_A.noalias() = GY * BN.transpose();
    }
    Vector gn;
    if (norm) gn = ctx.B.cwiseProduct(GBN).colwise().sum().transpose();
    Matrix GB = GBN;
    if (norm) GB *= ctx.norms.asDiagonal();

    if (want_params && kernel.kind == KernelKind::RbfSphere)
        r.sigma_data = GB.cwiseProduct(rbf_bandwidth_matrix_derivative(kernel, ctx.Z)).sum();

    // B = k(Z)
    Matrix GZ;
    if (kernel.kind == KernelKind::RbfSphere)
        GZ = GB.cwiseProduct(ctx.B) / (kernel.sigma * kernel.sigma);
    else
        GZ = GB.cwiseProduct(kernel_derivative_matrix(kernel, ctx.Z));

    // Z = W U, U = E N^{-1}
    if (want_params) {
        if (norm)
            r.weights_data.noalias() =
                (GZ * ctx.norms.cwiseInverse().asDiagonal()) * ctx.E.transpose();
        else
            r.weights_data.noalias() = GZ * ctx.E.transpose();
    }
    if (want_input) {
        Matrix GE = W.transpose() * GZ;  // adjoint of U
        if (norm) {
            const Eigen::Index p = GE.cols();
            for (Eigen::Index j = 0; j < p; ++j) {
                const double n = ctx.norms(j);
                const double raw = ctx.E.col(j).norm();
                // d(e/n) plus the direct dependence of Y on n; the floored norm is constant.
                double gtotal = 0.0;
                if (raw > kNormFloor) gtotal = gn(j) - GE.col(j).dot(ctx.E.col(j)) / (n * n);
                GE.col(j) = GE.col(j) / n + (gtotal / n) * ctx.E.col(j);
            }
        }
        r.input = scatter_patches(GE, plan.in, plan.spec.geom);
    }
    return r;
}

GramBackward gram_backward(const LayerPlan& plan, const GramCache& gram, const FilterBank& W,
                           const Matrix& grad_A, bool want_sigma) {
    GramBackward r;
    const KernelSpec& kernel = plan.spec.kernel;
    const Matrix GM = inv_sqrtm_vjp(gram.trace, grad_A);
    const Matrix GK = GM.cwiseProduct(kernel_derivative_matrix(kernel, gram.K));
    r.weights.noalias() = (GK + GK.transpose()) * W;
    if (want_sigma && kernel.kind == KernelKind::RbfSphere)
        r.sigma = GM.cwiseProduct(rbf_bandwidth_matrix_derivative(kernel, gram.K)).sum();
    return r;
}

Matrix layer_vjp_input(const LayerPlan& plan, const LayerContext& ctx, const FilterBank& W,
                       const Matrix& grad_out) {
    return layer_backward(plan, ctx, W, grad_out, true, false).input;
}

Matrix layer_vjp_weights(const LayerPlan& plan, const LayerContext& ctx, const FilterBank& W,
                         const Matrix& grad_out) {
    if (!plan.projects()) throw ShapeError("pool-only layer has no weights");
    auto r = layer_backward(plan, ctx, W, grad_out, false, true);
    auto g = gram_backward(plan, *ctx.gram, W, r.grad_A, false);
    return r.weights_data + g.weights;
}

double layer_vjp_bandwidth(const LayerPlan& plan, const LayerContext& ctx, const FilterBank& W,
                           const Matrix& grad_out) {
    if (plan.spec.kernel.kind != KernelKind::RbfSphere || !plan.projects())
        throw UnsupportedKernelError("bandwidth gradient needs an rbf_sphere layer");
    auto r = layer_backward(plan, ctx, W, grad_out, false, true);
    auto g = gram_backward(plan, *ctx.gram, W, r.grad_A, true);
    return r.sigma_data + g.sigma;
}

double max_row_norm_deviation(const Matrix& W) {
    if (W.size() == 0) return 0.0;
    return (W.rowwise().norm().array() - 1.0).abs().maxCoeff();
}

}  // namespace ckn
