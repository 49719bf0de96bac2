#include "ckn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "ckn/error.hpp"

namespace ckn {

using std::numbers::pi;

void validate(const KernelSpec& spec) {
    if (spec.kind == KernelKind::RbfSphere) {
        if (!(spec.sigma > 0.0) || !std::isfinite(spec.sigma))
            throw ConfigError("rbf_sphere kernel needs a positive bandwidth");
    } else if (spec.sigma != 0.0) {
        throw ConfigError("kernel " + to_string(spec.kind) + " takes no bandwidth");
    }
}

std::string to_string(KernelKind kind) {
    switch (kind) {
        case KernelKind::Linear: return "linear";
        case KernelKind::ArcCos0: return "arccos0";
        case KernelKind::ArcCos1: return "arccos1";
        case KernelKind::RbfSphere: return "rbf_sphere";
    }
    return "unknown";
}

KernelKind kernel_kind_from_string(const std::string& name) {
    if (name == "linear") return KernelKind::Linear;
    if (name == "arccos0") return KernelKind::ArcCos0;
    if (name == "arccos1") return KernelKind::ArcCos1;
    if (name == "rbf_sphere") return KernelKind::RbfSphere;
    throw ConfigError("unknown kernel kind '" + name + "'");
}

namespace {

// arccos has infinite slope at +-1, so rounding noise of a few ulps in an inner
// product of unit vectors would move the kernel by ~1e-8. Such inputs are snapped.
double arccos_argument(double t) {
    constexpr double snap = 1.0 - 8 * std::numeric_limits<double>::epsilon();
    if (t >= snap) return 1.0;
    if (t <= -snap) return -1.0;
    return t;
}

}  // namespace

double kernel_eval(const KernelSpec& spec, double t) {
    switch (spec.kind) {
        case KernelKind::Linear: return t;
        case KernelKind::ArcCos0: {
            const double theta = std::acos(arccos_argument(t));
            return 1.0 - theta / pi;
        }
        case KernelKind::ArcCos1: {
            const double c = arccos_argument(t);
            const double theta = std::acos(c);
            return (std::sin(theta) + (pi - theta) * c) / pi;
        }
        case KernelKind::RbfSphere:
            return std::exp(-(1.0 - t) / (spec.sigma * spec.sigma));
    }
    return 0.0;
}

double kernel_derivative(const KernelSpec& spec, double t) {
    switch (spec.kind) {
        case KernelKind::Linear: return 1.0;
        case KernelKind::ArcCos0: {
            const double c = std::clamp(t, -kArcCosClamp, kArcCosClamp);
            return 1.0 / (pi * std::sqrt(1.0 - c * c));
        }
        case KernelKind::ArcCos1: {
            const double c = std::clamp(t, -kArcCosClamp, kArcCosClamp);
            return (pi - std::acos(c)) / pi;
        }
        case KernelKind::RbfSphere: {
            const double s2 = spec.sigma * spec.sigma;
            return std::exp(-(1.0 - t) / s2) / s2;
        }
    }
    return 0.0;
}

Matrix kernel_matrix(const KernelSpec& spec, const Matrix& T) {
    if (spec.kind == KernelKind::Linear) return T;
    if (spec.kind == KernelKind::RbfSphere) {
        const double inv_s2 = 1.0 / (spec.sigma * spec.sigma);
        return ((T.array() - 1.0) * inv_s2).exp().matrix();
    }
    return T.unaryExpr([&](double t) { return kernel_eval(spec, t); });
}

Matrix kernel_derivative_matrix(const KernelSpec& spec, const Matrix& T) {
    if (spec.kind == KernelKind::Linear) return Matrix::Ones(T.rows(), T.cols());
    if (spec.kind == KernelKind::RbfSphere) {
        const double inv_s2 = 1.0 / (spec.sigma * spec.sigma);
        return (((T.array() - 1.0) * inv_s2).exp() * inv_s2).matrix();
    }
    return T.unaryExpr([&](double t) { return kernel_derivative(spec, t); });
}

Matrix rbf_bandwidth_matrix_derivative(const KernelSpec& spec, const Matrix& T) {
    if (spec.kind != KernelKind::RbfSphere)
        throw UnsupportedKernelError("bandwidth derivative requested for kernel " +
                                     to_string(spec.kind));
    const double s = spec.sigma;
    const Matrix K = kernel_matrix(spec, T);
    return (2.0 / (s * s * s)) * (K.array() * (1.0 - T.array())).matrix();
}

}  // namespace ckn
