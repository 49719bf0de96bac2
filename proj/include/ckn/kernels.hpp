#pragma once

#include <string>

#include "ckn/linalg.hpp"

namespace ckn {

enum class KernelKind { Linear, ArcCos0, ArcCos1, RbfSphere };

// Dot-product kernel on the sphere. sigma is the bandwidth and only meaningful for RbfSphere.
struct KernelSpec {
    KernelKind kind = KernelKind::Linear;
    double sigma = 0.0;

    static KernelSpec linear() { return {KernelKind::Linear, 0.0}; }
    static KernelSpec arccos0() { return {KernelKind::ArcCos0, 0.0}; }
    static KernelSpec arccos1() { return {KernelKind::ArcCos1, 0.0}; }
    static KernelSpec rbf(double sigma) { return {KernelKind::RbfSphere, sigma}; }

    bool operator==(const KernelSpec&) const = default;
};

// Throws ConfigError when sigma is inconsistent with the kind.
void validate(const KernelSpec& spec);

std::string to_string(KernelKind kind);
KernelKind kernel_kind_from_string(const std::string& name);

// Largest |t| at which arc-cosine derivatives are evaluated.
inline constexpr double kArcCosClamp = 1.0 - 1e-7;

double kernel_eval(const KernelSpec& spec, double t);
double kernel_derivative(const KernelSpec& spec, double t);

Matrix kernel_matrix(const KernelSpec& spec, const Matrix& T);
Matrix kernel_derivative_matrix(const KernelSpec& spec, const Matrix& T);

// d k_sigma(T) / d sigma, element-wise. RbfSphere only.
Matrix rbf_bandwidth_matrix_derivative(const KernelSpec& spec, const Matrix& T);

}  // namespace ckn
