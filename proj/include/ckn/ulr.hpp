#pragma once

#include "ckn/classifier.hpp"

namespace ckn {

enum class HessianMode { Full, Diagonal };

struct LeastSquaresSolution {
    double value = 0.0;  // min over (V, c) of (1/n)||Y - F V - 1 c^T||^2 + lambda ||V||^2
    Classifier cls;
};

// Closed-form minimizer of the ridge least-squares objective with an unpenalized bias.
// Uses the n x n system when n < d.
LeastSquaresSolution ulr_least_squares(const Matrix& F, const Matrix& Y, double lambda);

// Gradient of the minimal value with respect to F (rows are samples).
Matrix ulr_least_squares_feature_grad(const Matrix& F, const Matrix& Y,
                                      const LeastSquaresSolution& sol);

struct QuadraticStep {
    Classifier minimizer;  // V^(t) + Delta
    double value = 0.0;    // minimum of the regularized quadratic model
    Matrix feature_grad;   // d value / d X, n x d (when requested)
    int cg_iterations = 0;
};

// Minimizes the second-order model of the classifier objective at `at` plus
// (tau/2)||Delta||^2 over (V, c). The full Hessian is applied matrix-free and the
// system solved by preconditioned conjugate gradients; the diagonal mode keeps only
// the Hessian diagonal.
QuadraticStep ulr_quadratic(const Matrix& X, const Matrix& Y, const Classifier& at,
                            double lambda, double tau, HessianMode mode, LossKind loss,
                            bool want_feature_grad);

}  // namespace ckn
