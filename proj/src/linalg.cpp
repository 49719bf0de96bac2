#include "ckn/linalg.hpp"

#include <cmath>
#include <string>

#include "ckn/error.hpp"

namespace ckn {

namespace {

void require_square(const Matrix& M, const char* what) {
    if (M.rows() != M.cols() || M.rows() == 0)
        throw ShapeError(std::string(what) + ": expected a non-empty square matrix, got " +
                         std::to_string(M.rows()) + "x" + std::to_string(M.cols()));
}

// X_{k+1} = 2 X_k - X_k B X_k, k = 0..n-1, starting at X_0. Returns all iterates.
std::vector<Matrix> newton_schulz_chain(const Matrix& X0, const Matrix& B, int n) {
    std::vector<Matrix> xs;
    xs.reserve(n + 1);
    xs.push_back(X0);
    for (int k = 0; k < n; ++k) {
        const Matrix& X = xs.back();
        xs.push_back(2.0 * X - X * B * X);
    }
    return xs;
}

// Reverse of newton_schulz_chain. Accumulates into gB and returns the adjoint of X_0.
Matrix newton_schulz_chain_vjp(const std::vector<Matrix>& xs, const Matrix& B, Matrix g,
                               Matrix& gB) {
    for (int k = static_cast<int>(xs.size()) - 2; k >= 0; --k) {
        const Matrix& X = xs[k];
        Matrix gprev = 2.0 * g - g * (B * X).transpose() - (X * B).transpose() * g;
        gB.noalias() -= X.transpose() * g * X.transpose();
        g = std::move(gprev);
    }
    return g;
}

Eigen::SelfAdjointEigenSolver<Matrix> eig(const Matrix& M) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(M));
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    return es;
}

}  // namespace

InvSqrtResult inv_sqrtm_newton(const Matrix& M, int t_outer, int t_inner) {
    require_square(M, "inv_sqrtm_newton");
    if (t_outer < 1 || t_inner < 1)
        throw std::invalid_argument("inv_sqrtm_newton: iteration counts must be >= 1");

    InvSqrtResult out;
    NewtonTrace& tr = out.trace;
    tr.M = M;
    tr.t_outer = t_outer;
    tr.t_inner = t_inner;
    tr.frobenius_norm = M.norm();
    if (!std::isfinite(tr.frobenius_norm) || tr.frobenius_norm == 0.0)
        throw NumericalError("inv_sqrtm_newton: matrix norm is zero or not finite");

    const auto n = M.rows();
    tr.S.reserve(t_outer + 1);
    tr.T.reserve(t_outer + 1);
    tr.S.push_back(M / tr.frobenius_norm);
    tr.T.push_back(Matrix::Identity(n, n));

    for (int t = 0; t < t_outer; ++t) {
        const Matrix& S = tr.S.back();
        const Matrix& T = tr.T.back();
        Matrix X = newton_schulz_chain(S, T, t_inner).back();  // ~ T^{-1}
        Matrix Y = newton_schulz_chain(T, S, t_inner).back();  // ~ S^{-1}
        Matrix S_next = 0.5 * (S + X);
        Matrix T_next = 0.5 * (T + Y);
        if (!S_next.allFinite() || !T_next.allFinite())
            throw NumericalError("inv_sqrtm_newton: iteration diverged at outer step " +
                                 std::to_string(t + 1));
        tr.S.push_back(std::move(S_next));
        tr.T.push_back(std::move(T_next));
    }
    out.T = tr.T.back() / std::sqrt(tr.frobenius_norm);
    return out;
}

Matrix inv_sqrtm_eig(const Matrix& M) {
    require_square(M, "inv_sqrtm_eig");
    auto es = eig(M);
    const Vector& d = es.eigenvalues();
    if (d.minCoeff() <= 0.0)
        throw NotPositiveDefiniteError("inv_sqrtm_eig: smallest eigenvalue " +
                                       std::to_string(d.minCoeff()) + " is not positive");
    const Matrix& U = es.eigenvectors();
    return U * d.cwiseSqrt().cwiseInverse().asDiagonal() * U.transpose();
}

Matrix sqrtm_eig(const Matrix& M) {
    require_square(M, "sqrtm_eig");
    auto es = eig(M);
    const Vector& d = es.eigenvalues();
    if (d.minCoeff() < 0.0)
        throw NotPositiveDefiniteError("sqrtm_eig: negative eigenvalue " +
                                       std::to_string(d.minCoeff()));
    const Matrix& U = es.eigenvectors();
    return U * d.cwiseSqrt().asDiagonal() * U.transpose();
}

Matrix sqrtm_directional_derivative(const Matrix& A, const Matrix& H) {
    require_square(A, "sqrtm_directional_derivative");
    if (H.rows() != A.rows() || H.cols() != A.cols())
        throw ShapeError("sqrtm_directional_derivative: H must match A");
    auto es = eig(A);
    const Vector& d = es.eigenvalues();
    const double scale = std::max(d.cwiseAbs().maxCoeff(), 1e-300);
    if (d.minCoeff() <= 1e-14 * scale)
        throw IllConditionedError("sqrtm_directional_derivative: Lyapunov operator is singular");
    const Matrix& U = es.eigenvectors();
    const Vector r = d.cwiseSqrt();
    Matrix Ht = U.transpose() * H * U;
    for (Eigen::Index j = 0; j < Ht.cols(); ++j)
        for (Eigen::Index i = 0; i < Ht.rows(); ++i) Ht(i, j) /= r(i) + r(j);
    return U * Ht * U.transpose();
}

Matrix inv_sqrtm_vjp(const NewtonTrace& tr, const Matrix& grad_out) {
    const int n = tr.dim();
    if (grad_out.rows() != n || grad_out.cols() != n)
        throw ShapeError("inv_sqrtm_vjp: gradient is " + std::to_string(grad_out.rows()) + "x" +
                         std::to_string(grad_out.cols()) + ", trace dimension is " +
                         std::to_string(n));
    if (static_cast<int>(tr.S.size()) != tr.t_outer + 1 ||
        static_cast<int>(tr.T.size()) != tr.t_outer + 1)
        throw ShapeError("inv_sqrtm_vjp: trace is incomplete");

    const double c = tr.frobenius_norm;
    const double inv_sqrt_c = 1.0 / std::sqrt(c);

    // Final rescale T = c^{-1/2} T_n.
    Matrix gT = inv_sqrt_c * grad_out;
    Matrix gS = Matrix::Zero(n, n);
    double gc = -0.5 * inv_sqrt_c / c * (grad_out.cwiseProduct(tr.T.back())).sum();

    for (int t = tr.t_outer - 1; t >= 0; --t) {
        const Matrix& S = tr.S[t];
        const Matrix& T = tr.T[t];
        // S' = (S + X)/2, T' = (T + Y)/2
        Matrix gX = 0.5 * gS;
        Matrix gY = 0.5 * gT;
        Matrix gS_prev = 0.5 * gS;
        Matrix gT_prev = 0.5 * gT;
        auto xs = newton_schulz_chain(S, T, tr.t_inner);
        gS_prev += newton_schulz_chain_vjp(xs, T, gX, gT_prev);
        auto ys = newton_schulz_chain(T, S, tr.t_inner);
        gT_prev += newton_schulz_chain_vjp(ys, S, gY, gS_prev);
        gS = std::move(gS_prev);
        gT = std::move(gT_prev);
    }

    // S_0 = M / c, T_0 = I, c = ||M||_F.
    Matrix gM = gS / c;
    gc -= gS.cwiseProduct(tr.M).sum() / (c * c);
    gM += (gc / c) * tr.M;
    return symmetrize(gM);
}

Matrix inv_sqrtm_vjp_lyapunov(const Matrix& M, const Matrix& grad_out) {
    require_square(M, "inv_sqrtm_vjp_lyapunov");
    if (grad_out.rows() != M.rows() || grad_out.cols() != M.cols())
        throw ShapeError("inv_sqrtm_vjp_lyapunov: gradient must match M");
    // d(M^{-1/2})[H] = -A D(H) A with D the square-root derivative; D is self-adjoint.
    const Matrix A = inv_sqrtm_eig(M);
    return symmetrize(-sqrtm_directional_derivative(M, A * grad_out * A));
}

}  // namespace ckn
