#include "ckn/ulr.hpp"

#include <cmath>

#include "ckn/error.hpp"

namespace ckn {

LeastSquaresSolution ulr_least_squares(const Matrix& F, const Matrix& Y, double lambda) {
    if (F.rows() != Y.rows() || F.rows() < 1)
        throw ShapeError("ulr_least_squares: features and targets need the same positive row count");
    if (!(lambda > 0.0)) throw std::invalid_argument("ulr_least_squares: lambda must be positive");
    const Eigen::Index n = F.rows();
    const Eigen::Index d = F.cols();
    const double nd = static_cast<double>(n);
    const Matrix Fc = F.rowwise() - F.colwise().mean();
    const Matrix Yc = Y.rowwise() - Y.colwise().mean();

    LeastSquaresSolution s;
    if (n >= d) {
        Matrix G = Fc.transpose() * Fc;
        G.diagonal().array() += nd * lambda;
        s.cls.V = G.llt().solve(Fc.transpose() * Yc);
    } else {
        Matrix K = Fc * Fc.transpose();
        K.diagonal().array() += nd * lambda;
        s.cls.V = Fc.transpose() * K.llt().solve(Yc);
    }
    s.cls.c = (Y - F * s.cls.V).colwise().sum().transpose() / nd;
    s.value = (Yc.squaredNorm() - (Yc.transpose() * Fc * s.cls.V).trace()) / nd;
    return s;
}

Matrix ulr_least_squares_feature_grad(const Matrix& F, const Matrix& Y,
                                      const LeastSquaresSolution& sol) {
    const Matrix R = Y - sol.cls.logits(F);
    return (-2.0 / static_cast<double>(F.rows())) * R * sol.cls.V.transpose();
}

namespace {

// Per-sample derivatives of the loss with respect to the logits, row-wise.
struct LossModel {
    LossKind kind;
    Matrix P;  // softmax probabilities (multinomial only)
    Matrix G;  // gradient
    Vector values;

    LossModel(LossKind k, const Matrix& Z, const Matrix& Y) : kind(k) {
        if (kind == LossKind::Multinomial) {
            const Vector m = Z.rowwise().maxCoeff();
            Matrix E = (Z.colwise() - m).array().exp().matrix();
            const Vector s = E.rowwise().sum();
            P = s.cwiseInverse().asDiagonal() * E;
            G = P - Y;
            values = (m.array() + s.array().log()).matrix() - Z.cwiseProduct(Y).rowwise().sum();
        } else {
            G = 2.0 * (Z - Y);
            values = (Z - Y).rowwise().squaredNorm();
        }
    }

    // Row i: H_i u_i.
    Matrix hess(const Matrix& U) const {
        if (kind == LossKind::LeastSquares) return 2.0 * U;
        const Matrix PU = P.cwiseProduct(U);
        const Vector pu = PU.rowwise().sum();
        return PU - pu.asDiagonal() * P;
    }

    // Row i: diagonal of H_i.
    Matrix hess_diag() const {
        if (kind == LossKind::LeastSquares) return Matrix::Constant(G.rows(), G.cols(), 2.0);
        return P.cwiseProduct((1.0 - P.array()).matrix());
    }

    // Row i: gradient in z of (1/2) u_i^T H(z_i) u_i.
    Matrix hess_grad(const Matrix& U) const {
        if (kind == LossKind::LeastSquares) return Matrix::Zero(U.rows(), U.cols());
        const Vector pu = P.cwiseProduct(U).rowwise().sum();
        const Vector puu = P.cwiseProduct(U.cwiseProduct(U)).rowwise().sum();
        const Matrix Usq = U.cwiseProduct(U);
        Matrix out = 0.5 * P.cwiseProduct(Usq.colwise() - puu);
        out -= pu.asDiagonal() * P.cwiseProduct(U.colwise() - pu);
        return out;
    }

    // Row i: gradient in z of (1/2) sum_k W_ik h_ik(z_i), h the Hessian diagonal.
    Matrix hess_diag_grad(const Matrix& W) const {
        if (kind == LossKind::LeastSquares) return Matrix::Zero(W.rows(), W.cols());
        const Matrix A = (1.0 - 2.0 * P.array()).matrix().cwiseProduct(P).cwiseProduct(W);
        const Vector a = A.rowwise().sum();
        return 0.5 * (A - a.asDiagonal() * P);
    }
};

struct Params {
    Matrix V;
    Vector c;
};

double dot(const Params& a, const Params& b) { return a.V.cwiseProduct(b.V).sum() + a.c.dot(b.c); }

}  // namespace

QuadraticStep ulr_quadratic(const Matrix& X, const Matrix& Y, const Classifier& at,
                            double lambda, double tau, HessianMode mode, LossKind loss,
                            bool want_feature_grad) {
    if (X.rows() != Y.rows() || X.rows() < 1 || X.cols() != at.V.rows() ||
        Y.cols() != at.V.cols())
        throw ShapeError("ulr_quadratic: shape mismatch");
    if (!(tau > 0.0)) throw std::invalid_argument("ulr_quadratic: tau must be positive");
    const double n = static_cast<double>(X.rows());
    const Matrix Z = at.logits(X);
    const LossModel lm(loss, Z, Y);

    // Gradient of the classifier objective at V^(t).
    Params grad{X.transpose() * lm.G / n + 2.0 * lambda * at.V, lm.G.colwise().sum().transpose() / n};
    const double g0 = lm.values.sum() / n + lambda * at.V.squaredNorm();

    // Hessian diagonal, used directly in the diagonal mode and as a preconditioner.
    const Matrix h = lm.hess_diag();
    const Matrix Xsq = X.cwiseProduct(X);
    Params diag{(Xsq.transpose() * h / n).array() + 2.0 * lambda + tau,
                (h.colwise().sum().transpose() / n).array() + tau};

    auto apply = [&](const Params& d) {
        Matrix U = X * d.V;
        U.rowwise() += d.c.transpose();
        const Matrix R = lm.hess(U);
        return Params{X.transpose() * R / n + (2.0 * lambda + tau) * d.V,
                      R.colwise().sum().transpose() / n + tau * d.c};
    };

    QuadraticStep out;
    Params delta;
    Params Hdelta;
    if (mode == HessianMode::Diagonal) {
        delta = {-grad.V.cwiseQuotient(diag.V), -grad.c.cwiseQuotient(diag.c)};
        Hdelta = {diag.V.cwiseProduct(delta.V), diag.c.cwiseProduct(delta.c)};
    } else {
        // Preconditioned conjugate gradients on (H + tau I) delta = -grad.
        delta = {Matrix::Zero(grad.V.rows(), grad.V.cols()), Vector::Zero(grad.c.size())};
        Params r{-grad.V, -grad.c};
        Params z{r.V.cwiseQuotient(diag.V), r.c.cwiseQuotient(diag.c)};
        Params p = z;
        double rz = dot(r, z);
        const double bnorm = std::sqrt(dot(r, r));
        const int max_iter = 10 * static_cast<int>(grad.V.size() + grad.c.size()) + 10;
        int it = 0;
        while (it < max_iter && std::sqrt(dot(r, r)) > 1e-13 * bnorm) {
            const Params Ap = apply(p);
            const double alpha = rz / dot(p, Ap);
            delta.V += alpha * p.V;
            delta.c += alpha * p.c;
            r.V -= alpha * Ap.V;
            r.c -= alpha * Ap.c;
            z = {r.V.cwiseQuotient(diag.V), r.c.cwiseQuotient(diag.c)};
            const double rz_next = dot(r, z);
            p.V = z.V + (rz_next / rz) * p.V;
            p.c = z.c + (rz_next / rz) * p.c;
            rz = rz_next;
            ++it;
        }
        out.cg_iterations = it;
        Hdelta = apply(delta);
    }
    if (!delta.V.allFinite() || !delta.c.allFinite())
        throw NumericalError("ulr_quadratic: regularized Hessian solve failed");

    out.minimizer = {at.V + delta.V, at.c + delta.c};
    out.value = g0 + dot(grad, delta) + 0.5 * dot(delta, Hdelta);

    if (want_feature_grad) {
        Matrix U = X * delta.V;
        U.rowwise() += delta.c.transpose();
        const Matrix HU = lm.hess(U);
        if (mode == HessianMode::Full) {
            out.feature_grad = ((lm.G + HU + lm.hess_grad(U)) * at.V.transpose() +
                                (lm.G + HU) * delta.V.transpose()) / n;
        } else {
            const Matrix Dsq = delta.V.cwiseProduct(delta.V);
            Matrix W = Xsq * Dsq;
            W.rowwise() += delta.c.cwiseProduct(delta.c).transpose();
            out.feature_grad = ((lm.G + HU + lm.hess_diag_grad(W)) * at.V.transpose() +
                                lm.G * delta.V.transpose() +
                                X.cwiseProduct(h * Dsq.transpose())) / n;
        }
    }
    return out;
}

}  // namespace ckn
