#pragma once

#include <Eigen/Dense>
#include <vector>

namespace ckn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Stored iterates of the coupled Newton iteration, replayed by inv_sqrtm_vjp.
struct NewtonTrace {
    std::vector<Matrix> S;  // S_0 .. S_{t_outer}
    std::vector<Matrix> T;  // T_0 .. T_{t_outer}
    Matrix M;               // the input matrix
    double frobenius_norm = 0.0;
    int t_outer = 0;
    int t_inner = 0;

    int dim() const { return static_cast<int>(M.rows()); }
};

struct InvSqrtResult {
    Matrix T;  // approximation of M^{-1/2}
    NewtonTrace trace;
};

// M^{-1/2} by the coupled Newton iteration started at S = M/||M||_F, T = I.
// Each outer step approximates the two inverses of the Denman-Beavers update
// with t_inner Newton-Schulz refinements.
InvSqrtResult inv_sqrtm_newton(const Matrix& M, int t_outer = 20, int t_inner = 1);

// M^{-1/2} through a symmetric eigendecomposition.
Matrix inv_sqrtm_eig(const Matrix& M);

// M^{1/2} through a symmetric eigendecomposition.
Matrix sqrtm_eig(const Matrix& M);

// Solves A^{1/2} D + D A^{1/2} = H, the first-order change of the square root.
Matrix sqrtm_directional_derivative(const Matrix& A, const Matrix& H);

// Adjoint of M -> M^{-1/2}: returns d<grad_out, T(M)>/dM by reverse replay of
// the recorded iterates. Symmetrized.
Matrix inv_sqrtm_vjp(const NewtonTrace& trace, const Matrix& grad_out);

// Same adjoint from the analytic derivative of the exact inverse square root.
// Slow (one eigendecomposition); used to cross-check the replay.
Matrix inv_sqrtm_vjp_lyapunov(const Matrix& M, const Matrix& grad_out);

inline Matrix symmetrize(const Matrix& G) { return 0.5 * (G + G.transpose()); }

}  // namespace ckn
