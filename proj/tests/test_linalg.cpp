#include <doctest.h>

#include <random>

#include "ckn/error.hpp"
#include "ckn/linalg.hpp"
#include "test_util.hpp"

using namespace ckn;
using testutil::random_spd;

TEST_CASE("newton inverse square root: identity and diagonal inputs") {
    const auto r = inv_sqrtm_newton(Matrix::Identity(3, 3), 20, 1);
    CHECK((r.T - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);

    Matrix M = Eigen::Vector2d(4.0, 9.0).asDiagonal();
    const auto d = inv_sqrtm_newton(M, 20, 1);
    CHECK(std::abs(d.T(0, 0) - 0.5) < 1e-10);
    CHECK(std::abs(d.T(1, 1) - 1.0 / 3.0) < 1e-10);
    CHECK(std::abs(d.T(0, 1)) < 1e-10);
}

TEST_CASE("newton trace keeps every iterate") {
    std::mt19937_64 rng(3);
    const Matrix M = random_spd(5, 10.0, rng);
    const auto r = inv_sqrtm_newton(M, 7, 2);
    CHECK(r.trace.S.size() == 8);
    CHECK(r.trace.T.size() == 8);
    CHECK(r.trace.t_outer == 7);
    CHECK(r.trace.t_inner == 2);
    CHECK(r.trace.frobenius_norm == doctest::Approx(M.norm()).epsilon(1e-15));
    for (const auto& S : r.trace.S) CHECK(S.allFinite());
}

TEST_CASE("newton agrees with the eigendecomposition oracle") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 2 + trial;
        const Matrix M = random_spd(n, 1e4, rng, 0.1 + trial);
        const auto r = inv_sqrtm_newton(M, 20, 1);
        const Matrix E = inv_sqrtm_eig(M);
        CHECK(testutil::rel_err(r.T, E) < 1e-8);
        const Matrix I = Matrix::Identity(n, n);
        CHECK((r.T * M * r.T - I).norm() / I.norm() < 1e-8);
        CHECK((r.T - r.T.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("newton residual decreases after the first iterations") {
    std::mt19937_64 rng(5);
    const Matrix M = random_spd(8, 20.0, rng);
    const Matrix I = Matrix::Identity(8, 8);
    double prev = std::numeric_limits<double>::infinity();
    for (int t = 3; t <= 12; ++t) {
        const auto r = inv_sqrtm_newton(M, t, 1);
        const double res = (r.T * M * r.T - I).norm();
        if (res < 1e-13) break;
        CHECK(res < prev);
        prev = res;
    }
}

TEST_CASE("newton rejects bad inputs") {
    CHECK_THROWS_AS(inv_sqrtm_newton(Matrix::Zero(2, 3), 20, 1), ShapeError);
    Matrix bad = Matrix::Identity(2, 2);
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(inv_sqrtm_newton(bad, 20, 1), NumericalError);
}

TEST_CASE("eigen inverse square root") {
    CHECK((inv_sqrtm_eig(Matrix::Identity(2, 2)) - Matrix::Identity(2, 2)).norm() < 1e-14);
    const Matrix q = inv_sqrtm_eig(Matrix::Identity(1, 1) * 0.25);
    CHECK(q(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
    std::mt19937_64 rng(2);
    const Matrix M = random_spd(8, 100.0, rng);
    const Matrix T = inv_sqrtm_eig(M);
    CHECK((T * M * T - Matrix::Identity(8, 8)).norm() < 1e-10);
}

TEST_CASE("square-root directional derivative") {
    std::mt19937_64 rng(8);
    const Matrix H = testutil::random_symmetric(4, rng);
    const Matrix D = sqrtm_directional_derivative(Matrix::Identity(4, 4), H);
    CHECK((D - H / 2).norm() < 1e-12);

    const Vector a = Vector::LinSpaced(3, 1.0, 5.0);
    const Vector h(Vector::LinSpaced(3, -1.0, 2.0));
    const Matrix Dd = sqrtm_directional_derivative(a.asDiagonal(), h.asDiagonal());
    for (int i = 0; i < 3; ++i) CHECK(Dd(i, i) == doctest::Approx(h(i) / (2 * std::sqrt(a(i)))));

    const Matrix A = random_spd(5, 50.0, rng);
    Matrix Hs = testutil::random_symmetric(5, rng);
    Hs *= 1e-6 / Hs.norm();
    const Matrix fd = sqrtm_eig(A + Hs) - sqrtm_eig(A);
    CHECK(testutil::rel_err(sqrtm_directional_derivative(A, Hs), fd) < 1e-4);
}

TEST_CASE("replay adjoint: trivial and analytic cases") {
    std::mt19937_64 rng(4);
    const Matrix M = random_spd(4, 10.0, rng);
    const auto r = inv_sqrtm_newton(M, 20, 1);
    CHECK(inv_sqrtm_vjp(r.trace, Matrix::Zero(4, 4)).norm() == 0.0);

    Matrix D = Eigen::Vector2d(4.0, 9.0).asDiagonal();
    const auto rd = inv_sqrtm_newton(D, 20, 1);
    Matrix G = Matrix::Zero(2, 2);
    G(0, 0) = 1.0;
    const Matrix adj = inv_sqrtm_vjp(rd.trace, G);
    CHECK(adj(0, 0) == doctest::Approx(-0.0625).epsilon(1e-9));
    CHECK(std::abs(adj(0, 1)) < 1e-12);
    CHECK(std::abs(adj(1, 1)) < 1e-12);
}

TEST_CASE("replay adjoint matches finite differences and the Lyapunov form") {
    std::mt19937_64 rng(21);
    for (int n : {1, 2, 3, 6, 8}) {
        const Matrix M = random_spd(n, 30.0, rng, 0.5);
        const Matrix G = testutil::random_matrix(n, n, rng);
        const auto r = inv_sqrtm_newton(M, 20, 1);
        const Matrix adj = inv_sqrtm_vjp(r.trace, G);
        CHECK((adj - adj.transpose()).cwiseAbs().maxCoeff() < 1e-12);

        // Symmetric perturbations: d/dM_ij of <G, T(M)> along E_ij + E_ji.
        auto f = [&](const Matrix& X) { return G.cwiseProduct(inv_sqrtm_newton(X, 20, 1).T).sum(); };
        Matrix fd(n, n);
        const double h = 1e-6;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j <= i; ++j) {
                Matrix P = Matrix::Zero(n, n);
                P(i, j) += 1;
                if (i != j) P(j, i) += 1;
                const double d = (f(M + h * P) - f(M - h * P)) / (2 * h);
                fd(i, j) = fd(j, i) = i == j ? d : d / 2;
            }
        CHECK(testutil::rel_err(adj, fd) < 1e-6);
        CHECK(testutil::rel_err(adj, inv_sqrtm_vjp_lyapunov(M, G)) < 1e-8);
    }
}
