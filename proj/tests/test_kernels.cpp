#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ckn/error.hpp"
#include "ckn/kernels.hpp"
#include "test_util.hpp"

using namespace ckn;
using std::numbers::pi;

namespace {

const KernelSpec kAll[] = {KernelSpec::linear(), KernelSpec::arccos0(), KernelSpec::arccos1(),
                           KernelSpec::rbf(0.6)};

}  // namespace

TEST_CASE("kernel values at the landmarks") {
    const auto a0 = KernelSpec::arccos0();
    CHECK(kernel_eval(a0, 1.0) == doctest::Approx(1.0));
    CHECK(kernel_eval(a0, 0.0) == doctest::Approx(0.5));
    CHECK(std::abs(kernel_eval(a0, -1.0)) < 1e-15);

    const auto a1 = KernelSpec::arccos1();
    CHECK(kernel_eval(a1, 1.0) == doctest::Approx(1.0));
    CHECK(kernel_eval(a1, 0.0) == doctest::Approx(1.0 / pi));
    CHECK(std::abs(kernel_eval(a1, -1.0)) < 1e-15);

    const auto r = KernelSpec::rbf(0.6);
    CHECK(kernel_eval(r, 1.0) == 1.0);
    CHECK(kernel_eval(r, 0.0) == doctest::Approx(std::exp(-1.0 / 0.36)).epsilon(1e-14));

    CHECK(kernel_eval(KernelSpec::linear(), 0.3) == 0.3);
}

TEST_CASE("kernel values away from the landmarks") {
    for (double t : {-0.7, -0.2, 0.4, 0.9}) {
        const double th = std::acos(t);
        CHECK(kernel_eval(KernelSpec::arccos0(), t) == doctest::Approx(1 - th / pi));
        CHECK(kernel_eval(KernelSpec::arccos1(), t) ==
              doctest::Approx((std::sin(th) + (pi - th) * t) / pi));
    }
    // Inputs slightly outside [-1, 1] are clamped rather than producing NaN.
    CHECK(kernel_eval(KernelSpec::arccos0(), 1.0 + 1e-12) == doctest::Approx(1.0));
    CHECK(std::isfinite(kernel_eval(KernelSpec::arccos1(), -1.0 - 1e-12)));
}

TEST_CASE("kernel derivatives") {
    CHECK(kernel_derivative(KernelSpec::linear(), 0.77) == 1.0);
    CHECK(kernel_derivative(KernelSpec::arccos1(), 0.0) == doctest::Approx(0.5));
    CHECK(kernel_derivative(KernelSpec::arccos0(), 0.0) == doctest::Approx(1.0 / pi));
    CHECK(kernel_derivative(KernelSpec::rbf(0.6), 1.0) == doctest::Approx(1.0 / 0.36));

    const double h = 1e-6;
    for (const auto& k : kAll)
        for (double t = -0.99; t <= 0.99 + 1e-12; t += 0.09) {
            const double fd = (kernel_eval(k, t + h) - kernel_eval(k, t - h)) / (2 * h);
            CHECK(kernel_derivative(k, t) == doctest::Approx(fd).epsilon(1e-7).scale(1.0));
        }
    const auto r = KernelSpec::rbf(0.6);
    const double fd = (kernel_eval(r, 0.5 + h) - kernel_eval(r, 0.5 - h)) / (2 * h);
    CHECK(std::abs(kernel_derivative(r, 0.5) - fd) < 1e-8);

    // Saturation at the clamp point.
    const double sat = kernel_derivative(KernelSpec::arccos0(), kArcCosClamp);
    CHECK(kernel_derivative(KernelSpec::arccos0(), 1.0) == sat);
    CHECK(std::isfinite(sat));
}

TEST_CASE("kernels are non-decreasing") {
    for (const auto& k : kAll) {
        double prev = -std::numeric_limits<double>::infinity();
        for (double t = -0.999; t < 1.0; t += 0.001) {
            const double v = kernel_eval(k, t);
            CHECK(v >= prev);
            prev = v;
        }
    }
}

TEST_CASE("kernel matrices") {
    Matrix T(2, 2);
    T << 0.3, -0.4, 0.1, 0.9;
    CHECK(kernel_matrix(KernelSpec::linear(), T) == T);
    const Matrix K0 = kernel_matrix(KernelSpec::arccos0(), Matrix::Identity(2, 2));
    CHECK(K0(0, 0) == doctest::Approx(1.0));
    CHECK(K0(0, 1) == doctest::Approx(0.5));

    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + trial % 7;
        const Matrix X = testutil::unit_rows(testutil::random_matrix(n, 5, rng));
        const Matrix G = X * X.transpose();
        for (const auto& k : kAll) {
            const Matrix K = kernel_matrix(k, G);
            for (int i = 0; i < n; ++i) CHECK(std::abs(K(i, i) - 1.0) < 1e-12);
            const Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (K + K.transpose()));
            CHECK(es.eigenvalues().minCoeff() >= -1e-10);
        }
    }
}

TEST_CASE("bandwidth derivative") {
    const auto r = KernelSpec::rbf(0.6);
    CHECK(rbf_bandwidth_matrix_derivative(r, Matrix::Ones(3, 2)).norm() == 0.0);
    const Matrix z = Matrix::Zero(1, 1);
    CHECK(rbf_bandwidth_matrix_derivative(r, z)(0, 0) ==
          doctest::Approx(2.0 / 0.216 * std::exp(-1.0 / 0.36)).epsilon(1e-13));

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Matrix T(4, 3);
    for (Eigen::Index i = 0; i < T.size(); ++i) T.data()[i] = u(rng);
    const double h = 1e-6;
    const Matrix fd = (kernel_matrix(KernelSpec::rbf(0.6 + h), T) -
                       kernel_matrix(KernelSpec::rbf(0.6 - h), T)) /
                      (2 * h);
    CHECK((rbf_bandwidth_matrix_derivative(r, T) - fd).cwiseAbs().maxCoeff() < 1e-7);

    CHECK_THROWS_AS(rbf_bandwidth_matrix_derivative(KernelSpec::arccos1(), T),
                    UnsupportedKernelError);
}

TEST_CASE("kernel spec validation and names") {
    CHECK_THROWS_AS(validate(KernelSpec::rbf(0.0)), ConfigError);
    CHECK_THROWS_AS(validate(KernelSpec{KernelKind::Linear, 0.5}), ConfigError);
    CHECK_NOTHROW(validate(KernelSpec::rbf(0.6)));
    for (const auto& k : kAll) CHECK(kernel_kind_from_string(to_string(k.kind)) == k.kind);
    CHECK_THROWS_AS(kernel_kind_from_string("sigmoid"), ConfigError);
}
