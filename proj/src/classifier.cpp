#include "ckn/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ckn/error.hpp"

namespace ckn {

Matrix Classifier::logits(const Matrix& X) const {
    Matrix Z = X * V;
    Z.rowwise() += c.transpose();
    return Z;
}

int Classifier::predict(const Vector& x) const {
    Eigen::Index k;
    (V.transpose() * x + c).maxCoeff(&k);
    return static_cast<int>(k);
}

Matrix one_hot(const std::vector<int>& labels, int classes) {
    Matrix Y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes)
            throw ShapeError("label " + std::to_string(labels[i]) + " outside " +
                             std::to_string(classes) + " classes");
        Y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }
    return Y;
}

double classifier_objective(const Matrix& X, const Matrix& Y, const Classifier& cls,
                            double lambda, LossKind loss, Classifier* grad) {
    const double n = static_cast<double>(X.rows());
    if (X.rows() != Y.rows() || X.cols() != cls.V.rows() || Y.cols() != cls.V.cols())
        throw ShapeError("classifier_objective: shape mismatch");
    const Matrix Z = cls.logits(X);
    double value = 0.0;
    Matrix G;  // d loss_i / d logits_i
    if (loss == LossKind::Multinomial) {
        const Vector m = Z.rowwise().maxCoeff();
        Matrix E = (Z.colwise() - m).array().exp().matrix();
        const Vector s = E.rowwise().sum();
        const Vector lse = m.array() + s.array().log();
        value = (lse - Z.cwiseProduct(Y).rowwise().sum()).sum() / n;
        if (grad) G = s.cwiseInverse().asDiagonal() * E - Y;
    } else {
        const Matrix R = Z - Y;
        value = R.squaredNorm() / n;
        if (grad) G = 2.0 * R;
    }
    value += lambda * cls.V.squaredNorm();
    if (grad) {
        grad->V = X.transpose() * G / n + 2.0 * lambda * cls.V;
        grad->c = G.colwise().sum().transpose() / n;
    }
    return value;
}

double accuracy(const Matrix& X, const std::vector<int>& labels, const Classifier& cls) {
    if (labels.empty()) return std::nan("");
    const Matrix Z = cls.logits(X);
    long correct = 0;
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
        Eigen::Index k;
        Z.row(i).maxCoeff(&k);
        if (k == labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

Vector pack(const Classifier& cls) {
    Vector theta(cls.V.size() + cls.c.size());
    theta.head(cls.V.size()) = cls.V.reshaped();
    theta.tail(cls.c.size()) = cls.c;
    return theta;
}

Classifier unpack(const Vector& theta, int d, int K) {
    Classifier cls;
    cls.V = theta.head(static_cast<Eigen::Index>(d) * K).reshaped(d, K);
    cls.c = theta.tail(K);
    return cls;
}

ClassifierFit classifier_train(const Matrix& X, const std::vector<int>& labels, int classes,
                               double lambda, int max_iters, const Classifier* warm_start) {
    if (!X.allFinite()) throw NumericalError("classifier_train: features are not finite");
    if (lambda < 0.0) throw std::invalid_argument("classifier_train: lambda must be >= 0");
    const int d = static_cast<int>(X.cols());
    const Matrix Y = one_hot(labels, classes);
    Objective fg = [&](const Vector& theta, Vector& g) {
        Classifier grad;
        const double f = classifier_objective(X, Y, unpack(theta, d, classes), lambda,
                                              LossKind::Multinomial, &grad);
        g = pack(grad);
        return f;
    };
    LbfgsOptions opt;
    opt.max_iters = max_iters;
    Vector x0 = warm_start ? pack(*warm_start) : Vector::Zero(static_cast<Eigen::Index>(d) * classes + classes);
    ClassifierFit fit;
    fit.info = lbfgs_minimize(fg, std::move(x0), opt);
    fit.cls = unpack(fit.info.x, d, classes);
    return fit;
}

std::vector<double> power_grid(int lo, int hi, int step) {
    if (step < 1) throw std::invalid_argument("power_grid: step must be positive");
    std::vector<double> g;
    for (int i = lo; i <= hi; i += step) g.push_back(std::ldexp(1.0, i));
    return g;
}

CrossValidation cross_validate_l2(const Matrix& X, const std::vector<int>& labels,
                                  const Matrix& X_val, const std::vector<int>& labels_val,
                                  int classes, const std::vector<double>& grid, int max_iters) {
    if (grid.empty()) throw std::invalid_argument("cross_validate_l2: empty grid");
    CrossValidation cv;
    cv.grid = grid;
    cv.val_accuracy.assign(grid.size(), 0.0);
    if (grid.size() == 1) {
        cv.lambda = grid.front();
        return cv;
    }
    if (labels_val.empty()) throw std::invalid_argument("cross_validate_l2: empty validation set");
    // From strong to weak regularization, each fit warm-started from the previous one.
    std::vector<std::size_t> order(grid.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return grid[a] > grid[b]; });
    Classifier warm = Classifier::zeros(static_cast<int>(X.cols()), classes);
    for (std::size_t i : order) {
        auto fit = classifier_train(X, labels, classes, grid[i], max_iters, &warm);
        cv.val_accuracy[i] = accuracy(X_val, labels_val, fit.cls);
        warm = std::move(fit.cls);
    }
    std::size_t best = order.front();
    for (std::size_t i : order)
        if (cv.val_accuracy[i] > cv.val_accuracy[best]) best = i;
    cv.lambda = grid[best];
    return cv;
}

}  // namespace ckn
