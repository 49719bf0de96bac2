#pragma once

#include <vector>

#include "ckn/lbfgs.hpp"
#include "ckn/linalg.hpp"

namespace ckn {

// Linear classifier on feature rows: logits = x^T V + c.
struct Classifier {
    Matrix V;  // d x K
    Vector c;  // K

    static Classifier zeros(int d, int K) { return {Matrix::Zero(d, K), Vector::Zero(K)}; }
    Matrix logits(const Matrix& X) const;
    int predict(const Vector& x) const;
};

enum class LossKind { Multinomial, LeastSquares };

// n x K indicator matrix of the labels.
Matrix one_hot(const std::vector<int>& labels, int classes);

// (1/n) sum_i loss(y_i, x_i^T V + c) + lambda ||V||_F^2 and its gradient.
double classifier_objective(const Matrix& X, const Matrix& Y, const Classifier& cls,
                            double lambda, LossKind loss, Classifier* grad = nullptr);

double accuracy(const Matrix& X, const std::vector<int>& labels, const Classifier& cls);

Vector pack(const Classifier& cls);
Classifier unpack(const Vector& theta, int d, int K);

struct ClassifierFit {
    Classifier cls;
    LbfgsResult info;
};

// Multinomial logistic regression fitted by L-BFGS.
ClassifierFit classifier_train(const Matrix& X, const std::vector<int>& labels, int classes,
                               double lambda, int max_iters = 1000,
                               const Classifier* warm_start = nullptr);

struct CrossValidation {
    double lambda = 0.0;
    std::vector<double> grid;
    std::vector<double> val_accuracy;
};

// Powers of two 2^lo .. 2^hi.
std::vector<double> power_grid(int lo, int hi, int step = 1);

// Picks the lambda with the best validation accuracy; ties go to the larger lambda.
CrossValidation cross_validate_l2(const Matrix& X, const std::vector<int>& labels,
                                  const Matrix& X_val, const std::vector<int>& labels_val,
                                  int classes, const std::vector<double>& grid,
                                  int max_iters = 1000);

}  // namespace ckn
