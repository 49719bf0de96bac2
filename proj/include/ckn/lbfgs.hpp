#pragma once

#include <functional>
#include <string>

#include "ckn/linalg.hpp"

namespace ckn {

struct LbfgsOptions {
    int memory = 10;
    int max_iters = 1000;
    double grad_tol = 1e-6;  // stop when ||g||_2 < grad_tol
    double c1 = 1e-4;        // sufficient decrease
    double c2 = 0.9;         // curvature (strong Wolfe)
    int max_line_search = 40;
};

enum class LbfgsStatus { Converged, MaxIterations, LineSearchFailed };

std::string to_string(LbfgsStatus s);

struct LbfgsResult {
    Vector x;
    double f = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    LbfgsStatus status = LbfgsStatus::MaxIterations;
};

// Objective returns f(x) and writes the gradient into g.
using Objective = std::function<double(const Vector& x, Vector& g)>;

// Limited-memory BFGS with the two-loop recursion and a strong-Wolfe line search.
// On line-search failure the best iterate found so far is returned.
LbfgsResult lbfgs_minimize(const Objective& fg, Vector x0, const LbfgsOptions& opt = {});

}  // namespace ckn
