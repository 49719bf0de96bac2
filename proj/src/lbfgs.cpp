#include "ckn/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace ckn {

std::string to_string(LbfgsStatus s) {
    switch (s) {
        case LbfgsStatus::Converged: return "converged";
        case LbfgsStatus::MaxIterations: return "max_iterations";
        case LbfgsStatus::LineSearchFailed: return "line_search_failed";
    }
    return "unknown";
}

namespace {

struct Point {
    double a = 0.0;  // step length
    double f = 0.0;
    double d = 0.0;  // directional derivative
    Vector x, g;
};

double cubic_min(const Point& p, const Point& q) {
    const double lo = std::min(p.a, q.a);
    const double hi = std::max(p.a, q.a);
    const double d1 = p.d + q.d - 3.0 * (p.f - q.f) / (p.a - q.a);
    const double disc = d1 * d1 - p.d * q.d;
    double a = 0.5 * (lo + hi);
    if (disc >= 0.0) {
        const double d2 = std::copysign(std::sqrt(disc), q.a - p.a);
        const double t = q.a - (q.a - p.a) * (q.d + d2 - d1) / (q.d - p.d + 2.0 * d2);
        if (std::isfinite(t)) a = t;
    }
    // Keep the trial point away from the bracket ends.
    const double margin = 0.1 * (hi - lo);
    if (a < lo + margin || a > hi - margin) a = 0.5 * (lo + hi);
    return a;
}

class LineSearch {
public:
    LineSearch(const Objective& fg, const Vector& x, const Vector& dir, double f0, double d0,
               const LbfgsOptions& opt)
        : fg_(fg), x_(x), dir_(dir), f0_(f0), d0_(d0), opt_(opt) {}

    // Returns true and the accepted point on success; `best` always holds the lowest value seen.
    bool run(double a1, Point& accepted) {
        Point prev{0.0, f0_, d0_, {}, {}};
        double a = a1;
        for (int i = 0; i < opt_.max_line_search; ++i) {
            Point cur = eval(a);
            if (!std::isfinite(cur.f) || cur.f > f0_ + opt_.c1 * a * d0_ ||
                (i > 0 && cur.f >= prev.f))
                return zoom(prev, cur, accepted);
            if (std::abs(cur.d) <= -opt_.c2 * d0_) {
                accepted = std::move(cur);
                return true;
            }
            if (cur.d >= 0.0) return zoom(cur, prev, accepted);
            prev = std::move(cur);
            a *= 2.0;
        }
        return false;
    }

    const Point& best() const { return best_; }
    bool has_best() const { return has_best_; }

private:
    Point eval(double a) {
        Point p;
        p.a = a;
        p.x = x_ + a * dir_;
        p.g.resize(x_.size());
        p.f = fg_(p.x, p.g);
        p.d = p.g.dot(dir_);
        if (std::isfinite(p.f) && (!has_best_ || p.f < best_.f)) {
            best_ = p;
            has_best_ = true;
        }
        return p;
    }

    bool zoom(Point lo, Point hi, Point& accepted) {
        for (int i = 0; i < opt_.max_line_search; ++i) {
            if (std::abs(hi.a - lo.a) < 1e-16 * std::max(1.0, lo.a)) return false;
            const double a = std::isfinite(hi.f) ? cubic_min(lo, hi) : 0.5 * (lo.a + hi.a);
            Point cur = eval(a);
            if (!std::isfinite(cur.f) || cur.f > f0_ + opt_.c1 * a * d0_ || cur.f >= lo.f) {
                hi = std::move(cur);
                continue;
            }
            if (std::abs(cur.d) <= -opt_.c2 * d0_) {
                accepted = std::move(cur);
                return true;
            }
            if (cur.d * (hi.a - lo.a) >= 0.0) hi = lo;
            lo = std::move(cur);
        }
        return false;
    }

    const Objective& fg_;
    const Vector& x_;
    const Vector& dir_;
    double f0_, d0_;
    const LbfgsOptions& opt_;
    Point best_;
    bool has_best_ = false;
};

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& fg, Vector x0, const LbfgsOptions& opt) {
    LbfgsResult r;
    r.x = std::move(x0);
    Vector g(r.x.size());
    r.f = fg(r.x, g);
    r.grad_norm = g.norm();
    std::deque<Vector> S, Y;
    std::deque<double> rho;

    for (int it = 0; it < opt.max_iters; ++it) {
        if (r.grad_norm < opt.grad_tol) {
            r.status = LbfgsStatus::Converged;
            return r;
        }
        // Two-loop recursion.
        Vector q = g;
        std::vector<double> alpha(S.size());
        for (std::size_t i = S.size(); i-- > 0;) {
            alpha[i] = rho[i] * S[i].dot(q);
            q -= alpha[i] * Y[i];
        }
        if (!S.empty()) q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
        for (std::size_t i = 0; i < S.size(); ++i) {
            const double beta = rho[i] * Y[i].dot(q);
            q += (alpha[i] - beta) * S[i];
        }
        Vector dir = -q;
        double d0 = g.dot(dir);
        if (!(d0 < 0.0)) {  // not a descent direction: restart from steepest descent
            S.clear();
            Y.clear();
            rho.clear();
            dir = -g;
            d0 = -g.squaredNorm();
        }
        const double a1 = S.empty() ? std::min(1.0, 1.0 / r.grad_norm) : 1.0;

        LineSearch ls(fg, r.x, dir, r.f, d0, opt);
        Point next;
        if (!ls.run(a1, next)) {
            if (ls.has_best() && ls.best().f < r.f) {
                r.x = ls.best().x;
                r.f = ls.best().f;
                r.grad_norm = ls.best().g.norm();
            }
            r.iterations = it + 1;
            r.status = r.grad_norm < opt.grad_tol ? LbfgsStatus::Converged
                                                  : LbfgsStatus::LineSearchFailed;
            return r;
        }
        Vector s = next.x - r.x;
        Vector y = next.g - g;
        const double ys = y.dot(s);
        if (ys > 1e-12 * y.squaredNorm()) {
            S.push_back(std::move(s));
            Y.push_back(std::move(y));
            rho.push_back(1.0 / ys);
            if (static_cast<int>(S.size()) > opt.memory) {
                S.pop_front();
                Y.pop_front();
                rho.pop_front();
            }
        }
        r.x = std::move(next.x);
        g = std::move(next.g);
        r.f = next.f;
        r.grad_norm = g.norm();
        r.iterations = it + 1;
    }
    r.status = r.grad_norm < opt.grad_tol ? LbfgsStatus::Converged : LbfgsStatus::MaxIterations;
    return r;
}

}  // namespace ckn
