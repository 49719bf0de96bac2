#include "ckn/gradcheck.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

#include "ckn/error.hpp"

namespace ckn {

namespace {

LayerSpec rbf_projection(LayerType type, int stage, double sigma, int filters, PatchGeometry geom,
                         std::optional<PoolingSpec> pooling = std::nullopt) {
    LayerSpec l;
    l.type = type;
    l.stage = stage;
    l.kernel = KernelSpec::rbf(sigma);
    l.filters = filters;
    l.geom = geom;
    l.pooling = pooling;
    l.trainable = type != LayerType::IdentityProjection;
    l.normalize_patches = true;
    return l;
}

LayerSpec pool_layer(int stage, PoolingSpec p) {
    LayerSpec l;
    l.type = LayerType::PoolOnly;
    l.stage = stage;
    l.pooling = p;
    l.trainable = false;
    return l;
}

PatchGeometry sq(int size, int stride = 1, int pad = 0) { return {size, size, stride, stride, pad}; }

int pick(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Matrix gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
    std::normal_distribution<double> nd;
    Matrix M(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) M(i, j) = nd(rng);
    return M;
}

double functional(const Network& net, const Weights& w, const std::vector<FeatureMap>& images,
                  const Matrix& R) {
    std::vector<const FeatureMap*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    return forward_batch(net, ptrs, w, 1, false).features.cwiseProduct(R).sum();
}

template <class Eval>
Matrix central_differences(const Matrix& x0, double h, Eval&& eval) {
    Matrix fd(x0.rows(), x0.cols());
    Matrix x = x0;
    for (Eigen::Index j = 0; j < x0.cols(); ++j)
        for (Eigen::Index i = 0; i < x0.rows(); ++i) {
            x(i, j) = x0(i, j) + h;
            const double up = eval(x);
            x(i, j) = x0(i, j) - h;
            const double down = eval(x);
            x(i, j) = x0(i, j);
            fd(i, j) = (up - down) / (2.0 * h);
        }
    return fd;
}

}  // namespace

NetworkSpec tiny_family_network(BuiltinArch family, std::uint64_t seed, int max_filters,
                                int max_spatial, double sigma) {
    if (max_filters < 2 || max_spatial < 6)
        throw ConfigError("tiny networks need at least 2 filters and 6 pixels per side");
    std::mt19937_64 rng(seed);
    auto f = [&] { return pick(rng, 2, max_filters); };
    NetworkSpec n;
    n.name = to_string(family) + "_tiny";
    n.epsilon = 1e-3;
    const int side = pick(rng, 6, max_spatial);
    const PoolingSpec avg2{PoolingKind::Average, 0.0, 2, 2, 2};
    const PoolingSpec gauss2{PoolingKind::Gaussian, 1.0, 2, 2, 2};

    switch (family) {
        case BuiltinArch::LeNet1: {
            n.input = {1, side, side};
            const int f1 = f();
            n.layers.push_back(rbf_projection(LayerType::Convolutional, 1, sigma, f1, sq(3)));
            n.layers.push_back(pool_layer(2, pick(rng, 0, 1) ? avg2 : gauss2));
            n.layers.push_back(rbf_projection(LayerType::IdentityProjection, 2, sigma, f1, sq(1)));
            if (pick(rng, 0, 1))
                n.layers.push_back(rbf_projection(LayerType::Convolutional, 3, sigma, f(), sq(2)));
            break;
        }
        case BuiltinArch::LeNet5: {
            // Raw images are padded by one pixel, as LeNet-5 pads MNIST.
            n.input = {1, side, side};
            n.input_pad = 1;
            const int f1 = f();
            if (pick(rng, 0, 1)) {
                n.layers.push_back(rbf_projection(LayerType::Convolutional, 1, sigma, f1, sq(3)));
                n.layers.push_back(pool_layer(2, avg2));
                n.layers.push_back(rbf_projection(LayerType::IdentityProjection, 2, sigma, f1, sq(1)));
            } else {
                n.layers.push_back(rbf_projection(LayerType::Convolutional, 1, sigma, f1, sq(3), gauss2));
            }
            Dims d = n.input;
            for (const auto& l : n.layers) d = plan_layer(l, d).out;
            n.layers.push_back(rbf_projection(LayerType::FullyConnected, 3, sigma, f(),
                                              {d.height, d.width, 1, 1, 0}));
            break;
        }
        case BuiltinArch::AllCnnC: {
            n.input = {3, side, side};
            int stage = 1;
            n.layers.push_back(rbf_projection(LayerType::Convolutional, stage++, sigma, f(), sq(3, 1, 1)));
            if (pick(rng, 0, 1))
                n.layers.push_back(rbf_projection(LayerType::Convolutional, stage++, sigma, f(), sq(3, 2, 0)));
            if (pick(rng, 0, 1))
                n.layers.push_back(rbf_projection(LayerType::Convolutional, stage++, sigma, f(), sq(1)));
            Dims d = n.input;
            for (const auto& l : n.layers) d = plan_layer(l, d).out;
            n.layers.push_back(pool_layer(stage, {PoolingKind::Average, 0.0, d.height, d.width, 1}));
            break;
        }
    }
    return n;
}

Weights random_weights(const Network& net, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    Weights w(net.size());
    for (std::size_t l = 0; l < net.size(); ++l) {
        const auto& p = net.plans()[l];
        if (!p.projects()) continue;
        if (p.spec.type == LayerType::IdentityProjection) {
            w[l] = Matrix::Identity(p.spec.filters, p.spec.filters);
            continue;
        }
        Matrix W = gaussian(rng, p.spec.filters, p.patch_length());
        W = W.rowwise().normalized().eval();
        w[l] = std::move(W);
    }
    return w;
}

double relative_error(const Matrix& analytic, const Matrix& fd) {
    if (analytic.rows() != fd.rows() || analytic.cols() != fd.cols())
        throw ShapeError("relative_error: shape mismatch");
    if (fd.size() == 0) return 0.0;
    return (analytic - fd).cwiseAbs().maxCoeff() / std::max(fd.cwiseAbs().maxCoeff(), 1e-8);
}

double GradcheckReport::max_error() const {
    double e = input_error.value_or(0.0);
    for (const auto& l : layers) {
        e = std::max(e, l.weights_error);
        if (l.sigma_error) e = std::max(e, *l.sigma_error);
    }
    return e;
}

std::string GradcheckReport::format() const {
    std::ostringstream out;
    char buf[256];
    out << "gradcheck " << name << " (threshold " << threshold << ")\n";
    for (const auto& l : layers) {
        std::snprintf(buf, sizeof buf, "layer %zu %-20s weights %.3e", l.layer,
                      to_string(l.type).c_str(), l.weights_error);
        out << buf;
        if (l.sigma_error) {
            std::snprintf(buf, sizeof buf, "  sigma %.3e", *l.sigma_error);
            out << buf;
        }
        std::snprintf(buf, sizeof buf, "  newton-vs-lyapunov %.3e\n", l.lyapunov_difference);
        out << buf;
    }
    if (input_error) {
        std::snprintf(buf, sizeof buf, "input %.3e\n", *input_error);
        out << buf;
    }
    out << (passed ? "PASS" : "FAIL: " + failure) << '\n';
    return out.str();
}

GradcheckReport gradient_check(const NetworkSpec& spec, std::uint64_t seed,
                               const GradcheckOptions& opt) {
    Network net(spec);
    net.set_unit_row_tolerance(std::numeric_limits<double>::infinity());
    std::mt19937_64 rng(seed);
    const Weights w = random_weights(net, seed);
    const Dims raw = spec.raw_input();
    std::vector<FeatureMap> images;
    for (int i = 0; i < opt.images; ++i)
        images.emplace_back(gaussian(rng, raw.channels, raw.locations()), raw.height, raw.width);
    const Matrix R = gaussian(rng, opt.images, net.feature_dim());

    std::vector<const FeatureMap*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    const BatchPass bp = forward_batch(net, ptrs, w, 1, true);
    NetworkGradient g = backward_batch(net, bp, w, R, 1, opt.check_sigma);

    GradcheckReport rep;
    rep.name = spec.name;
    rep.threshold = opt.threshold;
    bool corrupted = false;
    for (std::size_t l = 0; l < net.size(); ++l) {
        const auto& plan = net.plans()[l];
        if (!plan.projects()) continue;
        LayerGradcheck lc;
        lc.layer = l;
        lc.type = plan.spec.type;
        if (g.weights[l].size() > 0) {
            if (opt.corrupt_vjp && !corrupted) {
                g.weights[l] *= 1.01;
                corrupted = true;
            }
            Weights wp = w;
            const Matrix fd = central_differences(w[l], opt.fd_step, [&](const Matrix& x) {
                wp[l] = x;
                return functional(net, wp, images, R);
            });
            lc.weights_error = relative_error(g.weights[l], fd);
        }
        if (opt.check_sigma && plan.spec.kernel.kind == KernelKind::RbfSphere) {
            auto at = [&](double s) {
                NetworkSpec sp = spec;
                sp.layers[l].kernel.sigma = s;
                Network n2(sp);
                n2.set_unit_row_tolerance(std::numeric_limits<double>::infinity());
                return functional(n2, w, images, R);
            };
            const double s0 = plan.spec.kernel.sigma;
            const double h = opt.fd_step;
            Matrix a(1, 1), fd(1, 1);
            a(0, 0) = g.sigma[l];
            fd(0, 0) = (at(s0 + h) - at(s0 - h)) / (2.0 * h);
            lc.sigma_error = relative_error(a, fd);
        }
        const GramCache& gram = *bp.grams[l];
        const Matrix G = gaussian(rng, gram.A.rows(), gram.A.cols());
        const Matrix replay = inv_sqrtm_vjp(gram.trace, G);
        const Matrix exact = inv_sqrtm_vjp_lyapunov(gram.trace.M, G);
        lc.lyapunov_difference = (replay - exact).norm() / std::max(exact.norm(), 1e-300);
        rep.layers.push_back(lc);
    }

    if (opt.check_input) {
        const ForwardPass pass = network_forward(net, images[0], w, bp.grams, true);
        const Matrix ga = network_backward(net, pass, w, R.row(0).transpose(), false, true).input;
        FeatureMap probe = images[0];
        const Matrix fd = central_differences(images[0].values, opt.fd_step, [&](const Matrix& x) {
            probe.values = x;
            return network_forward(net, probe, w, bp.grams, false).features.dot(R.row(0).transpose());
        });
        rep.input_error = relative_error(ga, fd);
    }

    for (const auto& l : rep.layers) {
        auto fail = [&](const std::string& what, double e) {
            if (rep.passed && !(e < opt.threshold)) {
                rep.passed = false;
                char buf[160];
                std::snprintf(buf, sizeof buf, "layer %zu %s relative error %.3e", l.layer,
                              what.c_str(), e);
                rep.failure = buf;
            }
        };
        fail("weights", l.weights_error);
        if (l.sigma_error) fail("sigma", *l.sigma_error);
    }
    if (rep.passed && rep.input_error && !(*rep.input_error < opt.threshold)) {
        rep.passed = false;
        rep.failure = "input gradient relative error " + std::to_string(*rep.input_error);
    }
    return rep;
}

}  // namespace ckn
