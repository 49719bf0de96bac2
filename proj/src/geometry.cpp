#include "ckn/geometry.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "ckn/error.hpp"

namespace ckn {

std::string to_string(const Dims& d) {
    return std::to_string(d.channels) + "x" + std::to_string(d.height) + "x" +
           std::to_string(d.width);
}

FeatureMap::FeatureMap(Matrix v, int h, int w) : values(std::move(v)), height(h), width(w) {
    if (values.cols() != static_cast<Eigen::Index>(h) * w)
        throw ShapeError("FeatureMap: " + std::to_string(values.cols()) +
                         " columns do not match " + std::to_string(h) + "x" + std::to_string(w));
}

Vector FeatureMap::flatten() const {
    Vector x(values.size());
    const int c = channels();
    const int p = height * width;
    for (int k = 0; k < c; ++k)
        for (int j = 0; j < p; ++j) x(static_cast<Eigen::Index>(k) * p + j) = values(k, j);
    return x;
}

FeatureMap FeatureMap::unflatten(const Vector& x, const Dims& d) {
    if (x.size() != d.size())
        throw ShapeError("unflatten: vector length " + std::to_string(x.size()) +
                         " does not match " + to_string(d));
    Matrix v(d.channels, d.locations());
    const int p = d.locations();
    for (int k = 0; k < d.channels; ++k)
        for (int j = 0; j < p; ++j) v(k, j) = x(static_cast<Eigen::Index>(k) * p + j);
    return FeatureMap(std::move(v), d.height, d.width);
}

FeatureMap zero_pad(const FeatureMap& F, int pad) {
    if (pad == 0) return F;
    const int H = F.height + 2 * pad;
    const int W = F.width + 2 * pad;
    Matrix v = Matrix::Zero(F.channels(), static_cast<Eigen::Index>(H) * W);
    for (int y = 0; y < F.height; ++y)
        for (int x = 0; x < F.width; ++x)
            v.col((y + pad) * W + x + pad) = F.values.col(y * F.width + x);
    return FeatureMap(std::move(v), H, W);
}

int PatchGeometry::out_height(int in_h) const {
    const int span = in_h + 2 * pad - patch_h;
    return span < 0 ? 0 : span / stride_h + 1;
}

int PatchGeometry::out_width(int in_w) const {
    const int span = in_w + 2 * pad - patch_w;
    return span < 0 ? 0 : span / stride_w + 1;
}

Dims patch_grid(const Dims& in, const PatchGeometry& g) {
    if (g.patch_h < 1 || g.patch_w < 1 || g.stride_h < 1 || g.stride_w < 1 || g.pad < 0)
        throw GeometryError("patch geometry has non-positive extent or stride");
    if (g.patch_h > in.height + 2 * g.pad || g.patch_w > in.width + 2 * g.pad)
        throw GeometryError("patch " + std::to_string(g.patch_h) + "x" +
                            std::to_string(g.patch_w) + " exceeds padded input " +
                            std::to_string(in.height + 2 * g.pad) + "x" +
                            std::to_string(in.width + 2 * g.pad));
    return {g.patch_length(in.channels), g.out_height(in.height), g.out_width(in.width)};
}

Matrix extract_patches(const FeatureMap& F, const PatchGeometry& g) {
    const Dims grid = patch_grid(F.dims(), g);
    const int C = F.channels();
    const int H = F.height;
    const int W = F.width;
    const int area = g.patch_h * g.patch_w;
    Matrix E(grid.channels, static_cast<Eigen::Index>(grid.height) * grid.width);
    for (int oy = 0; oy < grid.height; ++oy) {
        for (int ox = 0; ox < grid.width; ++ox) {
            const int j = oy * grid.width + ox;
            double* col = E.col(j).data();
            for (int dy = 0; dy < g.patch_h; ++dy) {
                const int iy = oy * g.stride_h - g.pad + dy;
                for (int dx = 0; dx < g.patch_w; ++dx) {
                    const int ix = ox * g.stride_w - g.pad + dx;
                    const int offset = dy * g.patch_w + dx;
                    if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
                        for (int c = 0; c < C; ++c) col[c * area + offset] = 0.0;
                    } else {
                        const double* src = F.values.col(iy * W + ix).data();
                        for (int c = 0; c < C; ++c) col[c * area + offset] = src[c];
                    }
                }
            }
        }
    }
    return E;
}

Matrix scatter_patches(const Matrix& G, const Dims& in, const PatchGeometry& g) {
    const Dims grid = patch_grid(in, g);
    if (G.rows() != grid.channels || G.cols() != grid.locations())
        throw ShapeError("scatter_patches: gradient is " + std::to_string(G.rows()) + "x" +
                         std::to_string(G.cols()) + ", expected " +
                         std::to_string(grid.channels) + "x" + std::to_string(grid.locations()));
    const int C = in.channels;
    const int area = g.patch_h * g.patch_w;
    Matrix out = Matrix::Zero(C, in.locations());
    for (int oy = 0; oy < grid.height; ++oy) {
        for (int ox = 0; ox < grid.width; ++ox) {
            const double* col = G.col(oy * grid.width + ox).data();
            for (int dy = 0; dy < g.patch_h; ++dy) {
                const int iy = oy * g.stride_h - g.pad + dy;
                if (iy < 0 || iy >= in.height) continue;
                for (int dx = 0; dx < g.patch_w; ++dx) {
                    const int ix = ox * g.stride_w - g.pad + dx;
                    if (ix < 0 || ix >= in.width) continue;
                    double* dst = out.col(iy * in.width + ix).data();
                    const int offset = dy * g.patch_w + dx;
                    for (int c = 0; c < C; ++c) dst[c] += col[c * area + offset];
                }
            }
        }
    }
    return out;
}

Vector patch_norms(const Matrix& E) {
    return E.colwise().norm().transpose().cwiseMax(kNormFloor);
}

std::string to_string(PoolingKind kind) {
    return kind == PoolingKind::Average ? "average" : "gaussian";
}

PoolingKind pooling_kind_from_string(const std::string& name) {
    if (name == "average") return PoolingKind::Average;
    if (name == "gaussian") return PoolingKind::Gaussian;
    throw ConfigError("unknown pooling kind '" + name + "'");
}

Dims pooled_dims(const Dims& in, const PoolingSpec& s) {
    if (s.pool_h < 1 || s.pool_w < 1 || s.subsample < 1)
        throw GeometryError("pooling window and subsampling factor must be positive");
    if (s.pool_h > in.height || s.pool_w > in.width)
        throw GeometryError("pooling window " + std::to_string(s.pool_h) + "x" +
                            std::to_string(s.pool_w) + " exceeds input " +
                            std::to_string(in.height) + "x" + std::to_string(in.width));
    if (s.kind == PoolingKind::Gaussian && !(s.sigma > 0.0))
        throw GeometryError("gaussian pooling needs a positive sigma");
    const int vh = in.height - s.pool_h + 1;
    const int vw = in.width - s.pool_w + 1;
    return {in.channels, (vh + s.subsample - 1) / s.subsample,
            (vw + s.subsample - 1) / s.subsample};
}

SparseMatrix build_pooling(const Dims& in, const PoolingSpec& s) {
    const Dims out = pooled_dims(in, s);
    const int n = s.pool_h * s.pool_w;

    // Window weights are the same for every output location.
    std::vector<double> w(n, 1.0 / n);
    if (s.kind == PoolingKind::Gaussian) {
        const double cy = 0.5 * (s.pool_h - 1);
        const double cx = 0.5 * (s.pool_w - 1);
        double dmin = std::numeric_limits<double>::infinity();
        std::vector<double> d2(n);
        for (int dy = 0; dy < s.pool_h; ++dy)
            for (int dx = 0; dx < s.pool_w; ++dx) {
                const double d = (dy - cy) * (dy - cy) + (dx - cx) * (dx - cx);
                d2[dy * s.pool_w + dx] = d;
                dmin = std::min(dmin, d);
            }
        double total = 0.0;
        for (int k = 0; k < n; ++k) {
            w[k] = std::exp(-(d2[k] - dmin) / (2.0 * s.sigma * s.sigma));
            total += w[k];
        }
        for (double& v : w) v /= total;
    }

    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(static_cast<size_t>(out.locations()) * n);
    for (int oy = 0; oy < out.height; ++oy)
        for (int ox = 0; ox < out.width; ++ox) {
            const int col = oy * out.width + ox;
            const int top = oy * s.subsample;
            const int left = ox * s.subsample;
            for (int dy = 0; dy < s.pool_h; ++dy)
                for (int dx = 0; dx < s.pool_w; ++dx)
                    entries.emplace_back((top + dy) * in.width + left + dx, col,
                                         w[dy * s.pool_w + dx]);
        }
    SparseMatrix P(in.locations(), out.locations());
    P.setFromTriplets(entries.begin(), entries.end());
    return P;
}

}  // namespace ckn
