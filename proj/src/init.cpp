#include "ckn/init.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>

#include "ckn/error.hpp"
#include "ckn/parallel.hpp"

namespace ckn {

FeatureMap forward_to_layer(const Network& net, const FeatureMap& x, const Weights& w,
                            const GramSet& grams, std::size_t layer) {
    FeatureMap F = net.prepare_input(x);
    for (std::size_t l = 0; l < layer; ++l) F = layer_forward(F, w[l], net.plans()[l], grams[l]).F;
    return F;
}

namespace {

GramSet partial_grams(const Network& net, const Weights& w, std::size_t layer) {
    GramSet g(net.size());
    for (std::size_t l = 0; l < layer; ++l) {
        const auto& p = net.plans()[l];
        if (p.projects())
            g[l] = std::make_shared<GramCache>(gram_forward(w[l], p.spec.kernel, p.epsilon,
                                                            p.newton_outer, p.newton_inner));
    }
    return g;
}

double patch_variance(const Eigen::Ref<const Vector>& e) {
    const double mean = e.mean();
    return (e.array() - mean).square().mean();
}

}  // namespace

PatchSample sample_patches(const std::vector<FeatureMap>& images, const Network& net,
                           const Weights& w, std::size_t layer, int n, std::uint64_t seed,
                           int threads) {
    if (layer >= net.size()) throw std::out_of_range("sample_patches: layer index out of range");
    const auto& plan = net.plans()[layer];
    if (!plan.projects()) throw ConfigError("sample_patches: layer has no filters");
    if (images.empty()) throw InsufficientDataError("sample_patches: dataset is empty");
    if (n < 1) throw std::invalid_argument("sample_patches: n must be positive");

    const std::size_t N = images.size();
    const int quota = static_cast<int>((static_cast<std::size_t>(n) + N - 1) / N);
    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const GramSet grams = partial_grams(net, w, layer);
    const int s = plan.patch_length();
    PatchSample out;
    out.patches.resize(s, n);
    int taken = 0;

    // Images are processed in chunks; each image draws its positions from its own stream
    // so the result does not depend on the thread count.
    const std::size_t chunk = std::max<std::size_t>(64, static_cast<std::size_t>(threads) * 16);
    for (std::size_t start = 0; start < N && taken < n; start += chunk) {
        const std::size_t stop = std::min(N, start + chunk);
        std::vector<Matrix> picked(stop - start);
        parallel_for(stop - start, threads, [&](std::size_t k) {
            const int idx = order[start + k];
            const FeatureMap F = forward_to_layer(net, images[idx], w, grams, layer);
            const Matrix E = extract_patches(F, plan.spec.geom);
            std::vector<int> pos(E.cols());
            std::iota(pos.begin(), pos.end(), 0);
            std::seed_seq sq{static_cast<std::uint64_t>(seed), static_cast<std::uint64_t>(idx)};
            std::mt19937_64 local(sq);
            std::shuffle(pos.begin(), pos.end(), local);
            Matrix chosen(s, quota);
            int c = 0;
            for (int j : pos) {
                if (c == quota) break;
                if (patch_variance(E.col(j)) <= kConstantPatchVariance) continue;
                chosen.col(c++) = E.col(j) / E.col(j).norm();
            }
            picked[k] = chosen.leftCols(c);
        });
        for (std::size_t k = 0; k < picked.size() && taken < n; ++k)
            for (Eigen::Index c = 0; c < picked[k].cols() && taken < n; ++c) {
                out.patches.col(taken++) = picked[k].col(c);
                out.image_indices.push_back(order[start + k]);
            }
    }
    if (taken < n)
        throw InsufficientDataError("sample_patches: only " + std::to_string(taken) +
                                    " non-constant patches available, " + std::to_string(n) +
                                    " requested");
    return out;
}

namespace {

// Assigns every column to its most similar centroid. Returns the objective.
double assign(const Matrix& C, const Matrix& X, std::vector<int>& label, Vector& best) {
    const Matrix sims = C * X;
    double total = 0.0;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        Eigen::Index k;
        best(j) = sims.col(j).maxCoeff(&k);
        label[j] = static_cast<int>(k);
        total += best(j);
    }
    return total;
}

}  // namespace

KMeansResult spherical_kmeans(const Matrix& X, const Matrix& initial, int iters) {
    const Eigen::Index n = X.cols();
    const int f = static_cast<int>(initial.rows());
    if (f < 1 || initial.cols() != X.rows())
        throw ShapeError("spherical_kmeans: initial centroids do not match the patch length");
    if (f > n)
        throw std::invalid_argument("spherical_kmeans: " + std::to_string(f) +
                                    " centroids for " + std::to_string(n) + " patches");
    KMeansResult r;
    r.centroids = initial;
    std::vector<int> label(n, -1), previous;
    Vector best(n);
    for (int it = 0; it < iters; ++it) {
        previous = label;
        r.objective.push_back(assign(r.centroids, X, label, best));
        r.iterations = it + 1;
        if (label == previous) break;

        Matrix sums = Matrix::Zero(f, X.rows());
        for (Eigen::Index j = 0; j < n; ++j) sums.row(label[j]) += X.col(j).transpose();
        std::vector<bool> used(n, false);
        for (int k = 0; k < f; ++k) {
            const double norm = sums.row(k).norm();
            if (norm > 1e-12) {
                r.centroids.row(k) = sums.row(k) / norm;
                continue;
            }
            // Empty (or cancelling) cluster: re-seed from the worst-represented column.
            Eigen::Index far = -1;
            for (Eigen::Index j = 0; j < n; ++j)
                if (!used[j] && (far < 0 || best(j) < best(far))) far = j;
            used[far] = true;
            best(far) = 1.0;
            r.centroids.row(k) = X.col(far).transpose();
        }
    }
    return r;
}

KMeansResult spherical_kmeans(const Matrix& X, int f, int iters, std::uint64_t seed) {
    const Eigen::Index n = X.cols();
    if (f < 1 || f > n)
        throw std::invalid_argument("spherical_kmeans: cannot fit " + std::to_string(f) +
                                    " centroids to " + std::to_string(n) + " patches");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    Matrix C(f, X.rows());
    C.row(0) = X.col(pick(rng)).transpose();
    Vector closest = (C.row(0) * X).transpose();  // similarity to the nearest chosen centroid
    for (int k = 1; k < f; ++k) {
        Eigen::Index far;
        closest.minCoeff(&far);
        C.row(k) = X.col(far).transpose();
        closest = closest.cwiseMax((C.row(k) * X).transpose());
    }
    return spherical_kmeans(X, C, iters);
}

Weights unsupervised_init(const Network& net, const std::vector<FeatureMap>& images,
                          std::uint64_t seed, const InitOptions& opt) {
    Weights w(net.size());
    for (std::size_t l = 0; l < net.size(); ++l) {
        const auto& plan = net.plans()[l];
        if (!plan.projects()) continue;
        if (plan.spec.type == LayerType::IdentityProjection) {
            w[l] = Matrix::Identity(plan.spec.filters, plan.spec.filters);
            continue;
        }
        const std::uint64_t layer_seed = seed * 1000003ULL + l;
        const int n = std::max(opt.patches_per_layer, plan.spec.filters);
        PatchSample sample = sample_patches(images, net, w, l, n, layer_seed, opt.threads);
        w[l] = spherical_kmeans(sample.patches, plan.spec.filters, opt.kmeans_iters, layer_seed)
                   .centroids;
    }
    return w;
}

FeatureNormalization feature_normalization_fit(const Matrix& X) {
    if (X.rows() == 0) throw DegenerateDataError("feature normalization: no features");
    FeatureNormalization fn;
    fn.center = X.colwise().mean().transpose();
    fn.scale = (X.rowwise() - fn.center.transpose()).rowwise().norm().mean();
    if (!(fn.scale >= 1e-12))
        throw DegenerateDataError("feature normalization: features are constant");
    return fn;
}

Matrix feature_normalization_apply(const Matrix& X, const FeatureNormalization& fn) {
    if (X.cols() != fn.center.size())
        throw ShapeError("feature normalization: dimension mismatch");
    return (X.rowwise() - fn.center.transpose()) / fn.scale;
}

}  // namespace ckn
