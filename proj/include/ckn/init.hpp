#pragma once

#include <cstdint>
#include <vector>

#include "ckn/network.hpp"

namespace ckn {

// Unit-norm patch columns and the image each one came from.
struct PatchSample {
    Matrix patches;  // s x n
    std::vector<int> image_indices;
};

inline constexpr double kConstantPatchVariance = 1e-12;

// Input of layer `layer` for one image, computed through the layers before it.
FeatureMap forward_to_layer(const Network& net, const FeatureMap& x, const Weights& w,
                            const GramSet& grams, std::size_t layer);

// Draws n non-constant patches from the input of layer `layer`, taking at most
// ceil(n / images) patches from any image. Layers before `layer` must be initialized.
PatchSample sample_patches(const std::vector<FeatureMap>& images, const Network& net,
                           const Weights& w, std::size_t layer, int n, std::uint64_t seed,
                           int threads = 1);

struct KMeansResult {
    Matrix centroids;                // f x s, unit rows
    std::vector<double> objective;   // sum of max cosine similarities after each assignment
    int iterations = 0;
};

// Spherical k-means on the columns of `patches` with farthest-point seeding.
KMeansResult spherical_kmeans(const Matrix& patches, int f, int iters, std::uint64_t seed);
// Same, started from the given centroids (f x s).
KMeansResult spherical_kmeans(const Matrix& patches, const Matrix& initial, int iters);

struct InitOptions {
    int patches_per_layer = 10000;
    int kmeans_iters = 100;
    int threads = 1;
};

// Layer-by-layer filter fitting. Pool-only layers get an empty bank and
// identity projections the identity.
Weights unsupervised_init(const Network& net, const std::vector<FeatureMap>& images,
                          std::uint64_t seed, const InitOptions& opt = {});

struct FeatureNormalization {
    Vector center;
    double scale = 1.0;
};

// Rows of X are feature vectors.
FeatureNormalization feature_normalization_fit(const Matrix& X);
Matrix feature_normalization_apply(const Matrix& X, const FeatureNormalization& fn);

}  // namespace ckn
