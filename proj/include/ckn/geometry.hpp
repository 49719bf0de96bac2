#pragma once

#include <Eigen/SparseCore>
#include <string>

#include "ckn/linalg.hpp"

namespace ckn {

using SparseMatrix = Eigen::SparseMatrix<double>;

// Spatial dimensions of a feature map: channels x height x width.
struct Dims {
    int channels = 0;
    int height = 0;
    int width = 0;

    int locations() const { return height * width; }
    long size() const { return static_cast<long>(channels) * height * width; }
    bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

// Per-location features: values is channels x (height*width), columns in row-major scan.
struct FeatureMap {
    Matrix values;
    int height = 0;
    int width = 0;

    FeatureMap() = default;
    FeatureMap(Matrix v, int h, int w);

    int channels() const { return static_cast<int>(values.rows()); }
    Dims dims() const { return {channels(), height, width}; }

    // Channel-major flattening (channel, then row, then column).
    Vector flatten() const;
    static FeatureMap unflatten(const Vector& x, const Dims& d);
};

FeatureMap zero_pad(const FeatureMap& F, int pad);

struct PatchGeometry {
    int patch_h = 1;
    int patch_w = 1;
    int stride_h = 1;
    int stride_w = 1;
    int pad = 0;

    int out_height(int in_h) const;
    int out_width(int in_w) const;
    // Patch length s for an input with in_channels channels.
    int patch_length(int in_channels) const { return in_channels * patch_h * patch_w; }
    bool operator==(const PatchGeometry&) const = default;
};

// Throws GeometryError when the patch does not fit into the padded input.
Dims patch_grid(const Dims& in, const PatchGeometry& geom);

// s x p matrix whose column j is the patch at the j-th output location.
Matrix extract_patches(const FeatureMap& F, const PatchGeometry& geom);

// Adjoint of extract_patches: scatter-adds patch columns back onto the input grid.
Matrix scatter_patches(const Matrix& G, const Dims& in, const PatchGeometry& geom);

inline constexpr double kNormFloor = 1e-8;

// Column norms of E, floored at kNormFloor.
Vector patch_norms(const Matrix& E);

enum class PoolingKind { Average, Gaussian };

struct PoolingSpec {
    PoolingKind kind = PoolingKind::Average;
    double sigma = 0.0;  // Gaussian only
    int pool_h = 1;
    int pool_w = 1;
    int subsample = 1;

    bool operator==(const PoolingSpec&) const = default;
};

std::string to_string(PoolingKind kind);
PoolingKind pooling_kind_from_string(const std::string& name);

// Output spatial dims after a valid-mode window followed by subsampling.
Dims pooled_dims(const Dims& in, const PoolingSpec& spec);

// p x p' pooling matrix for an input grid of in.height x in.width locations.
SparseMatrix build_pooling(const Dims& in, const PoolingSpec& spec);

}  // namespace ckn
