#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ckn/geometry.hpp"
#include "ckn/kernels.hpp"

namespace ckn {

enum class LayerType { Convolutional, FullyConnected, PoolOnly, IdentityProjection };

std::string to_string(LayerType type);
LayerType layer_type_from_string(const std::string& name);

struct LayerSpec {
    LayerType type = LayerType::Convolutional;
    // Layers that share a stage number form one layer of the reference
    // architecture (a pooling layer followed by its 1x1 projection).
    int stage = 0;
    KernelSpec kernel;
    int filters = 0;
    PatchGeometry geom;
    // Pooling applied after the projection (or the whole layer for PoolOnly).
    std::optional<PoolingSpec> pooling;
    bool trainable = true;
    // Divide patches by their norms before the kernel and multiply back after.
    bool normalize_patches = true;
    std::string note;

    bool operator==(const LayerSpec&) const = default;
};

struct NetworkSpec {
    std::string name;
    Dims input;         // dims seen by the first layer
    int input_pad = 0;  // zero border added to raw images to reach `input`
    std::vector<LayerSpec> layers;
    int classes = 10;
    double lambda = 0.0;
    double epsilon = 1e-3;
    int newton_outer = 20;
    int newton_inner = 1;

    Dims raw_input() const {
        return {input.channels, input.height - 2 * input_pad, input.width - 2 * input_pad};
    }
    bool operator==(const NetworkSpec&) const = default;
};

}  // namespace ckn
