#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ckn/spec.hpp"
#include "ckn/spec_io.hpp"

namespace ckn {

enum class BuiltinArch { LeNet1, LeNet5, AllCnnC };

BuiltinArch builtin_from_string(const std::string& name);
std::string to_string(BuiltinArch arch);

// Reference architectures. A filter override replaces the filter count of every
// trainable layer except a final 1x1 layer whose width is the class count.
NetworkSpec builtin_architecture(BuiltinArch arch,
                                 std::optional<int> filters_per_layer = std::nullopt);

// Switches every projecting layer to the rbf_sphere kernel on normalized patches.
NetworkSpec supervised_variant(NetworkSpec spec, double sigma = 0.6);

// Translates a ConvNet description (JSON, see README) into a CKN spec.
NetworkSpec translate_convnet(const Json& desc);

struct LayerShape {
    int index = 0;
    int stage = 0;
    LayerType type = LayerType::Convolutional;
    Dims out;
};

// Output dims of every layer. Throws ValidationError naming the first bad layer.
std::vector<LayerShape> validate_shapes(const NetworkSpec& spec);

// Output dims of the last layer of each stage, in stage order.
std::vector<Dims> stage_chain(const std::vector<LayerShape>& shapes);

std::string format_shape_report(const NetworkSpec& spec, const std::vector<LayerShape>& shapes);

}  // namespace ckn
