#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ckn/arch.hpp"
#include "ckn/network.hpp"

namespace ckn {

// A small random network shaped like the given family: rbf_sphere kernels,
// at most `max_filters` filters and `max_spatial` input pixels per side, 2 to 4 layers.
NetworkSpec tiny_family_network(BuiltinArch family, std::uint64_t seed, int max_filters = 4,
                                int max_spatial = 8, double sigma = 0.6);

// Random unit-row filters for trainable layers, identities for identity projections.
Weights random_weights(const Network& net, std::uint64_t seed);

struct GradcheckOptions {
    double threshold = 1e-5;
    double fd_step = 1e-5;
    int images = 2;
    bool check_sigma = true;
    bool check_input = true;
    // Negative control: perturbs the analytic gradient of the first trainable layer.
    bool corrupt_vjp = false;
};

struct LayerGradcheck {
    std::size_t layer = 0;
    LayerType type = LayerType::Convolutional;
    double weights_error = 0.0;            // Newton-replay analytic vs central differences
    std::optional<double> sigma_error;     // rbf_sphere layers
    double lyapunov_difference = 0.0;      // replay adjoint vs the Lyapunov-solve adjoint
};

struct GradcheckReport {
    std::string name;
    std::vector<LayerGradcheck> layers;
    std::optional<double> input_error;
    double threshold = 1e-5;
    bool passed = true;
    std::string failure;  // first offending component

    double max_error() const;
    std::string format() const;
};

// max |analytic - fd| / max(max |fd|, 1e-8)
double relative_error(const Matrix& analytic, const Matrix& fd);

// Compares every analytic gradient of a random linear functional of the network
// output, summed over a few random images, with central finite differences.
GradcheckReport gradient_check(const NetworkSpec& spec, std::uint64_t seed,
                               const GradcheckOptions& opt = {});

}  // namespace ckn
