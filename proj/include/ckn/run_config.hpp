#pragma once

#include <optional>
#include <string>

#include "ckn/arch.hpp"
#include "ckn/data.hpp"
#include "ckn/train.hpp"

namespace ckn {

// How the network of a run is chosen: a built-in architecture or an explicit spec.
struct NetworkChoice {
    std::optional<BuiltinArch> arch;
    std::optional<int> filters;
    // Built-ins are trained with rbf_sphere kernels unless this is false.
    bool supervised_kernels = true;
    double sigma = 0.6;
    std::optional<NetworkSpec> spec;

    NetworkSpec resolve() const;
};

// A run config file: {"network": ..., "optimizer": ..., "data": ...}, all optional.
struct RunConfig {
    NetworkChoice network;
    OptimizerConfig optimizer;
    DataConfig data;
};

Json to_json(const OptimizerConfig& c);
Json to_json(const DataConfig& c);
Json to_json(const NetworkChoice& c);
Json to_json(const RunConfig& c);

// Each reader starts from `base` and overrides the keys present. Unknown keys
// and ill-typed values raise ConfigError.
OptimizerConfig optimizer_config_from_json(const Json& j, OptimizerConfig base = {});
DataConfig data_config_from_json(const Json& j, DataConfig base = {});
NetworkChoice network_choice_from_json(const Json& j);
RunConfig run_config_from_json(const Json& j);

// A file holding either a run config or a bare network spec.
RunConfig read_run_config(const std::string& path);

}  // namespace ckn
