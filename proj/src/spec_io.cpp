#include "ckn/spec_io.hpp"

#include <fstream>
#include <sstream>

#include "ckn/error.hpp"

namespace ckn {

std::string to_string(LayerType type) {
    switch (type) {
        case LayerType::Convolutional: return "convolutional";
        case LayerType::FullyConnected: return "fully_connected";
        case LayerType::PoolOnly: return "pool_only";
        case LayerType::IdentityProjection: return "identity_projection";
    }
    return "unknown";
}

LayerType layer_type_from_string(const std::string& name) {
    if (name == "convolutional") return LayerType::Convolutional;
    if (name == "fully_connected") return LayerType::FullyConnected;
    if (name == "pool_only") return LayerType::PoolOnly;
    if (name == "identity_projection") return LayerType::IdentityProjection;
    throw ConfigError("unknown layer type '" + name + "'");
}

Json to_json(const KernelSpec& k) {
    Json j;
    j["kind"] = to_string(k.kind);
    if (k.kind == KernelKind::RbfSphere) j["sigma"] = k.sigma;
    return j;
}

Json to_json(const PoolingSpec& p) {
    Json j;
    j["kind"] = to_string(p.kind);
    if (p.kind == PoolingKind::Gaussian) j["sigma"] = p.sigma;
    j["size"] = {p.pool_h, p.pool_w};
    j["subsample"] = p.subsample;
    return j;
}

Json to_json(const LayerSpec& l) {
    Json j;
    j["type"] = to_string(l.type);
    j["stage"] = l.stage;
    if (l.type != LayerType::PoolOnly) {
        j["kernel"] = to_json(l.kernel);
        j["filters"] = l.filters;
        j["patch"] = {l.geom.patch_h, l.geom.patch_w};
        j["stride"] = {l.geom.stride_h, l.geom.stride_w};
        j["pad"] = l.geom.pad;
    }
    j["pooling"] = l.pooling ? to_json(*l.pooling) : Json(nullptr);
    if (l.type != LayerType::PoolOnly) {
        j["trainable"] = l.trainable;
        j["normalize_patches"] = l.normalize_patches;
    }
    j["note"] = l.note;
    return j;
}

Json to_json(const NetworkSpec& n) {
    Json j;
    j["name"] = n.name;
    j["input"] = {{"channels", n.input.channels},
                  {"height", n.input.height},
                  {"width", n.input.width},
                  {"pad", n.input_pad}};
    j["classes"] = n.classes;
    j["lambda"] = n.lambda;
    j["epsilon"] = n.epsilon;
    j["newton"] = {{"outer", n.newton_outer}, {"inner", n.newton_inner}};
    Json layers = Json::array();
    for (const auto& l : n.layers) layers.push_back(to_json(l));
    j["layers"] = std::move(layers);
    return j;
}

namespace {

template <class T>
T get(const Json& j, const char* key) {
    if (!j.contains(key)) throw ConfigError(std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("field '") + key + "': " + e.what());
    }
}

template <class T>
T get_or(const Json& j, const char* key, T fallback) {
    return j.contains(key) ? get<T>(j, key) : fallback;
}

std::pair<int, int> get_pair(const Json& j, const char* key, int fallback) {
    if (!j.contains(key)) return {fallback, fallback};
    const Json& v = j.at(key);
    if (v.is_number_integer()) return {v.get<int>(), v.get<int>()};
    if (v.is_array() && v.size() == 2 && v[0].is_number_integer() && v[1].is_number_integer())
        return {v[0].get<int>(), v[1].get<int>()};
    throw ConfigError(std::string("field '") + key + "' must be an integer or [h, w]");
}

}  // namespace

KernelSpec kernel_from_json(const Json& j) {
    KernelSpec k;
    k.kind = kernel_kind_from_string(get<std::string>(j, "kind"));
    if (k.kind == KernelKind::RbfSphere) k.sigma = get<double>(j, "sigma");
    validate(k);
    return k;
}

PoolingSpec pooling_from_json(const Json& j) {
    PoolingSpec p;
    p.kind = pooling_kind_from_string(get<std::string>(j, "kind"));
    if (p.kind == PoolingKind::Gaussian) p.sigma = get<double>(j, "sigma");
    std::tie(p.pool_h, p.pool_w) = get_pair(j, "size", 1);
    p.subsample = get_or<int>(j, "subsample", 1);
    return p;
}

LayerSpec layer_from_json(const Json& j) {
    LayerSpec l;
    l.type = layer_type_from_string(get<std::string>(j, "type"));
    l.stage = get_or<int>(j, "stage", 0);
    if (j.contains("pooling") && !j.at("pooling").is_null())
        l.pooling = pooling_from_json(j.at("pooling"));
    l.note = get_or<std::string>(j, "note", "");
    if (l.type == LayerType::PoolOnly) {
        l.trainable = false;
        return l;
    }
    l.kernel = kernel_from_json(get<Json>(j, "kernel"));
    l.filters = get<int>(j, "filters");
    std::tie(l.geom.patch_h, l.geom.patch_w) = get_pair(j, "patch", 1);
    std::tie(l.geom.stride_h, l.geom.stride_w) = get_pair(j, "stride", 1);
    l.geom.pad = get_or<int>(j, "pad", 0);
    l.trainable = get_or<bool>(j, "trainable", l.type != LayerType::IdentityProjection);
    l.normalize_patches = get_or<bool>(j, "normalize_patches", true);
    return l;
}

NetworkSpec network_from_json(const Json& j) {
    NetworkSpec n;
    n.name = get_or<std::string>(j, "name", "");
    const Json& in = get<Json>(j, "input");
    n.input = {get<int>(in, "channels"), get<int>(in, "height"), get<int>(in, "width")};
    n.input_pad = get_or<int>(in, "pad", 0);
    n.classes = get_or<int>(j, "classes", 10);
    n.lambda = get_or<double>(j, "lambda", 0.0);
    n.epsilon = get_or<double>(j, "epsilon", 1e-3);
    if (j.contains("newton")) {
        n.newton_outer = get_or<int>(j.at("newton"), "outer", 20);
        n.newton_inner = get_or<int>(j.at("newton"), "inner", 1);
    }
    if (n.classes < 2) throw ConfigError("need at least two classes");
    if (n.epsilon < 0.0) throw ConfigError("epsilon must be non-negative");
    if (n.newton_outer < 1 || n.newton_inner < 1)
        throw ConfigError("Newton iteration counts must be positive");
    const Json& layers = get<Json>(j, "layers");
    if (!layers.is_array()) throw ConfigError("'layers' must be an array");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        try {
            n.layers.push_back(layer_from_json(layers[i]));
        } catch (const ConfigError& e) {
            throw ConfigError("layer " + std::to_string(i) + ": " + e.what());
        }
    }
    return n;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
    }
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << text;
    if (!out) throw Error("failed writing '" + path + "'");
}

}  // namespace ckn
