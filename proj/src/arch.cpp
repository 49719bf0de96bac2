#include "ckn/arch.hpp"

#include <sstream>

#include "ckn/error.hpp"
#include "ckn/layer.hpp"
#include "ckn/network.hpp"

namespace ckn {

namespace {

const char* kTanhNote = "tanh replaced by the order-0 arc-cosine kernel (inexact correspondence)";
const char* kLrnNote =
    "local response normalization replaced by dividing patches by their norms (inexact "
    "correspondence)";

LayerSpec projection(LayerType type, int stage, KernelSpec kernel, int filters,
                     PatchGeometry geom, std::string note = {}) {
    LayerSpec l;
    l.type = type;
    l.stage = stage;
    l.kernel = kernel;
    l.filters = filters;
    l.geom = geom;
    l.trainable = type != LayerType::IdentityProjection;
    l.normalize_patches = kernel.kind != KernelKind::Linear;
    l.note = std::move(note);
    return l;
}

LayerSpec pool_only(int stage, PoolingSpec pooling) {
    LayerSpec l;
    l.type = LayerType::PoolOnly;
    l.stage = stage;
    l.pooling = pooling;
    l.trainable = false;
    return l;
}

PatchGeometry square(int size, int stride = 1, int pad = 0) {
    return {size, size, stride, stride, pad};
}

PoolingSpec average(int size, int subsample) {
    return {PoolingKind::Average, 0.0, size, size, subsample};
}

NetworkSpec lenet1(std::optional<int> f) {
    const int f1 = f.value_or(4);
    const int f3 = f.value_or(12);
    NetworkSpec n;
    n.name = "lenet1";
    n.input = {1, 28, 28};
    n.layers = {
        projection(LayerType::Convolutional, 1, KernelSpec::linear(), f1, square(5)),
        pool_only(2, average(2, 2)),
        projection(LayerType::IdentityProjection, 2, KernelSpec::arccos0(), f1, square(1),
                   kTanhNote),
        projection(LayerType::Convolutional, 3, KernelSpec::linear(), f3, square(5)),
        pool_only(4, average(2, 2)),
        projection(LayerType::IdentityProjection, 4, KernelSpec::arccos0(), f3, square(1),
                   kTanhNote),
    };
    return n;
}

NetworkSpec lenet5(std::optional<int> f) {
    const int f1 = f.value_or(6);
    const int f3 = f.value_or(16);
    const int f5 = f.value_or(120);
    const int f6 = f.value_or(84);
    NetworkSpec n;
    n.name = "lenet5";
    n.input = {1, 32, 32};
    n.input_pad = 2;
    n.layers = {
        projection(LayerType::Convolutional, 1, KernelSpec::linear(), f1, square(5)),
        pool_only(2, average(2, 2)),
        projection(LayerType::IdentityProjection, 2, KernelSpec::arccos0(), f1, square(1),
                   kTanhNote),
        projection(LayerType::Convolutional, 3, KernelSpec::linear(), f3, square(5)),
        pool_only(4, average(2, 2)),
        projection(LayerType::IdentityProjection, 4, KernelSpec::arccos0(), f3, square(1),
                   kTanhNote),
        projection(LayerType::FullyConnected, 5, KernelSpec::arccos0(), f5, square(5), kTanhNote),
        projection(LayerType::FullyConnected, 6, KernelSpec::arccos0(), f6, square(1), kTanhNote),
    };
    return n;
}

NetworkSpec allcnnc(std::optional<int> f) {
    const int a = f.value_or(96);
    const int b = f.value_or(192);
    const KernelSpec k = KernelSpec::arccos1();
    NetworkSpec n;
    n.name = "allcnnc";
    n.input = {3, 32, 32};
    n.layers = {
        projection(LayerType::Convolutional, 1, k, a, square(3, 1, 1)),
        projection(LayerType::Convolutional, 2, k, a, square(3, 1, 1)),
        projection(LayerType::Convolutional, 3, k, a, square(3, 2, 0)),
        projection(LayerType::Convolutional, 4, k, b, square(3, 1, 1)),
        projection(LayerType::Convolutional, 5, k, b, square(3, 1, 1)),
        projection(LayerType::Convolutional, 6, k, b, square(3, 2, 0)),
        projection(LayerType::Convolutional, 7, k, b, square(3, 1, 1)),
        projection(LayerType::Convolutional, 8, k, b, square(1)),
        projection(LayerType::Convolutional, 9, k, 10, square(1)),
        pool_only(10, average(7, 1)),
    };
    return n;
}

}  // namespace

BuiltinArch builtin_from_string(const std::string& name) {
    if (name == "lenet1") return BuiltinArch::LeNet1;
    if (name == "lenet5") return BuiltinArch::LeNet5;
    if (name == "allcnnc") return BuiltinArch::AllCnnC;
    throw ConfigError("unknown architecture '" + name + "' (expected lenet1, lenet5, allcnnc)");
}

std::string to_string(BuiltinArch arch) {
    switch (arch) {
        case BuiltinArch::LeNet1: return "lenet1";
        case BuiltinArch::LeNet5: return "lenet5";
        case BuiltinArch::AllCnnC: return "allcnnc";
    }
    return "unknown";
}

NetworkSpec builtin_architecture(BuiltinArch arch, std::optional<int> filters) {
    if (filters && *filters < 1) throw ConfigError("filter override must be positive");
    switch (arch) {
        case BuiltinArch::LeNet1: return lenet1(filters);
        case BuiltinArch::LeNet5: return lenet5(filters);
        case BuiltinArch::AllCnnC: return allcnnc(filters);
    }
    throw ConfigError("unknown architecture");
}

NetworkSpec supervised_variant(NetworkSpec spec, double sigma) {
    for (auto& l : spec.layers) {
        if (l.type == LayerType::PoolOnly) continue;
        l.kernel = KernelSpec::rbf(sigma);
        l.normalize_patches = true;
    }
    validate(KernelSpec::rbf(sigma));
    return spec;
}

namespace {

struct Translator {
    NetworkSpec out;
    Dims d;
    int stage = 0;
    bool pending_lrn = false;

    KernelSpec activation_kernel(const std::string& act, const std::string& where,
                                 std::string& note) {
        if (act == "none") return KernelSpec::linear();
        if (act == "tanh") {
            note = kTanhNote;
            return KernelSpec::arccos0();
        }
        if (act == "relu") return KernelSpec::arccos1();
        throw TranslationError(where + ": activation '" + act +
                               "' has no counterpart in the ConvNet-to-CKN correspondence table");
    }

    void push(LayerSpec l, const std::string& where) {
        if (pending_lrn && l.type != LayerType::PoolOnly) {
            l.normalize_patches = true;
            l.note = l.note.empty() ? kLrnNote : l.note + "; " + kLrnNote;
            pending_lrn = false;
        }
        try {
            d = plan_layer(l, d, out.epsilon, out.newton_outer, out.newton_inner).out;
        } catch (const Error& e) {
            throw TranslationError(where + ": " + e.what());
        }
        out.layers.push_back(std::move(l));
    }
};

int get_int(const Json& j, const char* key, int fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer())
        throw TranslationError(std::string("field '") + key + "' must be an integer");
    return j.at(key).get<int>();
}

std::pair<int, int> get_extent(const Json& j, const char* key, int fallback) {
    if (!j.contains(key)) return {fallback, fallback};
    const Json& v = j.at(key);
    if (v.is_number_integer()) return {v.get<int>(), v.get<int>()};
    if (v.is_array() && v.size() == 2) return {v[0].get<int>(), v[1].get<int>()};
    throw TranslationError(std::string("field '") + key + "' must be an integer or [h, w]");
}

}  // namespace

NetworkSpec translate_convnet(const Json& desc) {
    Translator t;
    try {
        t.out.name = desc.value("name", std::string());
        const Json& in = desc.at("input");
        if (!in.is_array() || in.size() != 3)
            throw TranslationError("'input' must be [channels, height, width]");
        t.out.input = {in[0].get<int>(), in[1].get<int>(), in[2].get<int>()};
        t.out.input_pad = desc.value("input_pad", 0);
        t.out.classes = desc.value("classes", 10);
    } catch (const nlohmann::json::exception& e) {
        throw TranslationError(std::string("malformed ConvNet description: ") + e.what());
    }
    t.d = t.out.input;
    if (!desc.contains("layers") || !desc.at("layers").is_array())
        throw TranslationError("ConvNet description has no 'layers' array");
    const Json& layers = desc.at("layers");

    bool have_classifier = false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Json& L = layers[i];
        const std::string type = L.value("type", std::string());
        const std::string where = "layer " + std::to_string(i) + " (" + type + ")";
        if (have_classifier)
            throw TranslationError(where + ": layers after the output classifier");
        const std::string act = L.value("activation", std::string("none"));
        std::string note;

        if (type == "conv") {
            const KernelSpec k = t.activation_kernel(act, where, note);
            auto [ph, pw] = get_extent(L, "kernel", 1);
            auto [sh, sw] = get_extent(L, "stride", 1);
            PatchGeometry g{ph, pw, sh, sw, get_int(L, "pad", 0)};
            t.push(projection(LayerType::Convolutional, ++t.stage, k, get_int(L, "filters", 0), g,
                              note),
                   where);
        } else if (type == "avgpool" || type == "global_avgpool") {
            PoolingSpec p;
            if (type == "global_avgpool") {
                p = average(1, 1);
                p.pool_h = t.d.height;
                p.pool_w = t.d.width;
            } else {
                auto [h, w] = get_extent(L, "size", 2);
                p = average(h, get_int(L, "stride", h));
                p.pool_w = w;
            }
            const int s = ++t.stage;
            t.push(pool_only(s, p), where);
            if (act != "none") {
                const KernelSpec k = t.activation_kernel(act, where, note);
                t.push(projection(LayerType::IdentityProjection, s, k, t.d.channels, square(1),
                                  note),
                       where);
            }
        } else if (type == "fc") {
            const int units = get_int(L, "units", 0);
            const bool last = i + 1 == layers.size();
            if (last && act == "none") {
                if (units != t.out.classes)
                    throw TranslationError(where + ": output layer has " + std::to_string(units) +
                                           " units for " + std::to_string(t.out.classes) +
                                           " classes");
                have_classifier = true;  // becomes the linear classifier
                continue;
            }
            const KernelSpec k = t.activation_kernel(act, where, note);
            PatchGeometry g{t.d.height, t.d.width, 1, 1, 0};
            t.push(projection(LayerType::FullyConnected, ++t.stage, k, units, g, note), where);
        } else if (type == "lrn") {
            const std::string nb = L.value("neighborhood", std::string());
            if (nb != "full")
                throw TranslationError(where +
                                       ": only local response normalization over the full "
                                       "feature map has a counterpart (patch norm division)");
            t.pending_lrn = true;
        } else if (type == "dropout") {
            continue;
        } else if (type == "maxpool") {
            throw TranslationError(where +
                                   ": max pooling has no counterpart in the ConvNet-to-CKN "
                                   "correspondence table");
        } else if (type == "batchnorm") {
            throw TranslationError(where +
                                   ": batch normalization has no counterpart in the "
                                   "ConvNet-to-CKN correspondence table");
        } else if (type == "partially_connected") {
            throw TranslationError(where +
                                   ": partially connected layers are reserved but not "
                                   "implemented");
        } else {
            throw TranslationError(where + ": unknown ConvNet component '" + type + "'");
        }
    }
    if (!have_classifier)
        throw TranslationError("ConvNet description must end with a linear 'fc' output layer");
    if (t.pending_lrn) throw TranslationError("local response normalization at the end of the net");
    return t.out;
}

std::vector<LayerShape> validate_shapes(const NetworkSpec& spec) {
    if (spec.input.channels < 1 || spec.input.height < 1 || spec.input.width < 1)
        throw ValidationError("input dims " + to_string(spec.input) + " are not positive");
    if (spec.input_pad < 0 || spec.raw_input().height < 1 || spec.raw_input().width < 1)
        throw ValidationError("input padding is inconsistent with the input dims");
    std::vector<LayerShape> shapes;
    Dims d = spec.input;
    int last_stage = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        try {
            d = plan_layer(l, d, spec.epsilon, spec.newton_outer, spec.newton_inner).out;
        } catch (const Error& e) {
            throw ValidationError("layer " + std::to_string(i) + ": " + e.what());
        }
        if (d.channels < 1 || d.height < 1 || d.width < 1)
            throw ValidationError("layer " + std::to_string(i) + ": output dims " + to_string(d) +
                                  " are not positive");
        if (l.stage < last_stage)
            throw ValidationError("layer " + std::to_string(i) + ": stage numbers decrease");
        last_stage = l.stage;
        shapes.push_back({static_cast<int>(i), l.stage, l.type, d});
    }
    return shapes;
}

std::vector<Dims> stage_chain(const std::vector<LayerShape>& shapes) {
    std::vector<Dims> chain;
    for (std::size_t i = 0; i < shapes.size(); ++i)
        if (i + 1 == shapes.size() || shapes[i + 1].stage != shapes[i].stage)
            chain.push_back(shapes[i].out);
    return chain;
}

std::string format_shape_report(const NetworkSpec& spec, const std::vector<LayerShape>& shapes) {
    std::ostringstream os;
    os << "input " << to_string(spec.input);
    if (spec.input_pad > 0) os << " (raw " << to_string(spec.raw_input()) << " zero-padded)";
    os << "\n";
    for (const auto& s : shapes)
        os << "layer " << s.index << " stage " << s.stage << " " << to_string(s.type) << " -> "
           << to_string(s.out) << "\n";
    const Dims last = shapes.empty() ? spec.input : shapes.back().out;
    os << "features " << last.size() << ", classes " << spec.classes << "\n";
    return os.str();
}

}  // namespace ckn
