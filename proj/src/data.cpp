#include "ckn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>

#include "ckn/error.hpp"

namespace ckn {

namespace {

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::string& path) {
    if (off + 4 > b.size())
        throw FormatError(path + ": truncated header at byte " + std::to_string(off));
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
           (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

template <class Fn>
Dataset map_images(Dataset ds, Fn&& fn) {
    for (auto& im : ds.images) im = fn(im);
    return ds;
}

}  // namespace

Dims Dataset::dims() const {
    if (images.empty()) return {};
    return images.front().dims();
}

void Dataset::validate() const {
    if (images.size() != labels.size())
        throw FormatError(name + ": " + std::to_string(images.size()) + " images but " +
                          std::to_string(labels.size()) + " labels");
    const Dims d = dims();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw FormatError(name + ": label " + std::to_string(labels[i]) + " of image " +
                              std::to_string(i) + " outside [0, " + std::to_string(num_classes) + ")");
        if (images[i].dims() != d)
            throw FormatError(name + ": image " + std::to_string(i) + " has shape " +
                              to_string(images[i].dims()) + ", expected " + to_string(d));
        if (!images[i].values.allFinite())
            throw FormatError(name + ": image " + std::to_string(i) + " has non-finite pixels");
    }
}

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
    const auto ib = read_bytes(images_path);
    const auto lb = read_bytes(labels_path);
    if (const auto m = read_be32(ib, 0, images_path); m != 0x803)
        throw FormatError(images_path + ": bad magic at byte 0 (expected 0x00000803)");
    if (const auto m = read_be32(lb, 0, labels_path); m != 0x801)
        throw FormatError(labels_path + ": bad magic at byte 0 (expected 0x00000801)");
    const std::size_t n = read_be32(ib, 4, images_path);
    const std::size_t rows = read_be32(ib, 8, images_path);
    const std::size_t cols = read_be32(ib, 12, images_path);
    const std::size_t nl = read_be32(lb, 4, labels_path);
    if (n != nl)
        throw FormatError(labels_path + ": count mismatch at byte 4 (" + std::to_string(nl) +
                          " labels for " + std::to_string(n) + " images)");
    const std::size_t px = rows * cols;
    if (ib.size() < 16 + n * px)
        throw FormatError(images_path + ": truncated payload at byte " + std::to_string(ib.size()) +
                          " (expected " + std::to_string(16 + n * px) + ")");
    if (lb.size() < 8 + n)
        throw FormatError(labels_path + ": truncated payload at byte " + std::to_string(lb.size()) +
                          " (expected " + std::to_string(8 + n) + ")");

    Dataset ds;
    ds.name = "mnist";
    ds.num_classes = 10;
    ds.images.reserve(n);
    ds.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Matrix v(1, static_cast<Eigen::Index>(px));
        const std::uint8_t* p = ib.data() + 16 + i * px;
        for (std::size_t j = 0; j < px; ++j) v(0, static_cast<Eigen::Index>(j)) = p[j] / 255.0;
        ds.images.emplace_back(std::move(v), static_cast<int>(rows), static_cast<int>(cols));
        const int label = lb[8 + i];
        if (label > 9)
            throw FormatError(labels_path + ": label " + std::to_string(label) + " at byte " +
                              std::to_string(8 + i));
        ds.labels.push_back(label);
    }
    ds.provenance.push_back({"load", Json{{"format", "mnist_idx"}, {"scale", 1.0 / 255.0}}});
    return ds;
}

Dataset load_mnist_dir(const std::string& dir, bool train) {
    const std::string prefix = dir + (train ? "/train" : "/t10k");
    Dataset ds = load_mnist_idx(prefix + "-images-idx3-ubyte", prefix + "-labels-idx1-ubyte");
    ds.name = train ? "mnist_train" : "mnist_test";
    return ds;
}

Dataset load_cifar10_bin(const std::vector<std::string>& paths) {
    constexpr std::size_t kRecord = 3073;
    constexpr int kSide = 32;
    Dataset ds;
    ds.name = "cifar10";
    ds.num_classes = 10;
    for (const auto& path : paths) {
        const auto b = read_bytes(path);
        if (b.empty() || b.size() % kRecord != 0)
            throw FormatError(path + ": length " + std::to_string(b.size()) +
                              " is not a multiple of 3073 (record ends at byte " +
                              std::to_string(b.size() - b.size() % kRecord) + ")");
        for (std::size_t off = 0; off < b.size(); off += kRecord) {
            const int label = b[off];
            if (label > 9)
                throw FormatError(path + ": label " + std::to_string(label) + " at byte " +
                                  std::to_string(off));
            Matrix v(3, kSide * kSide);
            for (int c = 0; c < 3; ++c)
                for (int j = 0; j < kSide * kSide; ++j)
                    v(c, j) = b[off + 1 + static_cast<std::size_t>(c * kSide * kSide + j)] / 255.0;
            ds.images.emplace_back(std::move(v), kSide, kSide);
            ds.labels.push_back(label);
        }
    }
    ds.provenance.push_back({"load", Json{{"format", "cifar10_bin"}, {"scale", 1.0 / 255.0}}});
    return ds;
}

StandardizationStats standardization_fit(const Dataset& ds, bool per_channel) {
    if (ds.images.empty()) throw DegenerateDataError("standardize: empty dataset");
    const int C = ds.dims().channels;
    const int groups = per_channel ? C : 1;
    std::vector<double> sum(static_cast<std::size_t>(groups), 0.0);
    std::vector<double> count(static_cast<std::size_t>(groups), 0.0);
    for (const auto& im : ds.images)
        for (int c = 0; c < C; ++c) {
            const auto g = static_cast<std::size_t>(per_channel ? c : 0);
            sum[g] += im.values.row(c).sum();
            count[g] += static_cast<double>(im.values.cols());
        }
    StandardizationStats st;
    st.per_channel = per_channel;
    for (int g = 0; g < groups; ++g) st.mean.push_back(sum[g] / count[g]);
    std::vector<double> ss(static_cast<std::size_t>(groups), 0.0);
    for (const auto& im : ds.images)
        for (int c = 0; c < C; ++c) {
            const auto g = static_cast<std::size_t>(per_channel ? c : 0);
            ss[g] += (im.values.row(c).array() - st.mean[g]).square().sum();
        }
    for (int g = 0; g < groups; ++g) {
        const double sd = std::sqrt(ss[g] / count[g]);
        if (!(sd > 1e-12))
            throw DegenerateDataError("standardize: zero variance" +
                                      (per_channel ? " in channel " + std::to_string(g) : std::string()));
        st.stddev.push_back(sd);
    }
    return st;
}

Dataset standardize(Dataset ds, const StandardizationStats& st) {
    for (auto& im : ds.images)
        for (int c = 0; c < im.channels(); ++c) {
            const auto g = static_cast<std::size_t>(st.per_channel ? c : 0);
            if (g >= st.mean.size()) throw ShapeError("standardize: channel count mismatch");
            im.values.row(c) = (im.values.row(c).array() - st.mean[g]) / st.stddev[g];
        }
    ds.provenance.push_back({"standardize", Json{{"per_channel", st.per_channel},
                                                 {"mean", st.mean},
                                                 {"stddev", st.stddev}}});
    return ds;
}

Dataset zca_whiten_per_image(Dataset ds, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("zca_whiten_per_image: eps must be positive");
    ds = map_images(std::move(ds), [&](const FeatureMap& im) {
        const Matrix& X = im.values;
        const Matrix Xc = X.colwise() - X.rowwise().mean();
        const Matrix C = Xc * Xc.transpose() / static_cast<double>(X.cols());
        Eigen::SelfAdjointEigenSolver<Matrix> es(C);
        const Vector d = es.eigenvalues().cwiseMax(eps).cwiseSqrt().cwiseInverse();
        const Matrix W = es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
        return FeatureMap(W * X, im.height, im.width);
    });
    ds.provenance.push_back({"zca_per_image", Json{{"eps", eps}}});
    return ds;
}

Dataset pad_images(Dataset ds, int pad) {
    if (pad < 0) throw std::invalid_argument("pad_images: negative pad");
    ds = map_images(std::move(ds), [&](const FeatureMap& im) { return zero_pad(im, pad); });
    ds.provenance.push_back({"pad", Json{{"pad", pad}}});
    return ds;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, std::size_t val_size,
                                            std::uint64_t seed) {
    if (val_size >= ds.size() && !(val_size == 0 && ds.size() == 0))
        throw std::invalid_argument("split_train_val: val_size " + std::to_string(val_size) +
                                    " must be smaller than the dataset size " +
                                    std::to_string(ds.size()));
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(val_size));
    std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(val_size), idx.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    auto take = [&](const std::vector<std::size_t>& ids, const std::string& suffix) {
        Dataset out;
        out.name = ds.name + suffix;
        out.num_classes = ds.num_classes;
        out.provenance = ds.provenance;
        out.images.reserve(ids.size());
        for (auto i : ids) {
            out.images.push_back(ds.images[i]);
            out.labels.push_back(ds.labels[i]);
        }
        return out;
    };
    return {take(train, "_train"), take(val, "_val")};
}

Dataset head(const Dataset& ds, std::size_t n) {
    Dataset out;
    out.name = ds.name;
    out.num_classes = ds.num_classes;
    out.provenance = ds.provenance;
    n = std::min(n, ds.size());
    out.images.assign(ds.images.begin(), ds.images.begin() + static_cast<std::ptrdiff_t>(n));
    out.labels.assign(ds.labels.begin(), ds.labels.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
}

Dataset replay_provenance(Dataset raw, const std::vector<ProvenanceStep>& steps) {
    for (const auto& s : steps) {
        if (s.op == "load") continue;
        if (s.op == "standardize") {
            StandardizationStats st;
            st.per_channel = s.params.at("per_channel").get<bool>();
            st.mean = s.params.at("mean").get<std::vector<double>>();
            st.stddev = s.params.at("stddev").get<std::vector<double>>();
            raw = standardize(std::move(raw), st);
        } else if (s.op == "zca_per_image") {
            raw = zca_whiten_per_image(std::move(raw), s.params.at("eps").get<double>());
        } else if (s.op == "pad") {
            raw = pad_images(std::move(raw), s.params.at("pad").get<int>());
        } else {
            throw FormatError("unknown preprocessing step '" + s.op + "'");
        }
    }
    return raw;
}

namespace {

Dataset load_raw(const DataConfig& cfg, bool train) {
    if (cfg.dir.empty()) throw ConfigError("no data directory given");
    if (cfg.dataset == "mnist") return load_mnist_dir(cfg.dir, train);
    if (cfg.dataset == "cifar10") {
        std::vector<std::string> paths;
        if (train)
            for (int i = 1; i <= 5; ++i) paths.push_back(cfg.dir + "/data_batch_" + std::to_string(i) + ".bin");
        else
            paths.push_back(cfg.dir + "/test_batch.bin");
        Dataset ds = load_cifar10_bin(paths);
        ds.name = train ? "cifar10_train" : "cifar10_test";
        return ds;
    }
    throw ConfigError("unknown dataset '" + cfg.dataset + "' (expected mnist or cifar10)");
}

}  // namespace

PreparedData prepare_data(const DataConfig& cfg, bool load_test) {
    Dataset full = load_raw(cfg, true);
    auto [train, val] = split_train_val(full, cfg.val_size, cfg.split_seed);
    if (cfg.train_size) train = head(train, cfg.train_size);
    const bool cifar = cfg.dataset == "cifar10";
    const StandardizationStats st = standardization_fit(train, cifar);
    PreparedData out;
    out.train = standardize(std::move(train), st);
    out.val = standardize(std::move(val), st);
    if (cifar) {
        out.train = zca_whiten_per_image(std::move(out.train));
        out.val = zca_whiten_per_image(std::move(out.val));
    }
    if (load_test) out.test = load_test_split(cfg, out.train.provenance);
    return out;
}

Dataset load_test_split(const DataConfig& cfg, const std::vector<ProvenanceStep>& provenance) {
    Dataset test = load_raw(cfg, false);
    if (cfg.test_size) test = head(test, cfg.test_size);
    return replay_provenance(std::move(test), provenance);
}

}  // namespace ckn
