#include <doctest.h>

#include <random>
#include <set>

#include "ckn/data.hpp"
#include "ckn/error.hpp"
#include "test_util.hpp"

using namespace ckn;
namespace fs = std::filesystem;

namespace {

// Two 2x3 images authored byte by byte.
const std::vector<std::vector<unsigned char>> kPixels{{0, 51, 102, 153, 204, 255},
                                                      {255, 0, 1, 2, 3, 128}};

Dataset tiny_mnist(const fs::path& dir) {
    testutil::write_bytes(dir / "img", testutil::idx_images(kPixels, 2, 3));
    testutil::write_bytes(dir / "lbl", testutil::idx_labels({7, 2}));
    return load_mnist_idx((dir / "img").string(), (dir / "lbl").string());
}

Dataset random_dataset(int n, int channels, int side, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Dataset ds;
    ds.name = "random";
    for (int i = 0; i < n; ++i) {
        ds.images.emplace_back(testutil::random_matrix(channels, side * side, rng).array() + 2.0, side, side);
        ds.labels.push_back(i % 10);
    }
    return ds;
}

}  // namespace

TEST_CASE("IDX fixture round trip") {
    const auto dir = testutil::temp_dir("idx");
    const Dataset ds = tiny_mnist(dir);
    REQUIRE(ds.size() == 2);
    CHECK(ds.dims() == Dims{1, 2, 3});
    CHECK(ds.labels == std::vector<int>{7, 2});
    for (std::size_t i = 0; i < 2; ++i)
        for (int k = 0; k < 6; ++k)
            CHECK(ds.images[i].values(0, k) == kPixels[i][static_cast<std::size_t>(k)] / 255.0);
    REQUIRE(!ds.provenance.empty());
    CHECK(ds.provenance[0].op == "load");
    CHECK_NOTHROW(ds.validate());
    fs::remove_all(dir);
}

TEST_CASE("IDX format errors") {
    const auto dir = testutil::temp_dir("idxbad");
    auto img = testutil::idx_images(kPixels, 2, 3);
    auto lbl = testutil::idx_labels({7, 2});
    auto load = [&] {
        testutil::write_bytes(dir / "img", img);
        testutil::write_bytes(dir / "lbl", lbl);
        return load_mnist_idx((dir / "img").string(), (dir / "lbl").string());
    };
    CHECK_NOTHROW(load());

    img.pop_back();
    CHECK_THROWS_WITH_AS(load(), doctest::Contains("byte"), FormatError);
    img = testutil::idx_images(kPixels, 2, 3);
    img[3] = 0x01;  // wrong magic
    CHECK_THROWS_WITH_AS(load(), doctest::Contains("magic"), FormatError);
    img = testutil::idx_images(kPixels, 2, 3);
    lbl = testutil::idx_labels({7});
    CHECK_THROWS_AS(load(), FormatError);
    lbl = testutil::idx_labels({7, 12});
    CHECK_THROWS_AS(load(), FormatError);
    img.resize(10);
    CHECK_THROWS_AS(load(), FormatError);
    CHECK_THROWS_AS(load_mnist_idx((dir / "missing").string(), (dir / "lbl").string()), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("official MNIST files when present") {
    const char* env = std::getenv("CKN_DATA_DIR");
    const fs::path dir = env ? env : "/root/data/mnist";
    if (!fs::exists(dir / "train-images-idx3-ubyte")) return;
    const Dataset tr = load_mnist_dir(dir.string(), true);
    CHECK(tr.size() == 60000);
    CHECK(tr.dims() == Dims{1, 28, 28});
    CHECK(load_mnist_dir(dir.string(), false).size() == 10000);
    const auto [a, b] = split_train_val(tr, 10000, 0);
    CHECK(a.size() == 50000);
    CHECK(b.size() == 10000);
}

TEST_CASE("CIFAR-10 binary fixture") {
    const auto dir = testutil::temp_dir("cifar");
    std::vector<unsigned char> rec(3073);
    rec[0] = 6;
    for (int i = 0; i < 3072; ++i) rec[static_cast<std::size_t>(i + 1)] = static_cast<unsigned char>((i * 7) % 256);
    testutil::write_bytes(dir / "b1", rec);
    const Dataset ds = load_cifar10_bin({(dir / "b1").string()});
    REQUIRE(ds.size() == 1);
    CHECK(ds.labels[0] == 6);
    CHECK(ds.dims() == Dims{3, 32, 32});
    for (int c = 0; c < 3; ++c)
        for (int p = 0; p < 1024; ++p)
            CHECK(ds.images[0].values(c, p) == ((c * 1024 + p) * 7 % 256) / 255.0);

    rec.push_back(0);
    testutil::write_bytes(dir / "b2", rec);
    CHECK_THROWS_AS(load_cifar10_bin({(dir / "b2").string()}), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("standardization") {
    const Dataset ds = random_dataset(20, 3, 4, 1);
    for (bool per_channel : {false, true}) {
        const auto st = standardization_fit(ds, per_channel);
        const Dataset z = standardize(ds, st);
        const int groups = per_channel ? 3 : 1;
        for (int g = 0; g < groups; ++g) {
            double s = 0, s2 = 0, n = 0;
            for (const auto& im : z.images)
                for (int c = 0; c < 3; ++c) {
                    if (per_channel && c != g) continue;
                    s += im.values.row(c).sum();
                    s2 += im.values.row(c).squaredNorm();
                    n += static_cast<double>(im.values.cols());
                }
            CHECK(std::abs(s / n) < 1e-10);
            CHECK(std::abs(std::sqrt(s2 / n - (s / n) * (s / n)) - 1.0) < 1e-10);
        }
        CHECK(z.provenance.back().op == "standardize");
    }
    Dataset flat = ds;
    for (auto& im : flat.images) im.values.setConstant(0.5);
    CHECK_THROWS_AS(standardization_fit(flat, false), DegenerateDataError);
}

TEST_CASE("per-image ZCA whitening") {
    std::mt19937_64 rng(3);
    const Matrix X = testutil::random_matrix(3, 64, rng);
    Dataset ds;
    ds.images.emplace_back(X, 8, 8);
    ds.labels = {0};
    const Dataset w = zca_whiten_per_image(ds, 1e-12);
    const Matrix& Z = w.images[0].values;
    const Matrix Zc = Z.colwise() - Z.rowwise().mean();
    CHECK((Zc * Zc.transpose() / 64.0 - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-8);

    // Whitening a whitened image leaves it alone.
    const Dataset w2 = zca_whiten_per_image(w, 1e-12);
    CHECK((w2.images[0].values - Z).cwiseAbs().maxCoeff() < 1e-10);

    Dataset gray;
    gray.images.emplace_back(X.row(0).replicate(3, 1), 8, 8);
    gray.labels = {0};
    CHECK(zca_whiten_per_image(gray, 1e-5).images[0].values.allFinite());
    CHECK_THROWS(zca_whiten_per_image(gray, 0.0));
}

TEST_CASE("train and validation split") {
    const Dataset ds = random_dataset(50, 1, 2, 4);
    const auto [tr, va] = split_train_val(ds, 0, 1);
    CHECK(va.size() == 0);
    CHECK(tr.size() == 50);
    for (std::uint64_t seed : {0, 1, 2}) {
        const auto [a, b] = split_train_val(ds, 15, seed);
        const auto [a2, b2] = split_train_val(ds, 15, seed);
        CHECK(a.labels == a2.labels);
        CHECK(b.images[3].values == b2.images[3].values);
        CHECK(a.size() + b.size() == 50);
        // Disjoint and exhaustive: pixel sums identify images uniquely here.
        std::multiset<double> all, parts;
        for (const auto& im : ds.images) all.insert(im.values.sum());
        for (const auto& im : a.images) parts.insert(im.values.sum());
        for (const auto& im : b.images) parts.insert(im.values.sum());
        CHECK(all == parts);
    }
    CHECK_THROWS(split_train_val(ds, 50, 0));
    CHECK(head(ds, 7).size() == 7);
}

TEST_CASE("replaying provenance reproduces the processed data") {
    Dataset raw = random_dataset(6, 3, 5, 9);
    raw.provenance.push_back({"load", Json{{"source", "memory"}}});
    const auto st = standardization_fit(raw, true);
    const Dataset processed = pad_images(zca_whiten_per_image(standardize(raw, st)), 2);
    const Dataset again = replay_provenance(raw, processed.provenance);
    REQUIRE(again.size() == processed.size());
    for (std::size_t i = 0; i < again.size(); ++i) CHECK(again.images[i].values == processed.images[i].values);
    CHECK(again.provenance == processed.provenance);

    // Other splits get the training statistics, not their own.
    Dataset other = random_dataset(4, 3, 5, 10);
    const Dataset replayed = replay_provenance(other, processed.provenance);
    const Dataset manual = pad_images(zca_whiten_per_image(standardize(other, st)), 2);
    CHECK(replayed.images[1].values == manual.images[1].values);

    CHECK_THROWS_AS(replay_provenance(raw, {{"sharpen", Json::object()}}), FormatError);
}

TEST_CASE("prepared MNIST-layout data") {
    const auto dir = testutil::temp_dir("prep");
    testutil::write_synthetic_mnist(dir, 60, 20, 1);
    DataConfig cfg;
    cfg.dir = dir.string();
    cfg.val_size = 10;
    cfg.train_size = 30;
    cfg.test_size = 12;
    const PreparedData d = prepare_data(cfg);
    CHECK(d.train.size() == 30);
    CHECK(d.val.size() == 10);
    CHECK(d.test.size() == 12);
    CHECK(d.test.provenance == d.train.provenance);
    cfg.dataset = "svhn";
    CHECK_THROWS_AS(prepare_data(cfg), ConfigError);
    fs::remove_all(dir);
}
