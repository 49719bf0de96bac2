#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ckn/geometry.hpp"
#include "ckn/spec_io.hpp"

namespace ckn {

// One preprocessing step with everything needed to repeat it.
struct ProvenanceStep {
    std::string op;
    Json params;

    bool operator==(const ProvenanceStep&) const = default;
};

struct Dataset {
    std::string name;
    std::vector<FeatureMap> images;
    std::vector<int> labels;
    int num_classes = 10;
    std::vector<ProvenanceStep> provenance;

    std::size_t size() const { return images.size(); }
    Dims dims() const;
    // Throws FormatError on count mismatch, bad labels, mixed shapes or non-finite pixels.
    void validate() const;
};

// IDX pair (magics 0x803 and 0x801) into 1 x h x w maps scaled to [0, 1].
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);
// Standard file names (train-images-idx3-ubyte, ...) inside `dir`.
Dataset load_mnist_dir(const std::string& dir, bool train);

// CIFAR-10 binary batches: 1 label byte + 3072 channel-major pixels per record.
Dataset load_cifar10_bin(const std::vector<std::string>& paths);

struct StandardizationStats {
    bool per_channel = false;
    std::vector<double> mean;    // one entry, or one per channel
    std::vector<double> stddev;
};

// Mean and population standard deviation of all pixels (or per channel).
StandardizationStats standardization_fit(const Dataset& ds, bool per_channel);
Dataset standardize(Dataset ds, const StandardizationStats& stats);

// Per image: channel covariance C over pixels, then x <- C^{-1/2} x with
// eigenvalues floored at eps.
Dataset zca_whiten_per_image(Dataset ds, double eps = 1e-5);

Dataset pad_images(Dataset ds, int pad);

// Deterministic shuffled split; the second set has val_size images.
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, std::size_t val_size,
                                            std::uint64_t seed);

// The first n images.
Dataset head(const Dataset& ds, std::size_t n);

// Reapplies recorded transforms (everything after loading) to freshly loaded data.
Dataset replay_provenance(Dataset raw, const std::vector<ProvenanceStep>& steps);

struct DataConfig {
    std::string dataset = "mnist";  // mnist or cifar10
    std::string dir;
    std::size_t train_size = 0;     // 0 keeps every training image left after the split
    std::size_t val_size = 10000;   // held out from the official training set
    std::size_t test_size = 0;      // 0 keeps the whole test set
    std::uint64_t split_seed = 0;
};

struct PreparedData {
    Dataset train;
    Dataset val;
    Dataset test;
};

// Loads the dataset, splits off the validation set, and standardizes every split
// with training statistics (CIFAR-10: per channel, then per-image ZCA).
PreparedData prepare_data(const DataConfig& cfg, bool load_test = true);

// The test split with the preprocessing recorded in `provenance` replayed.
Dataset load_test_split(const DataConfig& cfg, const std::vector<ProvenanceStep>& provenance);

}  // namespace ckn
