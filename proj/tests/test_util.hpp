#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "ckn/linalg.hpp"

namespace testutil {

using ckn::Matrix;
using ckn::Vector;

inline Matrix random_matrix(int r, int c, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = nd(rng);
    return m;
}

inline Matrix random_symmetric(int n, std::mt19937_64& rng) {
    Matrix m = random_matrix(n, n, rng);
    return 0.5 * (m + m.transpose());
}

inline Matrix unit_rows(Matrix m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
    return m;
}

// Q diag(lambda) Q^T with log-uniform eigenvalues in [1, cond] times `scale`.
inline Matrix random_spd(int n, double cond, std::mt19937_64& rng, double scale = 1.0) {
    Eigen::HouseholderQR<Matrix> qr(random_matrix(n, n, rng));
    const Matrix Q = qr.householderQ();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vector ev(n);
    for (int i = 0; i < n; ++i) ev(i) = scale * std::pow(cond, n == 1 ? 0.0 : u(rng));
    ev(0) = scale;
    if (n > 1) ev(n - 1) = scale * cond;
    Matrix M = Q * ev.asDiagonal() * Q.transpose();
    return 0.5 * (M + M.transpose());
}

// Central differences of a scalar function of a matrix.
inline Matrix fd_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x,
                          double h) {
    Matrix g(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            Matrix xp = x, xm = x;
            xp(i, j) += h;
            xm(i, j) -= h;
            g(i, j) = (f(xp) - f(xm)) / (2 * h);
        }
    return g;
}

inline double rel_err(const Matrix& a, const Matrix& b) {
    const double denom = std::max(b.norm(), 1e-300);
    return (a - b).norm() / denom;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
    static std::uint64_t counter = 0;
    const auto p = std::filesystem::temp_directory_path() /
                   ("ckn_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    b.push_back(static_cast<unsigned char>(v >> 24));
    b.push_back(static_cast<unsigned char>(v >> 16));
    b.push_back(static_cast<unsigned char>(v >> 8));
    b.push_back(static_cast<unsigned char>(v));
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// IDX image file (magic 0x803) with n images of rows x cols bytes.
inline std::vector<unsigned char> idx_images(const std::vector<std::vector<unsigned char>>& imgs,
                                             int rows, int cols) {
    std::vector<unsigned char> b;
    put_be32(b, 0x803);
    put_be32(b, static_cast<std::uint32_t>(imgs.size()));
    put_be32(b, static_cast<std::uint32_t>(rows));
    put_be32(b, static_cast<std::uint32_t>(cols));
    for (const auto& im : imgs) b.insert(b.end(), im.begin(), im.end());
    return b;
}

inline std::vector<unsigned char> idx_labels(const std::vector<unsigned char>& labels) {
    std::vector<unsigned char> b;
    put_be32(b, 0x801);
    put_be32(b, static_cast<std::uint32_t>(labels.size()));
    b.insert(b.end(), labels.begin(), labels.end());
    return b;
}

// Writes an MNIST-layout directory of n_train / n_test 28x28 digits. Each class
// is a bright horizontal bar at a class-specific row plus noise, so small
// networks can separate them.
inline void write_synthetic_mnist(const std::filesystem::path& dir, int n_train, int n_test,
                                  std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> noise(0, 60);
    auto make = [&](int n) {
        std::vector<std::vector<unsigned char>> imgs;
        std::vector<unsigned char> labels;
        for (int i = 0; i < n; ++i) {
            const int label = i % 10;
            std::vector<unsigned char> im(28 * 28);
            for (auto& px : im) px = static_cast<unsigned char>(noise(rng));
            const int row = 3 + 2 * label;
            for (int c = 4; c < 24; ++c) {
                im[static_cast<std::size_t>(row * 28 + c)] = 250;
                im[static_cast<std::size_t>((row + 1) * 28 + c)] = 200;
            }
            imgs.push_back(std::move(im));
            labels.push_back(static_cast<unsigned char>(label));
        }
        return std::make_pair(imgs, labels);
    };
    std::filesystem::create_directories(dir);
    auto [tr, trl] = make(n_train);
    auto [te, tel] = make(n_test);
    write_bytes(dir / "train-images-idx3-ubyte", idx_images(tr, 28, 28));
    write_bytes(dir / "train-labels-idx1-ubyte", idx_labels(trl));
    write_bytes(dir / "t10k-images-idx3-ubyte", idx_images(te, 28, 28));
    write_bytes(dir / "t10k-labels-idx1-ubyte", idx_labels(tel));
}

}  // namespace testutil
