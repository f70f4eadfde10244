#pragma once

#include "deepview/classifier.hpp"
#include "deepview/datasets.hpp"
#include "deepview/rng.hpp"
#include "deepview/types.hpp"

#include <filesystem>
#include <string>

namespace test {

using deepview::Matrix;
using deepview::Vector;

/// Labelled blobs (3 classes, D = 10, n = 150) and a softmax trained on them.
struct BlobsFixture {
    deepview::Dataset data;
    deepview::NeuralHandle model;
};

inline const BlobsFixture& blobs_fixture() {
    static const BlobsFixture fixture = [] {
        deepview::BlobsOptions options;
        options.seed = 1;
        BlobsFixture f;
        f.data = deepview::make_blobs(options);
        f.model = deepview::train_softmax(f.data, {});
        return f;
    }();
    return fixture;
}

/// Point drawn uniformly from the probability simplex.
inline Vector random_simplex(deepview::Rng& rng, int classes) {
    Vector p(classes);
    for (int c = 0; c < classes; ++c) p[c] = -std::log(1.0 - rng.uniform());
    return p / p.sum();
}

inline Matrix random_matrix(deepview::Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    }
    return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("deepview_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace test
