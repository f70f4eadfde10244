#pragma once

#include "deepview/types.hpp"

#include <cstdint>
#include <string>

namespace deepview {

/// Gaussian classes whose means differ only in the first `signal_dims`
/// coordinates, where they sit on a circle with neighbouring means
/// `separation` apart. The remaining coordinates are class-independent noise.
struct BlobsOptions {
    int classes = 3;
    int per_class = 50;
    int dim = 10;
    int signal_dims = 2;
    double separation = 6.0;
    double signal_std = 1.0;
    double noise_std = 3.0;
    std::uint64_t seed = 0;
};

/// Rows are interleaved by class (0, 1, ..., C-1, 0, 1, ...).
Dataset make_blobs(const BlobsOptions& options);

/// Four Gaussian clusters at (+-1, +-1) labelled by the sign of x * y.
Dataset make_xor(int per_cluster, double spread, std::uint64_t seed);

/// Header row, float feature columns and an optional final integer column
/// named `label`. A sidecar `<stem>.json` next to the file may declare
/// {"image_shape": [h, w, c]}. Throws ParameterError on malformed input.
Dataset read_csv(const std::string& path);

/// Writes the format read_csv expects (without a sidecar).
void write_csv(const Dataset& data, const std::string& path);

}  // namespace deepview
