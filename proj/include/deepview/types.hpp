#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace deepview {

/// Row-major so that each sample is a contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Point2 = Eigen::Vector2d;

/// Samples s_i as rows, optional integer labels and column names.
struct Dataset {
    Matrix points;
    std::optional<std::vector<int>> labels;
    std::vector<std::string> feature_names;
    /// (height, width, channels) when rows are flattened images.
    std::optional<std::vector<int>> image_shape;

    Eigen::Index size() const { return points.rows(); }
    Eigen::Index dim() const { return points.cols(); }
};

/// Checks n >= 1, D >= 1, finite entries and, if `class_count` > 0, that
/// labels lie in [0, class_count). Throws ValidationError subclasses.
void validate(const Dataset& data, int class_count = 0);

/// The given rows of `data` (in order) as a new dataset.
Dataset subset(const Dataset& data, const std::vector<Eigen::Index>& rows);

}  // namespace deepview
