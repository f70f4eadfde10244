#pragma once

#include "deepview/classifier.hpp"
#include "deepview/inverse_map.hpp"
#include "deepview/types.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace deepview {

struct QualityReport {
    double q_knn = 0.0;
    std::optional<double> q_knn_eucl;
    double q_d = 0.0;
    double q_nd = 0.0;
    int k = 5;
    double split_fraction = 0.7;
    std::uint64_t seed = 0;
    /// True when q_knn compares against ground-truth labels instead of the
    /// classifier's predictions.
    bool ground_truth_labels = false;
};

/// Leave-one-out kNN agreement in the plane. Points are first put in a
/// canonical order (x, y, label, index); distance ties go to the earlier point
/// in that order and vote ties to the smallest label, so the score does not
/// depend on the input order. Throws ParameterError unless n > k.
double q_knn(const Matrix& coords, const std::vector<int>& labels, int k = 5);

/// argmax f(s) for every row.
std::vector<int> predicted_labels(const Classifier& f, const Matrix& points);

using InverseFn = std::function<Vector(const Point2&)>;

/// Fraction of i with argmax f(inverse(r_i)) == argmax f(s_i).
double q_d(const Matrix& samples, const Matrix& coords, const InverseFn& inverse, const Classifier& f);
double q_d(const Matrix& samples, const Matrix& coords, const InverseMapModel& model, const Classifier& f);

/// Shuffles the pairs with `seed`, trains the inverse map on the first
/// round(split_fraction * n) of them and returns the accordance on the rest.
/// Throws ParameterError if either part would be empty.
double q_nd(const Matrix& samples, const Matrix& coords, double a, double b, const Vector& sigma_hat,
            const Classifier& f, double split_fraction, std::uint64_t seed,
            const InverseTrainOptions& options = {});

/// Largest candidate whose score is within 0.02 of the best score.
double select_lambda(const std::vector<double>& candidates, const std::function<double(double)>& q_knn_of);

/// Smallest candidate whose score is within 0.02 of the best score.
double select_a(const std::vector<double>& candidates, const std::function<double(double)>& q_d_of);

/// Ratio of the median pairwise sqrt(JS) between predictions to the median
/// pairwise Euclidean distance, over at most the first 300 points. Returns 1
/// when either median is zero.
double lambda_scale(const Matrix& points, const Classifier& f);

/// {10, 5, 2, 1, 0.5, 0.2, 0.1, 0.05} * lambda_scale, descending.
std::vector<double> lambda_grid(const Matrix& points, const Classifier& f);

/// {0.1, 0.3, 1, 3, 10}.
std::vector<double> a_grid();

nlohmann::json to_json(const QualityReport& report);

}  // namespace deepview
