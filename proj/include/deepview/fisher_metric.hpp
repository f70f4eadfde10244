#pragma once

#include "deepview/classifier.hpp"
#include "deepview/types.hpp"

#include "json.hpp"

#include <functional>
#include <string>

namespace deepview {

/// Probability floor applied before any logarithm.
inline constexpr double probability_floor = 1e-12;

/// Clamps every entry to [probability_floor, 1] and renormalises.
Vector clamp_probabilities(const Eigen::Ref<const Vector>& p);

/// Sum_c p_c ln(p_c / q_c) in nats, with 0 ln 0 := 0, after clamping both
/// arguments.
double kl_divergence(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q);

/// Jensen-Shannon divergence in nats; lies in [0, ln 2].
double js_divergence(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q);

/// sqrt(js_divergence), a metric on the probability simplex.
double js_sqrt_distance(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q);

/// sqrt of the symmetrised KL divergence: sqrt(KL(p|q)/2 + KL(q|p)/2).
double sym_kl_distance(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q);

enum class Divergence { sqrt_js, sym_kl };

struct FisherMetricConfig {
    double lambda = 0.0;
    int n_segments = 8;
    Divergence divergence = Divergence::sqrt_js;

    void validate() const;
};

/// Both parts of a discretised straight-line arc length.
struct PathLength {
    /// Sum over consecutive path samples of the divergence distance of f.
    double divergence = 0.0;
    /// Euclidean length ||x - y||, the regulariser before scaling by lambda.
    double euclidean = 0.0;

    double total(double lambda) const { return divergence + lambda * euclidean; }
};

/// Arc length of x -> y along the straight segment sampled at n+1 points,
/// issuing all classifier evaluations in one predict_batch call.
PathLength fisher_path_length(const Vector& x, const Vector& y, const Classifier& f,
                              const FisherMetricConfig& config);

/// d_S(x, y) = divergence part + lambda * ||x - y||.
double fisher_distance(const Vector& x, const Vector& y, const Classifier& f,
                       const FisherMetricConfig& config);

/// Sums the divergence distances between consecutive rows of `probs`.
double path_divergence(const Matrix& probs, Eigen::Index first, int n_segments, Divergence divergence);

struct DistanceMatrix {
    Matrix values;
    FisherMetricConfig config;
    std::string classifier_id;

    Eigen::Index size() const { return values.rows(); }
};

using ProgressCallback = std::function<void(double fraction)>;

/// All pairwise fisher_distance values. Unordered pairs are computed once and
/// their path samples are packed into predict_batch calls of at most the
/// classifier's batch_limit rows; work is spread over `workers` threads and
/// the result does not depend on the thread count.
DistanceMatrix distance_matrix(const Matrix& points, const Classifier& f,
                               const FisherMetricConfig& config, int workers = 1,
                               const ProgressCallback& progress = {});

/// Plain Euclidean distance matrix (classifier_id "euclidean").
DistanceMatrix euclidean_distance_matrix(const Matrix& points);

nlohmann::json to_json(const FisherMetricConfig& config);
FisherMetricConfig metric_config_from_json(const nlohmann::json& j);

/// {"n", "config", "classifier_id", "values_lower_triangle"} with the strict
/// lower triangle listed row by row.
nlohmann::json to_json(const DistanceMatrix& dm);
DistanceMatrix distance_matrix_from_json(const nlohmann::json& j);

}  // namespace deepview
