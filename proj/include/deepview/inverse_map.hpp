#pragma once

#include "deepview/classifier.hpp"
#include "deepview/types.hpp"

#include "json.hpp"

#include <span>
#include <utility>
#include <vector>

namespace deepview {

/// Inverse projection y -> x as a normalised kernel-weighted combination of
/// anchor columns. Anchor i sits at anchors2d.row(i) in the plane, carries the
/// input-space point theta.col(i) and the kernel width sigma_hat[i].
struct InverseMapModel {
    Matrix anchors2d;        // n x 2
    Eigen::MatrixXd theta;   // D x n
    Vector sigma_hat;        // n
    double a = 1.0;
    double b = 1.0;

    Eigen::Index size() const { return anchors2d.rows(); }
    Eigen::Index dim() const { return theta.rows(); }
    void validate() const;
};

/// u_i = (1 + a ||y - anchor_i||^(2b))^-1 / sigma_hat_i, normalised to sum 1.
/// Falls back to log-space evaluation when every raw weight underflows.
Vector anchor_weights(const InverseMapModel& model, const Point2& y);

/// As anchor_weights restricted to `anchors`; the result is indexed like
/// `anchors`.
Vector anchor_weights(const InverseMapModel& model, const Point2& y,
                      std::span<const Eigen::Index> anchors);

/// theta * anchor_weights(y).
Vector evaluate(const InverseMapModel& model, const Point2& y);

/// Barycentre over the listed anchors only.
Vector evaluate_subset(const InverseMapModel& model, const Point2& y,
                       std::span<const Eigen::Index> anchors);

/// Per-sample SPD matrices A_i approximating the input metric near s_i.
struct LocalMetrics {
    enum class Kind { identity, diagonal, full };

    Kind kind = Kind::identity;
    std::vector<Vector> diagonal;
    std::vector<Eigen::MatrixXd> full;

    static LocalMetrics identity() { return {}; }
    static LocalMetrics from_diagonals(std::vector<Vector> diagonals);
    static LocalMetrics from_matrices(std::vector<Eigen::MatrixXd> matrices);

    /// A_i v.
    Vector apply(Eigen::Index i, const Eigen::Ref<const Vector>& v) const;
    /// A_i applied to every column of m (column i uses A_i).
    Eigen::MatrixXd apply_columns(const Eigen::MatrixXd& m) const;
};

enum class MetricMode { identity, fisher_diag };

/// identity: A_i = I. fisher_diag: diagonal A_i whose d-th entry is the
/// squared central-difference slope (h = 1e-3) of sqrt(JS) of the classifier
/// along coordinate d, clamped to [1e-6, 1e6]. External classifiers are only
/// probed this way when D <= 64.
LocalMetrics local_metrics(const Matrix& points, const Classifier& f, MetricMode mode);

/// Normalised weight vectors w(r_i) of every training coordinate as columns.
Eigen::MatrixXd weight_matrix(const InverseMapModel& model, const Matrix& coords);

/// 1/2 sum_i (Theta w_i - s_i)^T A_i (Theta w_i - s_i).
double inverse_loss(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& weights,
                    const Eigen::MatrixXd& targets, const LocalMetrics& metrics);

/// J(Theta) = sum_i A_i (Theta w_i - s_i) w_i^T, the gradient of inverse_loss.
Eigen::MatrixXd inverse_gradient(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& weights,
                                 const Eigen::MatrixXd& targets, const LocalMetrics& metrics);

/// Exact minimiser over eta of inverse_loss(Theta - eta * direction):
///   sum_i (Theta w_i - s_i)^T A_i D w_i / sum_i w_i^T D^T A_i D w_i.
/// Returns 0 when the denominator is <= 1e-18.
double optimal_learning_rate(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& direction,
                             const Eigen::MatrixXd& weights, const Eigen::MatrixXd& targets,
                             const LocalMetrics& metrics);

struct InverseTrainOptions {
    int max_iters = 200;
    double momentum = 0.9;
    int warmup_iters = 10;
    /// Stop once ||J||_F < tol_factor * initial loss.
    double tol_factor = 1e-8;
};

struct TrainingReport {
    int iterations = 0;
    /// inverse_loss under the requested metric, starting with the initial value.
    std::vector<double> loss_trace;
    int warmup_iterations = 0;
    double momentum = 0.0;
};

/// Fits Theta from pairs (s_i, r_i): anchors at r_i, Theta starting at the
/// samples, gradient steps with momentum and exact line search, Euclidean
/// metric for the first warmup iterations. Returns the iterate with the
/// lowest loss under `metrics`.
std::pair<InverseMapModel, TrainingReport> train_inverse(
    const Matrix& samples, const Matrix& coords, double a, double b, const Vector& sigma_hat,
    const InverseTrainOptions& options = {}, const LocalMetrics& metrics = LocalMetrics::identity());

nlohmann::json to_json(const InverseMapModel& model);
InverseMapModel inverse_model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainingReport& report);

}  // namespace deepview
