#include "deepview/inverse_map.hpp"

#include "deepview/errors.hpp"
#include "deepview/fisher_metric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace deepview {

using nlohmann::json;

void InverseMapModel::validate() const {
    if (size() < 1) throw ParameterError("inverse map needs at least one anchor");
    if (anchors2d.cols() != 2) throw DimensionError("anchors must be two-dimensional");
    if (theta.cols() != size() || sigma_hat.size() != size()) {
        throw DimensionError("theta / sigma_hat do not match the anchor count");
    }
    if (!theta.allFinite() || !anchors2d.allFinite()) throw ParameterError("non-finite inverse map parameter");
    if (!(sigma_hat.array() > 0.0).all()) throw ParameterError("sigma_hat must be positive");
    if (!(a > 0.0) || !(b > 0.0)) throw ParameterError("a and b must be positive");
}

namespace {

template <typename IndexAt>
Vector normalized_weights(const InverseMapModel& model, const Point2& y, Eigen::Index count,
                          IndexAt index_at) {
    if (!y.allFinite()) throw ParameterError("query point must be finite");
    Vector u(count);
    for (Eigen::Index k = 0; k < count; ++k) {
        const Eigen::Index i = index_at(k);
        const double s = (y - model.anchors2d.row(i).transpose()).squaredNorm();
        u[k] = 1.0 / (1.0 + model.a * std::pow(s, model.b)) / model.sigma_hat[i];
    }
    if (u.maxCoeff() < 1e-300) {
        for (Eigen::Index k = 0; k < count; ++k) {
            const Eigen::Index i = index_at(k);
            const double s = (y - model.anchors2d.row(i).transpose()).squaredNorm();
            u[k] = -std::log1p(model.a * std::pow(s, model.b)) - std::log(model.sigma_hat[i]);
        }
        u = (u.array() - u.maxCoeff()).exp();
    }
    return u / u.sum();
}

}  // namespace

Vector anchor_weights(const InverseMapModel& model, const Point2& y) {
    return normalized_weights(model, y, model.size(), [](Eigen::Index k) { return k; });
}

Vector anchor_weights(const InverseMapModel& model, const Point2& y,
                      std::span<const Eigen::Index> anchors) {
    if (anchors.empty()) throw ParameterError("anchor subset is empty");
    return normalized_weights(model, y, static_cast<Eigen::Index>(anchors.size()),
                              [&](Eigen::Index k) { return anchors[static_cast<std::size_t>(k)]; });
}

Vector evaluate(const InverseMapModel& model, const Point2& y) {
    return model.theta * anchor_weights(model, y);
}

Vector evaluate_subset(const InverseMapModel& model, const Point2& y,
                       std::span<const Eigen::Index> anchors) {
    const Vector u = anchor_weights(model, y, anchors);
    Vector x = Vector::Zero(model.dim());
    for (std::size_t k = 0; k < anchors.size(); ++k) {
        x += u[static_cast<Eigen::Index>(k)] * model.theta.col(anchors[k]);
    }
    return x;
}

LocalMetrics LocalMetrics::from_diagonals(std::vector<Vector> diagonals) {
    LocalMetrics m;
    m.kind = Kind::diagonal;
    m.diagonal = std::move(diagonals);
    return m;
}

LocalMetrics LocalMetrics::from_matrices(std::vector<Eigen::MatrixXd> matrices) {
    LocalMetrics m;
    m.kind = Kind::full;
    m.full = std::move(matrices);
    return m;
}

Vector LocalMetrics::apply(Eigen::Index i, const Eigen::Ref<const Vector>& v) const {
    switch (kind) {
        case Kind::identity: return v;
        case Kind::diagonal: return diagonal[static_cast<std::size_t>(i)].cwiseProduct(v);
        case Kind::full: return full[static_cast<std::size_t>(i)] * v;
    }
    return v;
}

Eigen::MatrixXd LocalMetrics::apply_columns(const Eigen::MatrixXd& m) const {
    if (kind == Kind::identity) return m;
    Eigen::MatrixXd out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.cols(); ++i) out.col(i) = apply(i, m.col(i));
    return out;
}

LocalMetrics local_metrics(const Matrix& points, const Classifier& f, MetricMode mode) {
    if (mode == MetricMode::identity) return LocalMetrics::identity();
    const Eigen::Index dim = points.cols();
    if (f.kind() == ClassifierKind::external && dim > 64) {
        throw UnsupportedError("fisher_diag metrics for external classifiers need D <= 64");
    }
    constexpr double h = 1e-3;
    std::vector<Vector> diagonals;
    diagonals.reserve(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        Matrix probes(2 * dim, dim);
        for (Eigen::Index d = 0; d < dim; ++d) {
            probes.row(2 * d) = points.row(i);
            probes.row(2 * d + 1) = points.row(i);
            probes(2 * d, d) -= h;
            probes(2 * d + 1, d) += h;
        }
        const Matrix probs = f.predict_batch(probes);
        Vector diag(dim);
        for (Eigen::Index d = 0; d < dim; ++d) {
            const double slope =
                js_sqrt_distance(probs.row(2 * d).transpose(), probs.row(2 * d + 1).transpose()) / (2.0 * h);
            diag[d] = std::clamp(slope * slope, 1e-6, 1e6);
        }
        diagonals.push_back(std::move(diag));
    }
    return LocalMetrics::from_diagonals(std::move(diagonals));
}

Eigen::MatrixXd weight_matrix(const InverseMapModel& model, const Matrix& coords) {
    Eigen::MatrixXd w(model.size(), coords.rows());
    for (Eigen::Index i = 0; i < coords.rows(); ++i) {
        w.col(i) = anchor_weights(model, coords.row(i).transpose());
    }
    return w;
}

double inverse_loss(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& weights,
                    const Eigen::MatrixXd& targets, const LocalMetrics& metrics) {
    const Eigen::MatrixXd residual = theta * weights - targets;
    return 0.5 * residual.cwiseProduct(metrics.apply_columns(residual)).sum();
}

Eigen::MatrixXd inverse_gradient(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& weights,
                                 const Eigen::MatrixXd& targets, const LocalMetrics& metrics) {
    const Eigen::MatrixXd residual = theta * weights - targets;
    return metrics.apply_columns(residual) * weights.transpose();
}

double optimal_learning_rate(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& direction,
                             const Eigen::MatrixXd& weights, const Eigen::MatrixXd& targets,
                             const LocalMetrics& metrics) {
    const Eigen::MatrixXd residual = theta * weights - targets;
    const Eigen::MatrixXd moved = direction * weights;
    const Eigen::MatrixXd metric_moved = metrics.apply_columns(moved);
    const double denominator = moved.cwiseProduct(metric_moved).sum();
    if (!(denominator > 1e-18)) return 0.0;
    return residual.cwiseProduct(metric_moved).sum() / denominator;
}

std::pair<InverseMapModel, TrainingReport> train_inverse(const Matrix& samples, const Matrix& coords,
                                                         double a, double b, const Vector& sigma_hat,
                                                         const InverseTrainOptions& options,
                                                         const LocalMetrics& metrics) {
    const Eigen::Index n = samples.rows();
    if (n < 1) throw ParameterError("inverse map training needs at least one pair");
    if (coords.rows() != n || coords.cols() != 2) throw DimensionError("coords must be n x 2");
    if (!samples.allFinite() || !coords.allFinite()) throw ParameterError("training pairs must be finite");
    if (!(options.momentum >= 0.0 && options.momentum < 1.0)) {
        throw ParameterError("momentum must lie in [0, 1)");
    }
    if (options.max_iters < 0 || options.warmup_iters < 0) throw ParameterError("iteration counts must be >= 0");

    InverseMapModel model{coords, samples.transpose(), sigma_hat, a, b};
    model.validate();
    const Eigen::MatrixXd targets = samples.transpose();
    const Eigen::MatrixXd weights = weight_matrix(model, coords);
    const LocalMetrics euclidean = LocalMetrics::identity();

    TrainingReport report;
    report.momentum = options.momentum;
    const double initial_loss = inverse_loss(model.theta, weights, targets, metrics);
    report.loss_trace.push_back(initial_loss);
    const double tolerance = options.tol_factor * initial_loss;

    Eigen::MatrixXd theta = model.theta;
    Eigen::MatrixXd best = theta;
    double best_loss = initial_loss;
    Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(theta.rows(), theta.cols());

    for (int it = 0; it < options.max_iters; ++it) {
        const bool warmup = it < options.warmup_iters;
        const LocalMetrics& active = warmup ? euclidean : metrics;
        const Eigen::MatrixXd gradient = inverse_gradient(theta, weights, targets, active);
        if (gradient.norm() < tolerance) break;
        const Eigen::MatrixXd direction = gradient + options.momentum * velocity;
        const double eta = optimal_learning_rate(theta, direction, weights, targets, active);
        theta -= eta * direction;
        velocity = direction;
        ++report.iterations;
        if (warmup) ++report.warmup_iterations;

        const double loss = inverse_loss(theta, weights, targets, metrics);
        if (!std::isfinite(loss)) throw DivergenceError("inverse map training diverged");
        report.loss_trace.push_back(loss);
        if (loss < best_loss) {
            best_loss = loss;
            best = theta;
        }
    }
    model.theta = std::move(best);
    return {std::move(model), std::move(report)};
}

json to_json(const InverseMapModel& model) {
    json anchors = json::array();
    for (Eigen::Index i = 0; i < model.size(); ++i) {
        anchors.push_back({model.anchors2d(i, 0), model.anchors2d(i, 1)});
    }
    json theta = json::array();
    for (Eigen::Index i = 0; i < model.size(); ++i) {
        theta.push_back(std::vector<double>(model.theta.col(i).begin(), model.theta.col(i).end()));
    }
    return {{"anchors2d", anchors},
            {"theta", theta},
            {"sigma", std::vector<double>(model.sigma_hat.begin(), model.sigma_hat.end())},
            {"a", model.a},
            {"b", model.b}};
}

InverseMapModel inverse_model_from_json(const json& j) {
    try {
        const auto& anchors = j.at("anchors2d");
        const auto& theta = j.at("theta");
        const auto sigma = j.at("sigma").get<std::vector<double>>();
        const auto n = static_cast<Eigen::Index>(anchors.size());
        if (static_cast<Eigen::Index>(theta.size()) != n || n < 1) {
            throw ParameterError("inverse map JSON has inconsistent sizes");
        }
        const auto dim = static_cast<Eigen::Index>(theta[0].size());
        InverseMapModel model{Matrix(n, 2), Eigen::MatrixXd(dim, n), Vector(n), j.at("a").get<double>(),
                              j.at("b").get<double>()};
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto anchor = anchors[static_cast<std::size_t>(i)].get<std::vector<double>>();
            const auto column = theta[static_cast<std::size_t>(i)].get<std::vector<double>>();
            if (anchor.size() != 2 || static_cast<Eigen::Index>(column.size()) != dim) {
                throw ParameterError("inverse map JSON has inconsistent sizes");
            }
            model.anchors2d(i, 0) = anchor[0];
            model.anchors2d(i, 1) = anchor[1];
            for (Eigen::Index d = 0; d < dim; ++d) model.theta(d, i) = column[static_cast<std::size_t>(d)];
        }
        if (static_cast<Eigen::Index>(sigma.size()) != n) throw ParameterError("sigma length mismatch");
        for (Eigen::Index i = 0; i < n; ++i) model.sigma_hat[i] = sigma[static_cast<std::size_t>(i)];
        model.validate();
        return model;
    } catch (const json::exception& e) {
        throw ParameterError(std::string("malformed inverse map JSON: ") + e.what());
    }
}

json to_json(const TrainingReport& report) {
    return {{"iterations", report.iterations},
            {"loss_trace", report.loss_trace},
            {"warmup_iterations", report.warmup_iterations},
            {"momentum", report.momentum}};
}

}  // namespace deepview
