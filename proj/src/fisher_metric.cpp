#include "deepview/fisher_metric.hpp"

#include "deepview/errors.hpp"
#include "deepview/parallel.hpp"

#include <cmath>
#include <mutex>
#include <numbers>

namespace deepview {

using nlohmann::json;

namespace {

void check_same_length(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q) {
    if (p.size() != q.size()) {
        throw DimensionError("probability vectors differ in length (" + std::to_string(p.size()) +
                             " vs " + std::to_string(q.size()) + ")");
    }
    if (p.size() < 1) throw DimensionError("empty probability vector");
}

// (1+t) ln(1+t) + (1-t) ln(1-t) for |t| <= 1. Near zero the two halves
// cancel to O(t^2), so a power series is used there.
double mixing_term(double t) {
    const double a = std::abs(t);
    if (a <= 0.25) {
        const double t2 = t * t;
        double power = t2;
        double sum = 0.0;
        for (int k = 1; k <= 20; ++k) {
            sum += power / (k * (2.0 * k - 1.0));
            power *= t2;
        }
        return sum;
    }
    const double plus = t == -1.0 ? 0.0 : (1.0 + t) * std::log1p(t);
    const double minus = t == 1.0 ? 0.0 : (1.0 - t) * std::log1p(-t);
    return plus + minus;
}

// Plain left-to-right accumulation so every caller gets the same rounding.
double euclidean(const double* a, const double* b, Eigen::Index dim) {
    double sum = 0.0;
    for (Eigen::Index d = 0; d < dim; ++d) {
        const double diff = a[d] - b[d];
        sum += diff * diff;
    }
    return std::sqrt(sum);
}

}  // namespace

Vector clamp_probabilities(const Eigen::Ref<const Vector>& p) {
    Vector out = p.cwiseMax(probability_floor).cwiseMin(1.0);
    return out / out.sum();
}

double kl_divergence(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q) {
    check_same_length(p, q);
    const Vector pc = clamp_probabilities(p);
    const Vector qc = clamp_probabilities(q);
    double sum = 0.0;
    for (Eigen::Index c = 0; c < pc.size(); ++c) {
        if (pc[c] > 0.0) sum += pc[c] * std::log(pc[c] / qc[c]);
    }
    return std::max(sum, 0.0);
}

double js_divergence(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q) {
    check_same_length(p, q);
    const Vector pc = clamp_probabilities(p);
    const Vector qc = clamp_probabilities(q);
    // With m = (p+q)/2 and t = (p-q)/(p+q), each class contributes
    // m * mixing_term(t) / 2, which is nonnegative term by term.
    double sum = 0.0;
    for (Eigen::Index c = 0; c < pc.size(); ++c) {
        const double total = pc[c] + qc[c];
        const double t = (pc[c] - qc[c]) / total;
        sum += 0.5 * total * mixing_term(t);
    }
    return 0.5 * sum;
}

double js_sqrt_distance(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q) {
    return std::sqrt(js_divergence(p, q));
}

double sym_kl_distance(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q) {
    return std::sqrt(0.5 * kl_divergence(p, q) + 0.5 * kl_divergence(q, p));
}

void FisherMetricConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ParameterError("lambda must be >= 0");
    if (n_segments < 1) throw ParameterError("n_segments must be >= 1");
}

double path_divergence(const Matrix& probs, Eigen::Index first, int n_segments, Divergence divergence) {
    double sum = 0.0;
    for (int i = 1; i <= n_segments; ++i) {
        const Vector prev = probs.row(first + i - 1).transpose();
        const Vector next = probs.row(first + i).transpose();
        sum += divergence == Divergence::sqrt_js ? js_sqrt_distance(prev, next)
                                                 : sym_kl_distance(prev, next);
    }
    return sum;
}

namespace {

// Writes the n+1 samples x + (i/n)(y - x) into rows [first, first + n] of `out`.
void fill_path(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y, int n,
               Matrix& out, Eigen::Index first) {
    const Vector delta = y - x;
    for (int i = 0; i <= n; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n);
        out.row(first + i) = (x + t * delta).transpose();
    }
}

}  // namespace

PathLength fisher_path_length(const Vector& x, const Vector& y, const Classifier& f,
                              const FisherMetricConfig& config) {
    config.validate();
    if (x.size() != y.size()) throw DimensionError("path endpoints differ in dimension");
    const int n = config.n_segments;
    Matrix samples(n + 1, x.size());
    fill_path(x, y, n, samples, 0);
    const Matrix probs = f.predict_batch(samples);
    return {path_divergence(probs, 0, n, config.divergence), euclidean(x.data(), y.data(), x.size())};
}

double fisher_distance(const Vector& x, const Vector& y, const Classifier& f,
                       const FisherMetricConfig& config) {
    return fisher_path_length(x, y, f, config).total(config.lambda);
}

DistanceMatrix distance_matrix(const Matrix& points, const Classifier& f,
                               const FisherMetricConfig& config, int workers,
                               const ProgressCallback& progress) {
    config.validate();
    const Eigen::Index n = points.rows();
    if (n < 2) throw ParameterError("distance matrix needs at least two points");
    if (points.cols() != f.input_dim()) throw DimensionError("data and classifier dimensions differ");

    const int segments = config.n_segments;
    const Eigen::Index rows_per_pair = segments + 1;
    const std::size_t pair_count = static_cast<std::size_t>(n * (n - 1) / 2);
    const std::size_t pairs_per_batch =
        std::max<std::size_t>(1, f.batch_limit() / static_cast<std::size_t>(rows_per_pair));

    // Pair k in row-major order over the strict upper triangle.
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
    pairs.reserve(pair_count);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    }

    std::vector<double> result(pair_count, 0.0);
    std::size_t done = 0;
    std::mutex progress_mutex;

    parallel_blocks(pair_count, workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t start = begin; start < end; start += pairs_per_batch) {
            const std::size_t stop = std::min(end, start + pairs_per_batch);
            Matrix samples(static_cast<Eigen::Index>(stop - start) * rows_per_pair, points.cols());
            for (std::size_t k = start; k < stop; ++k) {
                const auto [i, j] = pairs[k];
                fill_path(points.row(i).transpose(), points.row(j).transpose(), segments, samples,
                          static_cast<Eigen::Index>(k - start) * rows_per_pair);
            }
            const Matrix probs = f.predict_batch(samples);
            for (std::size_t k = start; k < stop; ++k) {
                const auto [i, j] = pairs[k];
                const PathLength length{
                    path_divergence(probs, static_cast<Eigen::Index>(k - start) * rows_per_pair,
                                    segments, config.divergence),
                    euclidean(points.row(i).data(), points.row(j).data(), points.cols())};
                result[k] = length.total(config.lambda);
            }
            if (progress) {
                std::lock_guard lock(progress_mutex);
                done += stop - start;
                progress(static_cast<double>(done) / static_cast<double>(pair_count));
            }
        }
    });

    DistanceMatrix dm{Matrix::Zero(n, n), config, f.id()};
    for (std::size_t k = 0; k < pair_count; ++k) {
        const auto [i, j] = pairs[k];
        dm.values(i, j) = result[k];
        dm.values(j, i) = result[k];
    }
    return dm;
}

DistanceMatrix euclidean_distance_matrix(const Matrix& points) {
    const Eigen::Index n = points.rows();
    if (n < 2) throw ParameterError("distance matrix needs at least two points");
    DistanceMatrix dm{Matrix::Zero(n, n), FisherMetricConfig{1.0, 1, Divergence::sqrt_js}, "euclidean"};
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double d = euclidean(points.row(i).data(), points.row(j).data(), points.cols());
            dm.values(i, j) = d;
            dm.values(j, i) = d;
        }
    }
    return dm;
}

json to_json(const FisherMetricConfig& config) {
    return {{"lambda", config.lambda},
            {"n_segments", config.n_segments},
            {"divergence", config.divergence == Divergence::sqrt_js ? "sqrt_js" : "sym_kl"},
            {"base_metric", "euclidean"}};
}

FisherMetricConfig metric_config_from_json(const json& j) {
    FisherMetricConfig config;
    config.lambda = j.value("lambda", config.lambda);
    config.n_segments = j.value("n_segments", config.n_segments);
    const std::string divergence = j.value("divergence", std::string("sqrt_js"));
    if (divergence == "sqrt_js") config.divergence = Divergence::sqrt_js;
    else if (divergence == "sym_kl") config.divergence = Divergence::sym_kl;
    else throw ParameterError("unknown divergence '" + divergence + "'");
    config.validate();
    return config;
}

json to_json(const DistanceMatrix& dm) {
    std::vector<double> lower;
    const Eigen::Index n = dm.size();
    lower.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 1; i < n; ++i) {
        for (Eigen::Index j = 0; j < i; ++j) lower.push_back(dm.values(i, j));
    }
    return {{"n", n},
            {"config", to_json(dm.config)},
            {"classifier_id", dm.classifier_id},
            {"values_lower_triangle", lower}};
}

DistanceMatrix distance_matrix_from_json(const json& j) {
    try {
        const auto n = j.at("n").get<Eigen::Index>();
        const auto lower = j.at("values_lower_triangle").get<std::vector<double>>();
        if (n < 1 || static_cast<Eigen::Index>(lower.size()) != n * (n - 1) / 2) {
            throw ParameterError("distance cache has inconsistent size");
        }
        DistanceMatrix dm{Matrix::Zero(n, n), metric_config_from_json(j.at("config")),
                          j.value("classifier_id", std::string())};
        std::size_t k = 0;
        for (Eigen::Index i = 1; i < n; ++i) {
            for (Eigen::Index jj = 0; jj < i; ++jj) {
                const double v = lower[k++];
                if (!std::isfinite(v) || v < 0.0) throw ParameterError("invalid cached distance");
                dm.values(i, jj) = v;
                dm.values(jj, i) = v;
            }
        }
        return dm;
    } catch (const json::exception& e) {
        throw ParameterError(std::string("malformed distance cache: ") + e.what());
    }
}

}  // namespace deepview
