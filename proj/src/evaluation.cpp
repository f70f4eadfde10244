#include "deepview/evaluation.hpp"

#include "deepview/errors.hpp"
#include "deepview/fisher_metric.hpp"
#include "deepview/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace deepview {

using nlohmann::json;

double q_knn(const Matrix& coords, const std::vector<int>& labels, int k) {
    const Eigen::Index n = coords.rows();
    if (k < 1) throw ParameterError("k must be >= 1");
    if (n <= k) throw ParameterError("q_knn needs more than k points");
    if (coords.cols() != 2) throw DimensionError("q_knn expects n x 2 coordinates");
    if (static_cast<Eigen::Index>(labels.size()) != n) throw DimensionError("label count differs from n");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
        if (coords(i, 0) != coords(j, 0)) return coords(i, 0) < coords(j, 0);
        if (coords(i, 1) != coords(j, 1)) return coords(i, 1) < coords(j, 1);
        if (labels[static_cast<std::size_t>(i)] != labels[static_cast<std::size_t>(j)]) {
            return labels[static_cast<std::size_t>(i)] < labels[static_cast<std::size_t>(j)];
        }
        return i < j;
    });

    std::size_t agree = 0;
    std::vector<std::pair<double, Eigen::Index>> d;
    d.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index a = 0; a < n; ++a) {
        const Eigen::Index i = order[static_cast<std::size_t>(a)];
        d.clear();
        for (Eigen::Index b = 0; b < n; ++b) {
            if (b == a) continue;
            const Eigen::Index j = order[static_cast<std::size_t>(b)];
            d.emplace_back((coords.row(i) - coords.row(j)).squaredNorm(), b);
        }
        std::partial_sort(d.begin(), d.begin() + k, d.end());
        std::map<int, int> votes;
        for (int m = 0; m < k; ++m) {
            ++votes[labels[static_cast<std::size_t>(order[static_cast<std::size_t>(d[static_cast<std::size_t>(m)].second)])]];
        }
        int best_label = votes.begin()->first;
        int best_votes = 0;
        for (const auto& [label, count] : votes) {
            if (count > best_votes) {
                best_votes = count;
                best_label = label;
            }
        }
        if (best_label == labels[static_cast<std::size_t>(i)]) ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(n);
}

std::vector<int> predicted_labels(const Classifier& f, const Matrix& points) {
    const Matrix probs = f.predict_batch(points);
    std::vector<int> out(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax(probs.row(i).transpose());
    return out;
}

double q_d(const Matrix& samples, const Matrix& coords, const InverseFn& inverse, const Classifier& f) {
    const Eigen::Index n = samples.rows();
    if (n < 1) throw ParameterError("q_d needs at least one pair");
    if (coords.rows() != n) throw DimensionError("samples and coords differ in length");
    Matrix reconstructed(n, samples.cols());
    for (Eigen::Index i = 0; i < n; ++i) reconstructed.row(i) = inverse(coords.row(i).transpose()).transpose();
    const auto original = predicted_labels(f, samples);
    const auto mapped = predicted_labels(f, reconstructed);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < original.size(); ++i) agree += original[i] == mapped[i] ? 1 : 0;
    return static_cast<double>(agree) / static_cast<double>(n);
}

double q_d(const Matrix& samples, const Matrix& coords, const InverseMapModel& model, const Classifier& f) {
    return q_d(samples, coords, [&](const Point2& y) { return evaluate(model, y); }, f);
}

double q_nd(const Matrix& samples, const Matrix& coords, double a, double b, const Vector& sigma_hat,
            const Classifier& f, double split_fraction, std::uint64_t seed,
            const InverseTrainOptions& options) {
    const Eigen::Index n = samples.rows();
    if (coords.rows() != n || sigma_hat.size() != n) throw DimensionError("pair arrays differ in length");
    if (!(split_fraction > 0.0 && split_fraction <= 1.0)) throw ParameterError("split_fraction must lie in (0, 1]");
    const auto n_train = static_cast<Eigen::Index>(std::llround(split_fraction * static_cast<double>(n)));
    if (n_train < 1) throw ParameterError("training part of the split is empty");
    if (n_train >= n) throw ParameterError("held-out part of the split is empty");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    auto take = [&](Eigen::Index from, Eigen::Index to, Matrix& s, Matrix& r, Vector* sig) {
        s.resize(to - from, samples.cols());
        r.resize(to - from, 2);
        if (sig) sig->resize(to - from);
        for (Eigen::Index k = from; k < to; ++k) {
            const Eigen::Index i = order[static_cast<std::size_t>(k)];
            s.row(k - from) = samples.row(i);
            r.row(k - from) = coords.row(i);
            if (sig) (*sig)[k - from] = sigma_hat[i];
        }
    };
    Matrix train_s, train_r, test_s, test_r;
    Vector train_sigma;
    take(0, n_train, train_s, train_r, &train_sigma);
    take(n_train, n, test_s, test_r, nullptr);

    const auto [model, report] = train_inverse(train_s, train_r, a, b, train_sigma, options);
    (void)report;
    return q_d(test_s, test_r, model, f);
}

namespace {

double select(const std::vector<double>& candidates, const std::function<double(double)>& score, bool largest) {
    if (candidates.empty()) throw ParameterError("no candidates given");
    if (candidates.size() == 1) return candidates.front();
    std::vector<double> scores;
    scores.reserve(candidates.size());
    for (const double c : candidates) scores.push_back(score(c));
    const double best = *std::max_element(scores.begin(), scores.end());
    std::optional<double> chosen;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (scores[i] < best - 0.02) continue;
        if (!chosen || (largest ? candidates[i] > *chosen : candidates[i] < *chosen)) chosen = candidates[i];
    }
    return *chosen;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(v.begin(), mid);
    return 0.5 * (lower + upper);
}

}  // namespace

double select_lambda(const std::vector<double>& candidates, const std::function<double(double)>& q_knn_of) {
    return select(candidates, q_knn_of, true);
}

double select_a(const std::vector<double>& candidates, const std::function<double(double)>& q_d_of) {
    return select(candidates, q_d_of, false);
}

double lambda_scale(const Matrix& points, const Classifier& f) {
    const Eigen::Index n = std::min<Eigen::Index>(points.rows(), 300);
    if (n < 2) return 1.0;
    const Matrix head = points.topRows(n);
    const Matrix probs = f.predict_batch(head);
    std::vector<double> js, eu;
    js.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    eu.reserve(js.capacity());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            js.push_back(js_sqrt_distance(probs.row(i).transpose(), probs.row(j).transpose()));
            eu.push_back((head.row(i) - head.row(j)).norm());
        }
    }
    const double mj = median(std::move(js));
    const double me = median(std::move(eu));
    if (!(mj > 0.0) || !(me > 0.0)) return 1.0;
    return mj / me;
}

std::vector<double> lambda_grid(const Matrix& points, const Classifier& f) {
    const double scale = lambda_scale(points, f);
    std::vector<double> grid{10, 5, 2, 1, 0.5, 0.2, 0.1, 0.05};
    for (double& g : grid) g *= scale;
    return grid;
}

std::vector<double> a_grid() { return {0.1, 0.3, 1, 3, 10}; }

json to_json(const QualityReport& report) {
    json j{{"q_knn", report.q_knn},
           {"q_d", report.q_d},
           {"q_nd", report.q_nd},
           {"k", report.k},
           {"split_fraction", report.split_fraction},
           {"seed", report.seed},
           {"ground_truth_labels", report.ground_truth_labels}};
    j["q_knn_eucl"] = report.q_knn_eucl ? json(*report.q_knn_eucl) : json(nullptr);
    return j;
}

}  // namespace deepview
