#include "deepview/pipeline.hpp"

#include "deepview/errors.hpp"
#include "deepview/parallel.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace deepview {

using nlohmann::json;

void PipelineConfig::validate() const {
    metric.validate();
    if (lambda_factor && !(*lambda_factor >= 0.0 && std::isfinite(*lambda_factor))) {
        throw ParameterError("lambda_factor must be >= 0");
    }
    if (umap.k < 2) throw ParameterError("umap.k must be >= 2");
    if (umap.epochs < 0) throw ParameterError("umap.epochs must be >= 0");
    if (!(umap.min_dist > 0.0 && umap.min_dist < umap.spread)) {
        throw ParameterError("umap needs 0 < min_dist < spread");
    }
    if (umap.negative_samples < 0) throw ParameterError("umap.negative_samples must be >= 0");
    if (!(inverse.a >= 0.0) || !(inverse.b > 0.0)) throw ParameterError("inverse needs a >= 0 and b > 0");
    if (!(inverse.train.momentum >= 0.0 && inverse.train.momentum < 1.0)) {
        throw ParameterError("inverse.momentum must lie in [0, 1)");
    }
    if (inverse.train.max_iters < 0 || inverse.train.warmup_iters < 0) {
        throw ParameterError("inverse iteration counts must be >= 0");
    }
    if (grid.width < 1 || grid.height < 1 || grid.width > 2000 || grid.height > 2000) {
        throw ParameterError("grid size must lie in [1, 2000]");
    }
    if (!(grid.margin_fraction >= 0.0)) throw ParameterError("grid.margin_fraction must be >= 0");
    if (grid.viewport && !(grid.viewport->xmin < grid.viewport->xmax && grid.viewport->ymin < grid.viewport->ymax)) {
        throw ParameterError("viewport must have xmin < xmax and ymin < ymax");
    }
    if (accel && (accel->n_k < 1 || accel->n_s < 0)) throw ParameterError("invalid accel parameters");
    if (quality.k < 1) throw ParameterError("quality.k must be >= 1");
    if (!(quality.split_fraction > 0.0 && quality.split_fraction < 1.0)) {
        throw ParameterError("quality.split_fraction must lie in (0, 1)");
    }
    if (workers < 1) throw ParameterError("workers must be >= 1");
}

json to_json(const PipelineConfig& c) {
    json j;
    j["metric"] = to_json(c.metric);
    j["lambda_factor"] = c.lambda_factor ? json(*c.lambda_factor) : json(nullptr);
    j["umap"] = {{"k", c.umap.k},
                 {"epochs", c.umap.epochs},
                 {"seed", c.umap.seed},
                 {"min_dist", c.umap.min_dist},
                 {"spread", c.umap.spread},
                 {"negative_samples", c.umap.negative_samples}};
    j["inverse"] = {{"a", c.inverse.a},
                    {"b", c.inverse.b},
                    {"momentum", c.inverse.train.momentum},
                    {"warmup_iters", c.inverse.train.warmup_iters},
                    {"max_iters", c.inverse.train.max_iters},
                    {"tol_factor", c.inverse.train.tol_factor},
                    {"metric", c.inverse.metric == MetricMode::identity ? "identity" : "fisher_diag"}};
    j["grid"] = {{"width", c.grid.width}, {"height", c.grid.height}, {"margin_fraction", c.grid.margin_fraction}};
    j["grid"]["viewport"] = c.grid.viewport ? json::array({c.grid.viewport->xmin, c.grid.viewport->xmax,
                                                           c.grid.viewport->ymin, c.grid.viewport->ymax})
                                            : json(nullptr);
    j["accel"] = c.accel ? json{{"n_s", c.accel->n_s},
                                {"n_k", c.accel->n_k},
                                {"epsilon", c.accel->epsilon},
                                {"seed", c.accel->seed}}
                         : json(nullptr);
    j["quality"] = {{"k", c.quality.k},
                    {"split_fraction", c.quality.split_fraction},
                    {"seed", c.quality.seed},
                    {"ground_truth_labels", c.quality.ground_truth_labels},
                    {"euclidean_baseline", c.quality.euclidean_baseline}};
    j["workers"] = c.workers;
    return j;
}

namespace {

// Reads the keys of `obj` through `handlers`; any other key is an error.
class Patch {
public:
    Patch(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
        if (!obj_.is_object()) throw ParameterError(where_ + " must be an object");
    }

    template <typename T>
    Patch& field(const char* key, T& out) {
        seen_.insert(key);
        if (!obj_.contains(key)) return *this;
        const json& v = obj_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ParameterError("");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw ParameterError("");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ParameterError("");
            }
            out = v.get<T>();
        } catch (const std::exception&) {
            throw ParameterError(where_ + "." + key + " has the wrong type");
        }
        return *this;
    }

    template <typename F>
    Patch& nested(const char* key, F&& apply) {
        seen_.insert(key);
        if (obj_.contains(key)) apply(obj_.at(key), where_ + "." + key);
        return *this;
    }

    void finish() const {
        for (const auto& item : obj_.items()) {
            if (!seen_.count(item.key())) throw ParameterError("unknown key " + where_ + "." + item.key());
        }
    }

private:
    const json& obj_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace

PipelineConfig merge_config(const PipelineConfig& base, const json& j) {
    PipelineConfig c = base;
    bool lambda_given = false;
    bool factor_given = false;
    Patch(j, "config")
        .nested("metric",
                [&](const json& m, const std::string& where) {
                    std::string divergence = c.metric.divergence == Divergence::sqrt_js ? "sqrt_js" : "sym_kl";
                    std::string base_metric = "euclidean";
                    lambda_given = m.is_object() && m.contains("lambda");
                    Patch(m, where)
                        .field("lambda", c.metric.lambda)
                        .field("n_segments", c.metric.n_segments)
                        .field("divergence", divergence)
                        .field("base_metric", base_metric)
                        .finish();
                    if (divergence == "sqrt_js") c.metric.divergence = Divergence::sqrt_js;
                    else if (divergence == "sym_kl") c.metric.divergence = Divergence::sym_kl;
                    else throw ParameterError("unknown divergence '" + divergence + "'");
                    if (base_metric != "euclidean") throw ParameterError("base_metric must be euclidean");
                })
        .nested("lambda_factor",
                [&](const json& v, const std::string& where) {
                    factor_given = true;
                    if (v.is_null()) c.lambda_factor.reset();
                    else if (v.is_number()) c.lambda_factor = v.get<double>();
                    else throw ParameterError(where + " must be a number or null");
                })
        .nested("umap",
                [&](const json& m, const std::string& where) {
                    Patch(m, where)
                        .field("k", c.umap.k)
                        .field("epochs", c.umap.epochs)
                        .field("seed", c.umap.seed)
                        .field("min_dist", c.umap.min_dist)
                        .field("spread", c.umap.spread)
                        .field("negative_samples", c.umap.negative_samples)
                        .finish();
                })
        .nested("inverse",
                [&](const json& m, const std::string& where) {
                    std::string metric = c.inverse.metric == MetricMode::identity ? "identity" : "fisher_diag";
                    Patch(m, where)
                        .field("a", c.inverse.a)
                        .field("b", c.inverse.b)
                        .field("momentum", c.inverse.train.momentum)
                        .field("warmup_iters", c.inverse.train.warmup_iters)
                        .field("max_iters", c.inverse.train.max_iters)
                        .field("tol_factor", c.inverse.train.tol_factor)
                        .field("metric", metric)
                        .finish();
                    if (metric == "identity") c.inverse.metric = MetricMode::identity;
                    else if (metric == "fisher_diag") c.inverse.metric = MetricMode::fisher_diag;
                    else throw ParameterError("unknown inverse metric '" + metric + "'");
                })
        .nested("grid",
                [&](const json& m, const std::string& where) {
                    Patch(m, where)
                        .field("width", c.grid.width)
                        .field("height", c.grid.height)
                        .field("margin_fraction", c.grid.margin_fraction)
                        .nested("viewport",
                                [&](const json& v, const std::string& w) {
                                    if (v.is_null()) {
                                        c.grid.viewport.reset();
                                        return;
                                    }
                                    if (!v.is_array() || v.size() != 4 ||
                                        !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); })) {
                                        throw ParameterError(w + " must be [xmin, xmax, ymin, ymax]");
                                    }
                                    c.grid.viewport = Viewport{v[0].get<double>(), v[1].get<double>(),
                                                               v[2].get<double>(), v[3].get<double>()};
                                })
                        .finish();
                })
        .nested("accel",
                [&](const json& m, const std::string& where) {
                    if (m.is_null()) {
                        c.accel.reset();
                        return;
                    }
                    DelaunayParams p = c.accel.value_or(DelaunayParams{});
                    Patch(m, where)
                        .field("n_s", p.n_s)
                        .field("n_k", p.n_k)
                        .field("epsilon", p.epsilon)
                        .field("seed", p.seed)
                        .finish();
                    c.accel = p;
                })
        .nested("quality",
                [&](const json& m, const std::string& where) {
                    Patch(m, where)
                        .field("k", c.quality.k)
                        .field("split_fraction", c.quality.split_fraction)
                        .field("seed", c.quality.seed)
                        .field("ground_truth_labels", c.quality.ground_truth_labels)
                        .field("euclidean_baseline", c.quality.euclidean_baseline)
                        .finish();
                })
        .field("workers", c.workers)
        .finish();
    // An explicit lambda without a factor means the caller wants that value.
    if (lambda_given && !factor_given) c.lambda_factor.reset();
    c.validate();
    return c;
}

Point2 DecisionMap::cell_center(int ix, int iy) const {
    const double w = viewport.xmax - viewport.xmin;
    const double h = viewport.ymax - viewport.ymin;
    return {viewport.xmin + (ix + 0.5) * w / width, viewport.ymin + (iy + 0.5) * h / height};
}

Vector InverseProjection::operator()(const Point2& y) const {
    if (triangulation) return evaluate_smoothed(model, *triangulation, y);
    return evaluate(model, y);
}

double entropy(const Eigen::Ref<const Vector>& probs) {
    double h = 0.0;
    for (Eigen::Index c = 0; c < probs.size(); ++c) {
        if (probs[c] > 0.0) h -= probs[c] * std::log(probs[c]);
    }
    return std::clamp(h, 0.0, std::log(static_cast<double>(probs.size())));
}

ProbeResult probe(const InverseProjection& inverse, const Classifier& f, const Point2& y) {
    if (!y.allFinite()) throw ParameterError("probe position must be finite");
    ProbeResult r;
    r.x = inverse(y);
    Matrix row(1, r.x.size());
    row.row(0) = r.x.transpose();
    r.probs = f.predict_batch(row).row(0).transpose();
    r.label = argmax(r.probs);
    r.entropy = entropy(r.probs);
    return r;
}

json to_json(const ProbeResult& r) {
    return {{"x", std::vector<double>(r.x.begin(), r.x.end())},
            {"probs", std::vector<double>(r.probs.begin(), r.probs.end())},
            {"label", r.label},
            {"entropy", r.entropy}};
}

namespace {

double median_of(std::vector<double> v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

}  // namespace

Vector inverse_bandwidths(const FuzzyGraph& graph, const DistanceMatrix& dist, const Matrix& coords) {
    const Eigen::Index n = coords.rows();
    std::vector<double> planar;
    planar.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) planar.push_back((coords.row(i) - coords.row(j)).norm());
    }
    double fallback = planar.empty() ? 1.0 : median_of(std::move(planar));
    fallback = fallback > 0.0 ? fallback * fallback : 1.0;

    Vector sigma_hat(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double in_sum = 0.0;
        double out_sum = 0.0;
        for (const Eigen::Index j : graph.neighbors[static_cast<std::size_t>(i)]) {
            in_sum += dist.values(i, j);
            out_sum += (coords.row(i) - coords.row(j)).norm();
        }
        const double ratio = out_sum / in_sum;
        const double s = graph.sigma[i] * ratio * ratio;
        sigma_hat[i] = in_sum > 0.0 && out_sum > 0.0 && std::isfinite(s) && s > 0.0 ? s : fallback;
    }
    return sigma_hat;
}

namespace {

bool cache_matches(const DistanceMatrix& dm, const FisherMetricConfig& config, const Classifier& f, Eigen::Index n) {
    return dm.size() == n && dm.classifier_id == f.id() && dm.config.lambda == config.lambda &&
           dm.config.n_segments == config.n_segments && dm.config.divergence == config.divergence;
}

Viewport viewport_of(const Matrix& coords, double margin) {
    Viewport v{coords.col(0).minCoeff(), coords.col(0).maxCoeff(), coords.col(1).minCoeff(),
               coords.col(1).maxCoeff()};
    double w = v.xmax - v.xmin;
    double h = v.ymax - v.ymin;
    if (!(w > 0.0)) w = 1.0;
    if (!(h > 0.0)) h = 1.0;
    v.xmin -= margin * w;
    v.xmax += margin * w;
    v.ymin -= margin * h;
    v.ymax += margin * h;
    if (!(v.xmax > v.xmin)) v.xmax = v.xmin + 1.0;
    if (!(v.ymax > v.ymin)) v.ymax = v.ymin + 1.0;
    return v;
}

}  // namespace

PipelineResult run(const Dataset& data, const Classifier& f, const PipelineConfig& input_config,
                   const RunHooks& hooks) {
    input_config.validate();
    validate(data, f.class_count());
    if (data.dim() != f.input_dim()) throw DimensionError("data and classifier dimensions differ");
    const Eigen::Index n = data.size();
    if (n < 3) throw ParameterError("the pipeline needs at least three points");
    if (input_config.quality.ground_truth_labels && !data.labels) {
        throw ParameterError("ground-truth quality requested but the dataset has no labels");
    }
    auto report = [&](const char* stage, double fraction) {
        if (hooks.progress) hooks.progress(stage, fraction);
    };

    PipelineConfig config = input_config;
    if (config.lambda_factor) config.metric.lambda = *config.lambda_factor * lambda_scale(data.points, f);
    const int k = std::min<int>(config.umap.k, static_cast<int>(n) - 1);

    PipelineResult result;
    report("distances", 0.0);
    if (hooks.cached_distances && cache_matches(*hooks.cached_distances, config.metric, f, n)) {
        result.distances = *hooks.cached_distances;
    } else {
        result.distances = distance_matrix(data.points, f, config.metric, config.workers,
                                           [&](double fr) { report("distances", fr); });
    }
    report("distances", 1.0);

    report("embedding", 0.0);
    const FuzzyGraph graph = calibrate(result.distances, k, config.workers);
    const auto [ea, eb] = fit_ab(config.umap.min_dist, config.umap.spread);
    result.embedding = optimize(graph, ea, eb, config.umap.epochs, config.umap.seed, config.umap.negative_samples);
    const Matrix& coords = result.embedding.coords;
    report("embedding", 1.0);

    report("inverse", 0.0);
    const double ia = config.inverse.a > 0.0 ? config.inverse.a
                                            : fit_ab(config.umap.min_dist, config.umap.spread, true).first;
    const double ib = config.inverse.b;
    const Vector sigma_hat = inverse_bandwidths(graph, result.distances, coords);
    const LocalMetrics metrics = local_metrics(data.points, f, config.inverse.metric);
    auto [model, training] = train_inverse(data.points, coords, ia, ib, sigma_hat, config.inverse.train, metrics);
    result.inverse.model = std::move(model);
    result.training = std::move(training);
    if (config.accel) result.inverse.triangulation = build(coords, *config.accel);
    report("inverse", 1.0);

    DecisionMap& map = result.map;
    map.viewport = config.grid.viewport.value_or(viewport_of(coords, config.grid.margin_fraction));
    map.width = config.grid.width;
    map.height = config.grid.height;
    map.class_count = f.class_count();
    const auto cells = static_cast<std::size_t>(map.width) * static_cast<std::size_t>(map.height);
    Matrix xs(static_cast<Eigen::Index>(cells), data.dim());
    report("grid", 0.0);
    parallel_blocks(cells, config.workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            const int ix = static_cast<int>(c / static_cast<std::size_t>(map.height));
            const int iy = static_cast<int>(c % static_cast<std::size_t>(map.height));
            xs.row(static_cast<Eigen::Index>(c)) = result.inverse(map.cell_center(ix, iy)).transpose();
        }
    });
    report("grid", 0.5);
    map.grid_labels.resize(cells);
    map.grid_entropy.resize(cells);
    const std::size_t chunk = std::max<std::size_t>(1, f.batch_limit());
    for (std::size_t start = 0; start < cells; start += chunk) {
        const std::size_t stop = std::min(cells, start + chunk);
        const Matrix probs = f.predict_batch(xs.middleRows(static_cast<Eigen::Index>(start),
                                                           static_cast<Eigen::Index>(stop - start)));
        for (std::size_t c = start; c < stop; ++c) {
            const Vector p = probs.row(static_cast<Eigen::Index>(c - start)).transpose();
            map.grid_labels[c] = argmax(p);
            map.grid_entropy[c] = entropy(p);
        }
        report("grid", 0.5 + 0.5 * static_cast<double>(stop) / static_cast<double>(cells));
    }

    report("quality", 0.0);
    map.coords = coords;
    map.model_labels = predicted_labels(f, data.points);
    map.true_labels = data.labels;
    QualityReport& q = map.quality;
    q.k = config.quality.k;
    q.split_fraction = config.quality.split_fraction;
    q.seed = config.quality.seed;
    q.ground_truth_labels = config.quality.ground_truth_labels;
    const std::vector<int>& knn_labels = q.ground_truth_labels ? *data.labels : map.model_labels;
    q.q_knn = q_knn(coords, knn_labels, q.k);
    q.q_d = q_d(data.points, coords, [&](const Point2& y) { return result.inverse(y); }, f);
    q.q_nd = q_nd(data.points, coords, ia, ib, sigma_hat, f, q.split_fraction, q.seed, config.inverse.train);
    if (config.quality.euclidean_baseline) {
        const DistanceMatrix euclid = euclidean_distance_matrix(data.points);
        const FuzzyGraph eg = calibrate(euclid, k, config.workers);
        const EmbeddingModel em = optimize(eg, ea, eb, config.umap.epochs, config.umap.seed,
                                           config.umap.negative_samples);
        q.q_knn_eucl = q_knn(em.coords, knn_labels, q.k);
    }
    report("quality", 1.0);

    map.params = to_json(config);
    map.params["resolved"] = {{"lambda", config.metric.lambda},
                              {"k", k},
                              {"embedding_a", ea},
                              {"embedding_b", eb},
                              {"inverse_a", ia},
                              {"inverse_b", ib},
                              {"inverse_iterations", result.training.iterations}};
    map.params["classifier"] = {{"id", f.id()}, {"kind", to_string(f.kind())}, {"classes", f.class_count()}};
    map.params["data"] = {{"n", n}, {"dim", data.dim()}};
    if (!graph.sigma_at_bound.empty()) {
        spdlog::info("{} bandwidth searches ended on a bracket bound", graph.sigma_at_bound.size());
    }
    return result;
}

ParameterSelection select_parameters(const Dataset& data, const Classifier& f, const PipelineConfig& config) {
    config.validate();
    validate(data, f.class_count());
    if (data.dim() != f.input_dim()) throw DimensionError("data and classifier dimensions differ");
    const Eigen::Index n = data.size();
    if (n <= config.quality.k) throw ParameterError("selection needs more points than quality.k");
    if (config.quality.ground_truth_labels && !data.labels) {
        throw ParameterError("ground-truth quality requested but the dataset has no labels");
    }
    const std::vector<int> labels = config.quality.ground_truth_labels ? *data.labels : predicted_labels(f, data.points);
    const int k = std::min<int>(config.umap.k, static_cast<int>(n) - 1);
    const auto [ea, eb] = fit_ab(config.umap.min_dist, config.umap.spread);

    struct Candidate {
        DistanceMatrix distances;
        FuzzyGraph graph;
        Matrix coords;
        double q = 0.0;
    };
    const std::vector<double> lambdas = lambda_grid(data.points, f);
    std::vector<Candidate> embedded(lambdas.size());
    parallel_blocks(lambdas.size(), config.workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            FisherMetricConfig metric = config.metric;
            metric.lambda = lambdas[c];
            Candidate& out = embedded[c];
            out.distances = distance_matrix(data.points, f, metric, 1);
            out.graph = calibrate(out.distances, k, 1);
            out.coords = optimize(out.graph, ea, eb, config.umap.epochs, config.umap.seed,
                                  config.umap.negative_samples).coords;
            out.q = q_knn(out.coords, labels, config.quality.k);
        }
    });
    ParameterSelection result;
    for (std::size_t c = 0; c < lambdas.size(); ++c) result.q_knn_by_lambda.emplace_back(lambdas[c], embedded[c].q);
    result.lambda = select_lambda(lambdas, [&](double l) {
        return embedded[static_cast<std::size_t>(std::find(lambdas.begin(), lambdas.end(), l) - lambdas.begin())].q;
    });
    const Candidate& chosen =
        embedded[static_cast<std::size_t>(std::find(lambdas.begin(), lambdas.end(), result.lambda) - lambdas.begin())];

    const std::vector<double> as = a_grid();
    const Vector sigma_hat = inverse_bandwidths(chosen.graph, chosen.distances, chosen.coords);
    const LocalMetrics metrics = local_metrics(data.points, f, config.inverse.metric);
    std::vector<double> q_d_values(as.size());
    parallel_blocks(as.size(), config.workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            const InverseMapModel model = train_inverse(data.points, chosen.coords, as[c], config.inverse.b, sigma_hat,
                                                        config.inverse.train, metrics)
                                              .first;
            q_d_values[c] = q_d(data.points, chosen.coords, [&](const Point2& y) { return evaluate(model, y); }, f);
        }
    });
    for (std::size_t c = 0; c < as.size(); ++c) result.q_d_by_a.emplace_back(as[c], q_d_values[c]);
    result.a = select_a(as, [&](double a) {
        return q_d_values[static_cast<std::size_t>(std::find(as.begin(), as.end(), a) - as.begin())];
    });
    return result;
}

PipelineConfig with_selection(PipelineConfig config, const ParameterSelection& selection) {
    config.lambda_factor.reset();
    config.metric.lambda = selection.lambda;
    config.inverse.a = selection.a;
    return config;
}

const Palette& default_palette() {
    static const Palette palette{{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
                                 {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127},
                                 {188, 189, 34}, {23, 190, 207}};
    return palette;
}

double cell_alpha(double h, int class_count) {
    const double max_h = std::log(static_cast<double>(std::max(class_count, 2)));
    const double certainty = std::clamp(1.0 - h / max_h, 0.0, 1.0);
    return 0.15 + 0.85 * certainty;
}

namespace {

std::uint8_t blend(std::uint8_t color, double alpha) {
    return static_cast<std::uint8_t>(std::lround(alpha * color + (1.0 - alpha) * 255.0));
}

std::uint8_t darken(std::uint8_t color) { return static_cast<std::uint8_t>(color * 3 / 5); }

}  // namespace

RgbImage render_rgb(const DecisionMap& map, const Palette& palette) {
    if (map.class_count > static_cast<int>(palette.size())) {
        throw ParameterError("palette has fewer colours than classes");
    }
    const int cell = (512 + std::max(map.width, map.height) - 1) / std::max(map.width, map.height);
    RgbImage image(map.width * cell, map.height * cell);
    for (int ix = 0; ix < map.width; ++ix) {
        for (int iy = 0; iy < map.height; ++iy) {
            const auto& color = palette[static_cast<std::size_t>(map.label(ix, iy))];
            const double alpha = cell_alpha(map.entropy(ix, iy), map.class_count);
            const int top = (map.height - 1 - iy) * cell;
            for (int py = top; py < top + cell; ++py) {
                for (int px = ix * cell; px < (ix + 1) * cell; ++px) {
                    image.set(px, py, blend(color[0], alpha), blend(color[1], alpha), blend(color[2], alpha));
                }
            }
        }
    }

    const double sx = image.width / (map.viewport.xmax - map.viewport.xmin);
    const double sy = image.height / (map.viewport.ymax - map.viewport.ymin);
    constexpr int radius = 3;
    for (Eigen::Index i = 0; i < map.coords.rows(); ++i) {
        const int cx = static_cast<int>(std::floor((map.coords(i, 0) - map.viewport.xmin) * sx));
        const int cy = static_cast<int>(std::floor((map.viewport.ymax - map.coords(i, 1)) * sy));
        const int model = map.model_labels[static_cast<std::size_t>(i)];
        const int truth = map.true_labels ? (*map.true_labels)[static_cast<std::size_t>(i)] : model;
        const auto& fill = palette[static_cast<std::size_t>(truth) % palette.size()];
        for (int dy = -radius - 1; dy <= radius + 1; ++dy) {
            for (int dx = -radius - 1; dx <= radius + 1; ++dx) {
                const int d2 = dx * dx + dy * dy;
                if (d2 <= radius * radius) image.set(cx + dx, cy + dy, fill[0], fill[1], fill[2]);
                else if (d2 <= (radius + 1) * (radius + 1))
                    image.set(cx + dx, cy + dy, darken(fill[0]), darken(fill[1]), darken(fill[2]));
            }
        }
        if (truth != model) {
            const auto& mark = palette[static_cast<std::size_t>(model)];
            for (int t = -radius - 2; t <= radius + 2; ++t) {
                for (int w = 0; w <= 1; ++w) {
                    image.set(cx + t + w, cy + t, mark[0], mark[1], mark[2]);
                    image.set(cx + t + w, cy - t, mark[0], mark[1], mark[2]);
                }
            }
        }
    }
    return image;
}

std::vector<std::uint8_t> render_png(const DecisionMap& map, const Palette& palette) {
    return encode_png(render_rgb(map, palette));
}

std::vector<std::uint8_t> render_sample_png(const Vector& x, const std::vector<int>& shape) {
    if (shape.size() != 3 || shape[0] * shape[1] * shape[2] != x.size() || (shape[2] != 1 && shape[2] != 3)) {
        throw ParameterError("image_shape does not match the sample");
    }
    const double lo = x.minCoeff();
    const double span = x.maxCoeff() - lo;
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(x.size()));
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = span > 0.0 ? (x[i] - lo) / span : 0.5;
        pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
    return encode_png(pixels, shape[1], shape[0], shape[2]);
}

json to_json(const DecisionMap& map) {
    json labels = json::array();
    json entropy = json::array();
    for (int ix = 0; ix < map.width; ++ix) {
        const auto begin = static_cast<std::ptrdiff_t>(ix) * map.height;
        labels.push_back(std::vector<int>(map.grid_labels.begin() + begin, map.grid_labels.begin() + begin + map.height));
        entropy.push_back(
            std::vector<double>(map.grid_entropy.begin() + begin, map.grid_entropy.begin() + begin + map.height));
    }
    json scatter = json::array();
    for (Eigen::Index i = 0; i < map.coords.rows(); ++i) {
        json truth = map.true_labels ? json((*map.true_labels)[static_cast<std::size_t>(i)]) : json(nullptr);
        scatter.push_back({map.coords(i, 0), map.coords(i, 1), map.model_labels[static_cast<std::size_t>(i)], truth});
    }
    return {{"viewport",
             {{"xmin", map.viewport.xmin}, {"xmax", map.viewport.xmax}, {"ymin", map.viewport.ymin},
              {"ymax", map.viewport.ymax}}},
            {"resolution", {map.width, map.height}},
            {"classes", map.class_count},
            {"grid_labels", labels},
            {"grid_entropy", entropy},
            {"scatter", scatter},
            {"quality", to_json(map.quality)},
            {"params", map.params}};
}

}  // namespace deepview
