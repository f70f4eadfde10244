#pragma once

#include "deepview/classifier.hpp"
#include "deepview/delaunay.hpp"
#include "deepview/embedding.hpp"
#include "deepview/evaluation.hpp"
#include "deepview/fisher_metric.hpp"
#include "deepview/inverse_map.hpp"
#include "deepview/png.hpp"
#include "deepview/types.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace deepview {

struct Viewport {
    double xmin = 0.0;
    double xmax = 1.0;
    double ymin = 0.0;
    double ymax = 1.0;
};

struct InverseConfig {
    /// Kernel parameter of the inverse map; 0 fits it to the embedding curve
    /// with b fixed (see fit_ab).
    double a = 0.0;
    double b = 1.0;
    InverseTrainOptions train;
    MetricMode metric = MetricMode::identity;
};

struct GridConfig {
    int width = 100;
    int height = 100;
    double margin_fraction = 0.05;
    /// Overrides the bounding box of the embedding when set.
    std::optional<Viewport> viewport;
};

struct QualityConfig {
    int k = 5;
    double split_fraction = 0.7;
    std::uint64_t seed = 0;
    bool ground_truth_labels = false;
    /// Also embed with the plain Euclidean metric and report its Q_kNN.
    bool euclidean_baseline = false;
};

struct PipelineConfig {
    FisherMetricConfig metric;
    /// When set, lambda = lambda_factor * lambda_scale(data, f) replaces
    /// metric.lambda.
    std::optional<double> lambda_factor = 0.1;
    UmapParams umap;
    InverseConfig inverse;
    GridConfig grid;
    std::optional<DelaunayParams> accel;
    QualityConfig quality;
    int workers = 1;

    void validate() const;
};

nlohmann::json to_json(const PipelineConfig& config);
/// Applies the keys present in `j` on top of `base`. Throws ParameterError on
/// unknown keys or values of the wrong type.
PipelineConfig merge_config(const PipelineConfig& base, const nlohmann::json& j);

struct DecisionMap {
    Viewport viewport;
    int width = 0;
    int height = 0;
    int class_count = 0;
    /// Cell (ix, iy) is stored at ix * height + iy; iy grows upwards.
    std::vector<int> grid_labels;
    std::vector<double> grid_entropy;
    Matrix coords;
    std::vector<int> model_labels;
    std::optional<std::vector<int>> true_labels;
    QualityReport quality;
    nlohmann::json params;

    int label(int ix, int iy) const { return grid_labels[static_cast<std::size_t>(ix * height + iy)]; }
    double entropy(int ix, int iy) const { return grid_entropy[static_cast<std::size_t>(ix * height + iy)]; }
    Point2 cell_center(int ix, int iy) const;
};

/// Inverse map plus the optional local-anchor triangulation; grid cells and
/// probes both go through operator().
struct InverseProjection {
    InverseMapModel model;
    std::optional<Triangulation> triangulation;

    Vector operator()(const Point2& y) const;
};

/// Shannon entropy in nats, 0 ln 0 := 0, clipped to [0, ln C].
double entropy(const Eigen::Ref<const Vector>& probs);

struct ProbeResult {
    Vector x;
    Vector probs;
    int label = 0;
    double entropy = 0.0;
};

ProbeResult probe(const InverseProjection& inverse, const Classifier& f, const Point2& y);
nlohmann::json to_json(const ProbeResult& result);

/// sigma_i rescaled into squared embedding units by the ratio of mean kNN
/// distances in the plane and in the input metric. Points whose input kNN
/// distances are all zero get (median pairwise planar distance)^2.
Vector inverse_bandwidths(const FuzzyGraph& graph, const DistanceMatrix& dist, const Matrix& coords);

struct PipelineResult {
    DecisionMap map;
    DistanceMatrix distances;
    EmbeddingModel embedding;
    InverseProjection inverse;
    TrainingReport training;
};

struct RunHooks {
    /// Called with a stage name and the fraction of that stage completed.
    std::function<void(const std::string& stage, double fraction)> progress;
    /// Reused instead of recomputing when its config and classifier id match.
    const DistanceMatrix* cached_distances = nullptr;
};

/// Embeds the data, trains the inverse map, classifies the inverse images of
/// a regular grid and scores the result. Deterministic given the config.
PipelineResult run(const Dataset& data, const Classifier& f, const PipelineConfig& config,
                   const RunHooks& hooks = {});

struct ParameterSelection {
    double lambda = 0.0;
    double a = 0.0;
    /// (candidate, score) in candidate order.
    std::vector<std::pair<double, double>> q_knn_by_lambda;
    std::vector<std::pair<double, double>> q_d_by_a;
};

/// Picks lambda from lambda_grid by Q_kNN of the embedding (select_lambda),
/// then the inverse-map kernel parameter a from a_grid by Q_d at that lambda
/// (select_a). Candidates run concurrently on config.workers threads, one
/// thread per candidate, so the result does not depend on the worker count.
ParameterSelection select_parameters(const Dataset& data, const Classifier& f, const PipelineConfig& config);

/// config with the selected lambda (as an absolute value) and a.
PipelineConfig with_selection(PipelineConfig config, const ParameterSelection& selection);

using Palette = std::vector<std::array<std::uint8_t, 3>>;

/// Ten distinguishable colours.
const Palette& default_palette();

/// Opacity of a cell: 1 - H / ln C mapped affinely onto [0.15, 1].
double cell_alpha(double entropy, int class_count);

RgbImage render_rgb(const DecisionMap& map, const Palette& palette = default_palette());
std::vector<std::uint8_t> render_png(const DecisionMap& map, const Palette& palette = default_palette());

/// Grayscale or RGB PNG of x reshaped to (h, w, c), values scaled from their
/// own min..max range.
std::vector<std::uint8_t> render_sample_png(const Vector& x, const std::vector<int>& image_shape);

nlohmann::json to_json(const DecisionMap& map);

}  // namespace deepview
