#pragma once

#include "deepview/fisher_metric.hpp"
#include "deepview/types.hpp"

#include "json.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace deepview {

/// Symmetrised membership of an unordered pair, stored once with i < j.
struct FuzzyEdge {
    Eigen::Index i = 0;
    Eigen::Index j = 0;
    double weight = 0.0;
};

/// The 1-skeleton of the fuzzy simplicial set built from a distance matrix.
struct FuzzyGraph {
    std::vector<FuzzyEdge> edges;
    /// Squared distance to the nearest neighbour.
    Vector rho;
    /// Per-point bandwidth in squared-distance units.
    Vector sigma;
    int k = 0;
    /// k nearest neighbours of each point, closest first.
    std::vector<std::vector<Eigen::Index>> neighbors;
    /// Points whose bandwidth search ended on a bracket bound.
    std::vector<Eigen::Index> sigma_at_bound;

    Eigen::Index size() const { return rho.size(); }
};

/// exp(-max(d^2 - rho, 0) / sigma).
double directed_membership(double distance, double rho, double sigma);

/// Sum t-conorm x + y - xy.
inline double fuzzy_union(double x, double y) { return x + y - x * y; }

/// Builds the kNN fuzzy graph. For every point the bandwidth is bisected so
/// that its k directed memberships sum to log2(k); directed edges are then
/// merged with the sum t-conorm. Requires 2 <= k < n.
FuzzyGraph calibrate(const DistanceMatrix& dist, int k, int workers = 1);

/// Least-squares fit of (1 + a t^(2b))^-1 to the UMAP target curve sampled at
/// 300 points on [0, 3 spread]. With `fix_b` only `a` is fitted and b = 1.
std::pair<double, double> fit_ab(double min_dist, double spread, bool fix_b = false);

/// Root-mean-square residual of a given (a, b) against the fit_ab target.
double fit_ab_rmse(double min_dist, double spread, double a, double b);

/// Low-dimensional membership w = (1 + a ||ri - rj||^(2b))^-1.
double low_dim_membership(const Point2& ri, const Point2& rj, double a, double b);

/// Fuzzy cross-entropy of one edge, -(v log w + (1-v) log(1-w)).
double edge_cross_entropy(const Point2& ri, const Point2& rj, double v, double a, double b);

/// Analytic gradient of edge_cross_entropy with respect to ri.
Point2 edge_gradient(const Point2& ri, const Point2& rj, double v, double a, double b);

struct UmapParams {
    int k = 15;
    int epochs = 500;
    std::uint64_t seed = 0;
    double min_dist = 0.1;
    double spread = 1.0;
    int negative_samples = 5;
};

struct EmbeddingModel {
    Matrix coords;  // n x 2
    double a = 1.0;
    double b = 1.0;
    FuzzyGraph graph;
    std::uint64_t seed = 0;

    Point2 point(Eigen::Index i) const { return coords.row(i).transpose(); }
};

/// Seeded Gaussian start positions with standard deviation 10.
Matrix random_initialization(Eigen::Index n, std::uint64_t seed);

/// Stochastic minimisation of the fuzzy cross-entropy. Each epoch samples
/// edges with frequency proportional to their weight, applies an attractive
/// step to both endpoints and `negative_samples` repulsive steps to the head,
/// with a learning rate decaying linearly from 1 to 0.
EmbeddingModel optimize(const FuzzyGraph& graph, double a, double b, int epochs,
                        std::uint64_t seed, int negative_samples = 5);

/// Same, starting from explicit coordinates.
EmbeddingModel optimize_from(const FuzzyGraph& graph, Matrix init, double a, double b,
                             int epochs, std::uint64_t seed, int negative_samples = 5);

/// calibrate -> fit_ab -> optimize on a precomputed distance matrix.
EmbeddingModel project(const DistanceMatrix& dist, const UmapParams& params, int workers = 1);

/// distance_matrix -> calibrate -> fit_ab -> optimize.
EmbeddingModel project(const Matrix& points, const Classifier& f, const FisherMetricConfig& metric,
                       const UmapParams& params, int workers = 1);

nlohmann::json to_json(const EmbeddingModel& model);

}  // namespace deepview
