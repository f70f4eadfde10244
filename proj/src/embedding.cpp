#include "deepview/embedding.hpp"

#include "deepview/errors.hpp"
#include "deepview/parallel.hpp"
#include "deepview/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace deepview {

using nlohmann::json;

double directed_membership(double distance, double rho, double sigma) {
    return std::exp(-std::max(distance * distance - rho, 0.0) / sigma);
}

namespace {

constexpr double sigma_lower = 1e-6;
constexpr double sigma_upper = 1e3;
constexpr int sigma_expansions = 10;
constexpr int sigma_iterations = 64;
constexpr double sigma_tolerance = 1e-10;

double membership_sum(const std::vector<double>& distances, double rho, double sigma) {
    double sum = 0.0;
    for (double d : distances) sum += directed_membership(d, rho, sigma);
    return sum;
}

struct Bandwidth {
    double sigma;
    bool at_bound;
};

// Bisection in log(sigma); the membership sum increases with sigma.
Bandwidth search_bandwidth(const std::vector<double>& distances, double rho, double target) {
    double lo = sigma_lower;
    double hi = sigma_upper;
    if (membership_sum(distances, rho, lo) >= target) return {lo, true};
    int expansions = 0;
    while (membership_sum(distances, rho, hi) < target && expansions < sigma_expansions) {
        hi *= 2.0;
        ++expansions;
    }
    if (membership_sum(distances, rho, hi) < target) return {hi, true};
    double mid = std::sqrt(lo * hi);
    for (int it = 0; it < sigma_iterations; ++it) {
        mid = std::sqrt(lo * hi);
        const double residual = membership_sum(distances, rho, mid) - target;
        if (std::abs(residual) < sigma_tolerance) break;
        if (residual > 0.0) hi = mid;
        else lo = mid;
    }
    return {mid, false};
}

}  // namespace

FuzzyGraph calibrate(const DistanceMatrix& dist, int k, int workers) {
    const Eigen::Index n = dist.size();
    if (k < 2 || k >= n) {
        throw ParameterError("k must satisfy 2 <= k < n (k=" + std::to_string(k) +
                             ", n=" + std::to_string(n) + ")");
    }
    FuzzyGraph graph;
    graph.k = k;
    graph.rho = Vector::Zero(n);
    graph.sigma = Vector::Zero(n);
    graph.neighbors.assign(static_cast<std::size_t>(n), {});
    std::vector<std::vector<double>> directed(static_cast<std::size_t>(n));
    std::vector<char> at_bound(static_cast<std::size_t>(n), 0);
    const double target = std::log2(static_cast<double>(k));

    parallel_blocks(static_cast<std::size_t>(n), workers, [&](std::size_t begin, std::size_t end) {
        std::vector<Eigen::Index> order(static_cast<std::size_t>(n - 1));
        for (std::size_t i = begin; i < end; ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            std::size_t pos = 0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j != row) order[pos++] = j;
            }
            std::partial_sort(order.begin(), order.begin() + k, order.end(),
                              [&](Eigen::Index x, Eigen::Index y) {
                                  const double dx = dist.values(row, x);
                                  const double dy = dist.values(row, y);
                                  return dx < dy || (dx == dy && x < y);
                              });
            auto& nbrs = graph.neighbors[i];
            nbrs.assign(order.begin(), order.begin() + k);
            std::vector<double> distances;
            distances.reserve(static_cast<std::size_t>(k));
            for (auto j : nbrs) distances.push_back(dist.values(row, j));
            const double rho = distances.front() * distances.front();
            const Bandwidth bw = search_bandwidth(distances, rho, target);
            graph.rho[row] = rho;
            graph.sigma[row] = bw.sigma;
            at_bound[i] = bw.at_bound ? 1 : 0;
            auto& memberships = directed[i];
            memberships.reserve(distances.size());
            for (double d : distances) memberships.push_back(directed_membership(d, rho, bw.sigma));
        }
    });

    for (Eigen::Index i = 0; i < n; ++i) {
        if (at_bound[static_cast<std::size_t>(i)]) graph.sigma_at_bound.push_back(i);
    }
    if (!graph.sigma_at_bound.empty()) {
        spdlog::debug("bandwidth search hit its bracket for {} of {} points",
                      graph.sigma_at_bound.size(), n);
    }

    // Merge both directions of every pair with the sum t-conorm; a missing
    // direction contributes 0.
    struct Directed {
        Eigen::Index lo, hi;
        double weight;
    };
    std::vector<Directed> entries;
    entries.reserve(static_cast<std::size_t>(n * k));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& nbrs = graph.neighbors[static_cast<std::size_t>(i)];
        const auto& mem = directed[static_cast<std::size_t>(i)];
        for (std::size_t m = 0; m < nbrs.size(); ++m) {
            entries.push_back({std::min(i, nbrs[m]), std::max(i, nbrs[m]), mem[m]});
        }
    }
    std::stable_sort(entries.begin(), entries.end(), [](const Directed& x, const Directed& y) {
        return x.lo < y.lo || (x.lo == y.lo && x.hi < y.hi);
    });
    for (std::size_t e = 0; e < entries.size();) {
        double weight = entries[e].weight;
        std::size_t next = e + 1;
        if (next < entries.size() && entries[next].lo == entries[e].lo &&
            entries[next].hi == entries[e].hi) {
            weight = fuzzy_union(weight, entries[next].weight);
            ++next;
        }
        if (weight > 0.0) graph.edges.push_back({entries[e].lo, entries[e].hi, std::min(weight, 1.0)});
        e = next;
    }
    return graph;
}

namespace {

constexpr int fit_samples = 300;

struct CurveSamples {
    std::vector<double> t;
    std::vector<double> target;
};

CurveSamples target_curve(double min_dist, double spread) {
    CurveSamples c;
    const double end = 3.0 * spread;
    for (int s = 0; s < fit_samples; ++s) {
        const double t = end * static_cast<double>(s) / static_cast<double>(fit_samples - 1);
        c.t.push_back(t);
        c.target.push_back(t <= min_dist ? 1.0 : std::exp(-(t - min_dist) / spread));
    }
    return c;
}

double curve(double t, double a, double b) {
    return 1.0 / (1.0 + a * std::pow(t, 2.0 * b));
}

double fit_cost(const CurveSamples& c, double a, double b) {
    double cost = 0.0;
    for (std::size_t s = 0; s < c.t.size(); ++s) {
        const double r = curve(c.t[s], a, b) - c.target[s];
        cost += r * r;
    }
    return cost;
}

}  // namespace

double fit_ab_rmse(double min_dist, double spread, double a, double b) {
    const CurveSamples c = target_curve(min_dist, spread);
    return std::sqrt(fit_cost(c, a, b) / static_cast<double>(c.t.size()));
}

std::pair<double, double> fit_ab(double min_dist, double spread, bool fix_b) {
    if (!(min_dist > 0.0) || !(spread > min_dist)) {
        throw ParameterError("fit_ab requires 0 < min_dist < spread");
    }
    const CurveSamples c = target_curve(min_dist, spread);
    const int params = fix_b ? 1 : 2;
    double a = 1.0;
    double b = 1.0;
    double cost = fit_cost(c, a, b);
    double damping = 1e-3;

    // Levenberg-Marquardt with Marquardt's diagonal scaling.
    for (int iteration = 0; iteration < 1000; ++iteration) {
        Eigen::Matrix2d jtj = Eigen::Matrix2d::Zero();
        Eigen::Vector2d jtr = Eigen::Vector2d::Zero();
        for (std::size_t s = 0; s < c.t.size(); ++s) {
            const double t = c.t[s];
            const double tp = std::pow(t, 2.0 * b);
            const double denom = 1.0 + a * tp;
            const double r = 1.0 / denom - c.target[s];
            Eigen::Vector2d g;
            g[0] = -tp / (denom * denom);
            g[1] = t > 0.0 ? -a * tp * 2.0 * std::log(t) / (denom * denom) : 0.0;
            if (fix_b) g[1] = 0.0;
            jtj += g * g.transpose();
            jtr += g * r;
        }
        if (jtr.head(params).norm() < 1e-14) return {a, b};

        bool accepted = false;
        for (int attempt = 0; attempt < 60 && !accepted; ++attempt) {
            Eigen::Matrix2d lhs = jtj;
            for (int p = 0; p < params; ++p) lhs(p, p) += damping * std::max(jtj(p, p), 1e-12);
            Eigen::Vector2d step = Eigen::Vector2d::Zero();
            if (fix_b) step[0] = -jtr[0] / lhs(0, 0);
            else step = lhs.ldlt().solve(-jtr);
            const double na = a + step[0];
            const double nb = b + step[1];
            if (na > 0.0 && nb > 0.0) {
                const double new_cost = fit_cost(c, na, nb);
                if (new_cost <= cost) {
                    const bool converged = std::abs(step[0]) <= 1e-12 * (1.0 + a) &&
                                           std::abs(step[1]) <= 1e-12 * (1.0 + b);
                    const bool stalled = cost - new_cost <= 1e-16 * (1.0 + cost);
                    a = na;
                    b = nb;
                    cost = new_cost;
                    damping = std::max(damping / 3.0, 1e-12);
                    accepted = true;
                    if (converged || stalled) return {a, b};
                    continue;
                }
            }
            damping *= 2.0;
        }
        if (!accepted) return {a, b};  // no descent direction left: local minimum
    }
    throw FitError("fit_ab did not converge within 1000 iterations");
}

double low_dim_membership(const Point2& ri, const Point2& rj, double a, double b) {
    const double s = (ri - rj).squaredNorm();
    return 1.0 / (1.0 + a * std::pow(s, b));
}

double edge_cross_entropy(const Point2& ri, const Point2& rj, double v, double a, double b) {
    const double s = (ri - rj).squaredNorm();
    const double as = a * std::pow(s, b);
    // log w = -log(1 + a s^b), log(1 - w) = log(a s^b) - log(1 + a s^b)
    const double log_w = -std::log1p(as);
    double ce = -v * log_w;
    if (v < 1.0) ce -= (1.0 - v) * (std::log(as) + log_w);
    return ce;
}

Point2 edge_gradient(const Point2& ri, const Point2& rj, double v, double a, double b) {
    const Point2 diff = ri - rj;
    const double s = diff.squaredNorm();
    if (s == 0.0) return Point2::Zero();
    const double sb = std::pow(s, b);
    const double denom = 1.0 + a * sb;
    const double attract = v * 2.0 * a * b * sb / s / denom;
    const double repel = (1.0 - v) * 2.0 * b / (s * denom);
    return (attract - repel) * diff;
}

Matrix random_initialization(Eigen::Index n, std::uint64_t seed) {
    Rng rng(seed);
    Matrix init(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        init(i, 0) = 10.0 * rng.normal();
        init(i, 1) = 10.0 * rng.normal();
    }
    return init;
}

EmbeddingModel optimize(const FuzzyGraph& graph, double a, double b, int epochs,
                        std::uint64_t seed, int negative_samples) {
    return optimize_from(graph, random_initialization(graph.size(), seed), a, b, epochs, seed,
                         negative_samples);
}

namespace {

constexpr double gradient_clip = 4.0;

double clip(double v) { return std::clamp(v, -gradient_clip, gradient_clip); }

}  // namespace

EmbeddingModel optimize_from(const FuzzyGraph& graph, Matrix init, double a, double b, int epochs,
                             std::uint64_t seed, int negative_samples) {
    const Eigen::Index n = graph.size();
    if (n < 1 || graph.edges.empty()) throw ParameterError("cannot optimise an empty graph");
    if (!(a > 0.0) || !(b > 0.0)) throw ParameterError("a and b must be positive");
    if (epochs < 0 || negative_samples < 0) throw ParameterError("epochs and negative samples must be >= 0");
    if (init.rows() != n || init.cols() != 2) throw DimensionError("initial coordinates must be n x 2");

    EmbeddingModel model{std::move(init), a, b, graph, seed};
    Matrix& y = model.coords;

    double max_weight = 0.0;
    for (const auto& e : graph.edges) max_weight = std::max(max_weight, e.weight);
    std::vector<double> period(graph.edges.size());
    std::vector<double> next_sample(graph.edges.size());
    for (std::size_t e = 0; e < graph.edges.size(); ++e) {
        period[e] = max_weight / graph.edges[e].weight;
        next_sample[e] = period[e];
    }

    // Negative sampling draws from a stream separate from the initialisation.
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const double alpha = 1.0 - static_cast<double>(epoch) / static_cast<double>(epochs);
        for (std::size_t e = 0; e < graph.edges.size(); ++e) {
            if (next_sample[e] > static_cast<double>(epoch + 1)) continue;
            const auto& edge = graph.edges[e];
            const Eigen::Index ends[2][2] = {{edge.i, edge.j}, {edge.j, edge.i}};
            for (const auto& [head, tail] : ends) {
                Eigen::Vector2d diff = (y.row(head) - y.row(tail)).transpose();
                double s = diff.squaredNorm();
                if (s > 0.0) {
                    const double coeff = -2.0 * a * b * std::pow(s, b - 1.0) / (1.0 + a * std::pow(s, b));
                    for (int d = 0; d < 2; ++d) {
                        const double step = alpha * clip(coeff * diff[d]);
                        y(head, d) += step;
                        y(tail, d) -= step;
                    }
                }
                for (int m = 0; m < negative_samples; ++m) {
                    const auto other = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
                    if (other == head || other == tail) continue;
                    diff = (y.row(head) - y.row(other)).transpose();
                    s = diff.squaredNorm();
                    const double coeff = 2.0 * b / ((0.001 + s) * (1.0 + a * std::pow(s, b)));
                    for (int d = 0; d < 2; ++d) {
                        const double g = s > 0.0 ? clip(coeff * diff[d]) : gradient_clip;
                        y(head, d) += alpha * g;
                    }
                }
            }
            next_sample[e] += period[e];
        }
    }
    if (!y.allFinite()) throw DivergenceError("embedding produced non-finite coordinates");
    return model;
}

EmbeddingModel project(const DistanceMatrix& dist, const UmapParams& params, int workers) {
    const FuzzyGraph graph = calibrate(dist, params.k, workers);
    const auto [a, b] = fit_ab(params.min_dist, params.spread);
    return optimize(graph, a, b, params.epochs, params.seed, params.negative_samples);
}

EmbeddingModel project(const Matrix& points, const Classifier& f, const FisherMetricConfig& metric,
                       const UmapParams& params, int workers) {
    return project(distance_matrix(points, f, metric, workers), params, workers);
}

json to_json(const EmbeddingModel& model) {
    json coords = json::array();
    for (Eigen::Index i = 0; i < model.coords.rows(); ++i) {
        coords.push_back({model.coords(i, 0), model.coords(i, 1)});
    }
    return {{"coords", coords},
            {"a", model.a},
            {"b", model.b},
            {"seed", model.seed},
            {"k", model.graph.k}};
}

}  // namespace deepview
