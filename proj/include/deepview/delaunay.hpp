#pragma once

#include "deepview/inverse_map.hpp"
#include "deepview/types.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace deepview {

/// Sign of the signed area of (a, b, c): +1 counter-clockwise, -1 clockwise,
/// 0 collinear. Exact for all finite double inputs.
int orientation(const Point2& a, const Point2& b, const Point2& c);

/// +1 if d lies strictly inside the circumcircle of the counter-clockwise
/// triangle (a, b, c), -1 if strictly outside, 0 if cocircular. Exact.
int in_circle(const Point2& a, const Point2& b, const Point2& c, const Point2& d);

/// Lloyd iterations from a seeded k-means++ start. Runs until 100 iterations
/// or until no centre moves by more than 1e-9. A centre left without points is
/// moved onto the point farthest from its own centre. Returns n_s x 2.
Matrix kmeans2d(const Matrix& points, int n_s, std::uint64_t seed);

/// Within-cluster sum of squared distances of `points` to their nearest centre.
double kmeans_sse(const Matrix& points, const Matrix& centers);

/// Corners of [min - eps, max + eps] per axis, counter-clockwise from the
/// lower left. Returns 4 x 2.
Matrix border(const Matrix& points, double epsilon);

struct Triangulation {
    Matrix vertices;  // m x 2
    /// Counter-clockwise vertex triples.
    std::vector<std::array<int, 3>> simplices;
    /// adjacent[s][k] is the simplex sharing the edge opposite vertex k, or -1.
    std::vector<std::array<int, 3>> adjacent;
    /// Composed neighbourhood of every simplex (filled by `build`).
    std::vector<std::vector<Eigen::Index>> neighbor_sets;
    /// The n_k data points nearest to every vertex, closest first (filled by
    /// `build`).
    std::vector<std::vector<Eigen::Index>> vertex_neighbors;
    /// Distinguishes triangulations for the per-thread walk cursor.
    std::uint64_t serial = 0;
};

/// Bowyer-Watson insertion in lexicographic vertex order. Cocircular vertices
/// never invalidate an existing triangle, so ties resolve by insertion order.
/// Duplicate vertices are ignored. Throws DegenerateGeometryError if all
/// vertices are collinear or fewer than three are distinct.
Triangulation triangulate(const Matrix& vertices);

/// Round-robin over the rows of `sorted_neighbors`: take the next unused index
/// of the current row, skipping indices already taken, then move to the next
/// row. Rows that run out are passed over. Throws NeighborhoodExhaustedError
/// when fewer than n_k distinct indices exist.
std::vector<Eigen::Index> compose_neighbors(const std::vector<std::vector<Eigen::Index>>& sorted_neighbors,
                                            int n_k);

struct DelaunayParams {
    /// Number of k-means landmarks; 0 selects max(8, n / 20) capped at n.
    int n_s = 0;
    /// Anchors per neighbourhood; capped at n.
    int n_k = 30;
    /// Border margin; <= 0 selects 5% of the bounding-box diagonal.
    double epsilon = 0.0;
    std::uint64_t seed = 0;
};

/// Landmarks plus border corners, triangulated, with a composed neighbourhood
/// of data indices for every simplex.
Triangulation build(const Matrix& points, const DelaunayParams& params);

inline constexpr int outside = -1;

/// Walks from the simplex this thread located last. Points on a shared edge or
/// vertex resolve to the lowest containing simplex index; points outside the
/// convex hull return `outside`.
int locate(const Triangulation& tri, const Point2& y);

/// Barycentric coordinates of y in simplex s; entry k belongs to vertex k.
Eigen::Vector3d barycentric(const Triangulation& tri, int s, const Point2& y);

/// Inverse projection using only the located simplex's composed neighbourhood.
/// Falls back to global evaluation outside the triangulation.
Vector evaluate_restricted(const InverseMapModel& model, const Triangulation& tri, const Point2& y);

/// Continuous local inverse projection: the barycentric blend of the
/// restricted evaluations over each vertex's nearest anchors. Falls back to
/// global evaluation outside the triangulation.
Vector evaluate_smoothed(const InverseMapModel& model, const Triangulation& tri, const Point2& y);

nlohmann::json to_json(const Triangulation& tri);

}  // namespace deepview
