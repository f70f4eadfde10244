#include "deepview/delaunay.hpp"

#include "deepview/errors.hpp"
#include "deepview/rng.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_set>

namespace deepview {

using nlohmann::json;
using Rational = boost::multiprecision::cpp_rational;

namespace {

constexpr double eps = std::numeric_limits<double>::epsilon() / 2.0;
constexpr double orient_bound = (3.0 + 16.0 * eps) * eps;
constexpr double incircle_bound = (10.0 + 96.0 * eps) * eps;

int sign_of(const Rational& r) { return r.sign(); }

}  // namespace

int orientation(const Point2& a, const Point2& b, const Point2& c) {
    const double left = (a.x() - c.x()) * (b.y() - c.y());
    const double right = (a.y() - c.y()) * (b.x() - c.x());
    const double det = left - right;
    const double bound = orient_bound * (std::abs(left) + std::abs(right));
    if (det > bound) return 1;
    if (-det > bound) return -1;
    const Rational ax(a.x()), ay(a.y()), bx(b.x()), by(b.y()), cx(c.x()), cy(c.y());
    return sign_of((ax - cx) * (by - cy) - (ay - cy) * (bx - cx));
}

int in_circle(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
    const double adx = a.x() - d.x(), ady = a.y() - d.y();
    const double bdx = b.x() - d.x(), bdy = b.y() - d.y();
    const double cdx = c.x() - d.x(), cdy = c.y() - d.y();
    const double bc1 = bdx * cdy, bc2 = cdx * bdy;
    const double ca1 = cdx * ady, ca2 = adx * cdy;
    const double ab1 = adx * bdy, ab2 = bdx * ady;
    const double alift = adx * adx + ady * ady;
    const double blift = bdx * bdx + bdy * bdy;
    const double clift = cdx * cdx + cdy * cdy;
    const double det = alift * (bc1 - bc2) + blift * (ca1 - ca2) + clift * (ab1 - ab2);
    const double permanent = (std::abs(bc1) + std::abs(bc2)) * alift +
                             (std::abs(ca1) + std::abs(ca2)) * blift +
                             (std::abs(ab1) + std::abs(ab2)) * clift;
    const double bound = incircle_bound * permanent;
    if (det > bound) return 1;
    if (-det > bound) return -1;

    const Rational rdx(d.x()), rdy(d.y());
    const Rational rax = Rational(a.x()) - rdx, ray = Rational(a.y()) - rdy;
    const Rational rbx = Rational(b.x()) - rdx, rby = Rational(b.y()) - rdy;
    const Rational rcx = Rational(c.x()) - rdx, rcy = Rational(c.y()) - rdy;
    const Rational exact = (rax * rax + ray * ray) * (rbx * rcy - rcx * rby) +
                           (rbx * rbx + rby * rby) * (rcx * ray - rax * rcy) +
                           (rcx * rcx + rcy * rcy) * (rax * rby - rbx * ray);
    return sign_of(exact);
}

namespace {

double squared_distance(const Matrix& points, Eigen::Index i, const Matrix& centers, Eigen::Index c) {
    const double dx = points(i, 0) - centers(c, 0);
    const double dy = points(i, 1) - centers(c, 1);
    return dx * dx + dy * dy;
}

Eigen::Index nearest_center(const Matrix& points, Eigen::Index i, const Matrix& centers) {
    Eigen::Index best = 0;
    double best_d = squared_distance(points, i, centers, 0);
    for (Eigen::Index c = 1; c < centers.rows(); ++c) {
        const double d = squared_distance(points, i, centers, c);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

void check_planar(const Matrix& points) {
    if (points.cols() != 2) throw DimensionError("expected n x 2 coordinates");
    if (points.rows() < 1) throw ParameterError("no points given");
    if (!points.allFinite()) throw ParameterError("coordinates must be finite");
}

}  // namespace

Matrix kmeans2d(const Matrix& points, int n_s, std::uint64_t seed) {
    check_planar(points);
    const Eigen::Index n = points.rows();
    if (n_s < 1 || n_s > n) throw ParameterError("n_s must lie in [1, n]");

    // k-means++ seeding.
    Rng rng(seed);
    Matrix centers(n_s, 2);
    centers.row(0) = points.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
    std::vector<double> d2(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = squared_distance(points, i, centers, 0);
    for (int c = 1; c < n_s; ++c) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        // Sample proportionally to D^2; already chosen points have weight 0.
        // With every weight 0 (duplicates only) fall back to the first point.
        const double target = rng.uniform() * total;
        Eigen::Index pick = 0;
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double w = d2[static_cast<std::size_t>(i)];
            if (w <= 0.0) continue;
            acc += w;
            pick = i;
            if (acc > target) break;
        }
        centers.row(c) = points.row(pick);
        for (Eigen::Index i = 0; i < n; ++i) {
            d2[static_cast<std::size_t>(i)] =
                std::min(d2[static_cast<std::size_t>(i)], squared_distance(points, i, centers, c));
        }
    }

    std::vector<Eigen::Index> assignment(static_cast<std::size_t>(n));
    for (int iter = 0; iter < 100; ++iter) {
        for (Eigen::Index i = 0; i < n; ++i) assignment[static_cast<std::size_t>(i)] = nearest_center(points, i, centers);

        Matrix sums = Matrix::Zero(n_s, 2);
        std::vector<Eigen::Index> counts(static_cast<std::size_t>(n_s), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assignment[static_cast<std::size_t>(i)]) += points.row(i);
            ++counts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])];
        }
        Matrix next = centers;
        std::vector<bool> taken(static_cast<std::size_t>(n), false);
        for (int c = 0; c < n_s; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                next.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
                continue;
            }
            // Empty cluster: reseed at the point farthest from its own centre.
            Eigen::Index far = -1;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (taken[static_cast<std::size_t>(i)]) continue;
                const double d = squared_distance(points, i, centers, assignment[static_cast<std::size_t>(i)]);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            taken[static_cast<std::size_t>(far)] = true;
            next.row(c) = points.row(far);
        }
        const double movement = (next - centers).rowwise().norm().maxCoeff();
        centers = next;
        if (movement < 1e-9) break;
    }
    return centers;
}

double kmeans_sse(const Matrix& points, const Matrix& centers) {
    double sse = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        sse += squared_distance(points, i, centers, nearest_center(points, i, centers));
    }
    return sse;
}

Matrix border(const Matrix& points, double epsilon) {
    check_planar(points);
    if (!(epsilon > 0.0)) throw ParameterError("border epsilon must be > 0");
    const double x0 = points.col(0).minCoeff() - epsilon, x1 = points.col(0).maxCoeff() + epsilon;
    const double y0 = points.col(1).minCoeff() - epsilon, y1 = points.col(1).maxCoeff() + epsilon;
    Matrix corners(4, 2);
    corners << x0, y0, x1, y0, x1, y1, x0, y1;
    return corners;
}

namespace {

constexpr int infinite = -1;

// A triangle whose third vertex may be the point at infinity. Ghost triangles
// (a, b, infinite) sit on hull edges with the exterior to the left of a -> b.
struct Cell {
    std::array<int, 3> v;
    bool alive = true;
    bool ghost() const { return v[2] == infinite; }
};

Point2 vertex(const Matrix& m, int i) { return m.row(i).transpose(); }

bool strictly_between(const Point2& a, const Point2& b, const Point2& p) {
    // p is known to be collinear with a and b.
    if (a.x() != b.x()) return std::min(a.x(), b.x()) < p.x() && p.x() < std::max(a.x(), b.x());
    return std::min(a.y(), b.y()) < p.y() && p.y() < std::max(a.y(), b.y());
}

bool conflicts(const Matrix& vs, const Cell& cell, const Point2& p) {
    const Point2 a = vertex(vs, cell.v[0]);
    const Point2 b = vertex(vs, cell.v[1]);
    if (cell.ghost()) {
        const int o = orientation(a, b, p);
        return o > 0 || (o == 0 && strictly_between(a, b, p));
    }
    return in_circle(a, b, vertex(vs, cell.v[2]), p) > 0;
}

std::uint64_t next_serial() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
}

void link_adjacency(Triangulation& tri) {
    std::map<std::pair<int, int>, std::pair<int, int>> edges;
    tri.adjacent.assign(tri.simplices.size(), {-1, -1, -1});
    for (std::size_t s = 0; s < tri.simplices.size(); ++s) {
        const auto& t = tri.simplices[s];
        for (int k = 0; k < 3; ++k) {
            const int u = t[static_cast<std::size_t>((k + 1) % 3)];
            const int w = t[static_cast<std::size_t>((k + 2) % 3)];
            const auto twin = edges.find({w, u});
            if (twin != edges.end()) {
                const auto [other, other_k] = twin->second;
                tri.adjacent[s][static_cast<std::size_t>(k)] = other;
                tri.adjacent[static_cast<std::size_t>(other)][static_cast<std::size_t>(other_k)] =
                    static_cast<int>(s);
            } else {
                edges[{u, w}] = {static_cast<int>(s), k};
            }
        }
    }
}

}  // namespace

Triangulation triangulate(const Matrix& vertices) {
    check_planar(vertices);
    const int m = static_cast<int>(vertices.rows());
    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int i, int j) {
        if (vertices(i, 0) != vertices(j, 0)) return vertices(i, 0) < vertices(j, 0);
        if (vertices(i, 1) != vertices(j, 1)) return vertices(i, 1) < vertices(j, 1);
        return i < j;
    });
    std::vector<int> distinct;
    for (const int i : order) {
        if (!distinct.empty() && vertices(i, 0) == vertices(distinct.back(), 0) &&
            vertices(i, 1) == vertices(distinct.back(), 1)) {
            continue;
        }
        distinct.push_back(i);
    }
    if (distinct.size() < 3) throw DegenerateGeometryError("triangulation needs three distinct vertices");

    const Point2 p0 = vertex(vertices, distinct[0]);
    const Point2 p1 = vertex(vertices, distinct[1]);
    std::size_t third = 2;
    while (third < distinct.size() && orientation(p0, p1, vertex(vertices, distinct[third])) == 0) ++third;
    if (third == distinct.size()) throw DegenerateGeometryError("all vertices are collinear");

    std::vector<Cell> cells;
    {
        int a = distinct[0], b = distinct[1], c = distinct[third];
        if (orientation(p0, p1, vertex(vertices, c)) < 0) std::swap(a, b);
        cells.push_back({{a, b, c}});
        cells.push_back({{b, a, infinite}});
        cells.push_back({{c, b, infinite}});
        cells.push_back({{a, c, infinite}});
    }

    std::vector<int> pending;
    for (std::size_t k = 2; k < distinct.size(); ++k) {
        if (k != third) pending.push_back(distinct[k]);
    }
    std::vector<std::size_t> conflict;
    for (const int vi : pending) {
        const Point2 p = vertex(vertices, vi);
        conflict.clear();
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (cells[c].alive && conflicts(vertices, cells[c], p)) conflict.push_back(c);
        }
        // Cavity boundary: directed edges of conflicting cells whose twin is
        // not itself inside the cavity.
        std::map<std::pair<int, int>, int> directed;
        for (const std::size_t c : conflict) {
            const auto& v = cells[c].v;
            for (int k = 0; k < 3; ++k) ++directed[{v[static_cast<std::size_t>(k)], v[static_cast<std::size_t>((k + 1) % 3)]}];
        }
        for (const std::size_t c : conflict) cells[c].alive = false;
        for (const auto& [edge, count] : directed) {
            (void)count;
            if (directed.count({edge.second, edge.first})) continue;
            const auto [u, w] = edge;
            if (u == infinite) cells.push_back({{w, vi, infinite}});
            else if (w == infinite) cells.push_back({{vi, u, infinite}});
            else cells.push_back({{u, w, vi}});
        }
        std::erase_if(cells, [](const Cell& c) { return !c.alive; });
    }

    Triangulation tri;
    tri.vertices = vertices;
    for (const Cell& c : cells) {
        if (!c.ghost()) tri.simplices.push_back(c.v);
    }
    // Canonical order: rotate each triple to start at its smallest vertex, then sort.
    for (auto& t : tri.simplices) {
        std::rotate(t.begin(), std::min_element(t.begin(), t.end()), t.end());
    }
    std::sort(tri.simplices.begin(), tri.simplices.end());
    link_adjacency(tri);
    tri.serial = next_serial();
    return tri;
}

std::vector<Eigen::Index> compose_neighbors(const std::vector<std::vector<Eigen::Index>>& sorted_neighbors,
                                            int n_k) {
    if (n_k < 1) throw ParameterError("n_k must be >= 1");
    const std::size_t rows = sorted_neighbors.size();
    if (rows == 0) throw NeighborhoodExhaustedError("no neighbour rows given");
    std::vector<std::size_t> cursor(rows, 0);
    std::unordered_set<Eigen::Index> taken;
    std::vector<Eigen::Index> out;
    out.reserve(static_cast<std::size_t>(n_k));
    std::size_t row = 0;
    std::size_t exhausted = 0;
    while (out.size() < static_cast<std::size_t>(n_k)) {
        const auto& r = sorted_neighbors[row];
        if (cursor[row] >= r.size()) {
            if (++exhausted >= rows) {
                throw NeighborhoodExhaustedError("only " + std::to_string(out.size()) +
                                                 " distinct neighbours available, need " +
                                                 std::to_string(n_k));
            }
            row = (row + 1) % rows;
            continue;
        }
        exhausted = 0;
        const Eigen::Index candidate = r[cursor[row]++];
        if (taken.insert(candidate).second) {
            out.push_back(candidate);
            row = (row + 1) % rows;
        }
    }
    return out;
}

namespace {

std::vector<Eigen::Index> nearest_points(const Matrix& points, const Point2& v, int count) {
    std::vector<std::pair<double, Eigen::Index>> d;
    d.reserve(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        d.emplace_back((points.row(i).transpose() - v).squaredNorm(), i);
    }
    std::partial_sort(d.begin(), d.begin() + count, d.end());
    std::vector<Eigen::Index> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) out.push_back(d[static_cast<std::size_t>(k)].second);
    return out;
}

}  // namespace

Triangulation build(const Matrix& points, const DelaunayParams& params) {
    check_planar(points);
    const auto n = static_cast<int>(points.rows());
    const int n_s = params.n_s > 0 ? std::min(params.n_s, n) : std::min(n, std::max(8, n / 20));
    const int n_k = std::min(params.n_k, n);
    if (n_k < 1) throw ParameterError("n_k must be >= 1");
    double epsilon = params.epsilon;
    if (!(epsilon > 0.0)) {
        const Point2 extent = points.colwise().maxCoeff() - points.colwise().minCoeff();
        epsilon = 0.05 * extent.norm();
        if (!(epsilon > 0.0)) epsilon = 1.0;
    }

    const Matrix centers = kmeans2d(points, n_s, params.seed);
    const Matrix corners = border(points, epsilon);
    Matrix vs(centers.rows() + 4, 2);
    vs << centers, corners;

    Triangulation tri = triangulate(vs);
    tri.vertex_neighbors.resize(static_cast<std::size_t>(vs.rows()));
    for (Eigen::Index v = 0; v < vs.rows(); ++v) {
        tri.vertex_neighbors[static_cast<std::size_t>(v)] = nearest_points(points, vs.row(v).transpose(), n_k);
    }
    tri.neighbor_sets.reserve(tri.simplices.size());
    for (const auto& s : tri.simplices) {
        tri.neighbor_sets.push_back(compose_neighbors({tri.vertex_neighbors[static_cast<std::size_t>(s[0])],
                                                       tri.vertex_neighbors[static_cast<std::size_t>(s[1])],
                                                       tri.vertex_neighbors[static_cast<std::size_t>(s[2])]},
                                                      n_k));
    }
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        if (locate(tri, points.row(i).transpose()) == outside) {
            throw DegenerateGeometryError("a data point is not covered by the triangulation");
        }
    }
    return tri;
}

namespace {

// Smallest of the orientations of y against the three edges; edge k is
// opposite vertex k.
std::array<int, 3> edge_sides(const Triangulation& tri, int s, const Point2& y) {
    const auto& t = tri.simplices[static_cast<std::size_t>(s)];
    std::array<int, 3> sides{};
    for (int k = 0; k < 3; ++k) {
        sides[static_cast<std::size_t>(k)] =
            orientation(vertex(tri.vertices, t[static_cast<std::size_t>((k + 1) % 3)]),
                        vertex(tri.vertices, t[static_cast<std::size_t>((k + 2) % 3)]), y);
    }
    return sides;
}

int lowest_containing(const Triangulation& tri, const Point2& y) {
    for (std::size_t s = 0; s < tri.simplices.size(); ++s) {
        const auto sides = edge_sides(tri, static_cast<int>(s), y);
        if (sides[0] >= 0 && sides[1] >= 0 && sides[2] >= 0) return static_cast<int>(s);
    }
    return outside;
}

struct WalkCursor {
    std::uint64_t serial = 0;
    int simplex = 0;
};

thread_local WalkCursor walk_cursor;

}  // namespace

int locate(const Triangulation& tri, const Point2& y) {
    if (tri.simplices.empty() || !y.allFinite()) return outside;
    int s = walk_cursor.serial == tri.serial ? walk_cursor.simplex : 0;
    if (s < 0 || s >= static_cast<int>(tri.simplices.size())) s = 0;

    const std::size_t max_steps = 4 * tri.simplices.size() + 8;
    for (std::size_t step = 0; step < max_steps; ++step) {
        const auto sides = edge_sides(tri, s, y);
        int next = -2;
        for (int k = 0; k < 3; ++k) {
            if (sides[static_cast<std::size_t>(k)] < 0) {
                next = tri.adjacent[static_cast<std::size_t>(s)][static_cast<std::size_t>(k)];
                break;
            }
        }
        if (next == -1) return outside;
        if (next >= 0) {
            s = next;
            continue;
        }
        if (sides[0] == 0 || sides[1] == 0 || sides[2] == 0) s = lowest_containing(tri, y);
        walk_cursor = {tri.serial, s};
        return s;
    }
    s = lowest_containing(tri, y);
    if (s != outside) walk_cursor = {tri.serial, s};
    return s;
}

Eigen::Vector3d barycentric(const Triangulation& tri, int s, const Point2& y) {
    const auto& t = tri.simplices[static_cast<std::size_t>(s)];
    const Point2 a = vertex(tri.vertices, t[0]);
    const Point2 b = vertex(tri.vertices, t[1]);
    const Point2 c = vertex(tri.vertices, t[2]);
    const double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
    Eigen::Vector3d l;
    l[0] = ((b.x() - y.x()) * (c.y() - y.y()) - (b.y() - y.y()) * (c.x() - y.x())) / area;
    l[1] = ((c.x() - y.x()) * (a.y() - y.y()) - (c.y() - y.y()) * (a.x() - y.x())) / area;
    l[2] = 1.0 - l[0] - l[1];
    return l;
}

Vector evaluate_restricted(const InverseMapModel& model, const Triangulation& tri, const Point2& y) {
    const int s = locate(tri, y);
    if (s == outside || tri.neighbor_sets.empty()) return evaluate(model, y);
    return evaluate_subset(model, y, tri.neighbor_sets[static_cast<std::size_t>(s)]);
}

Vector evaluate_smoothed(const InverseMapModel& model, const Triangulation& tri, const Point2& y) {
    const int s = locate(tri, y);
    if (s == outside || tri.vertex_neighbors.empty()) return evaluate(model, y);
    Eigen::Vector3d l = barycentric(tri, s, y).cwiseMax(0.0);
    l /= l.sum();
    const auto& t = tri.simplices[static_cast<std::size_t>(s)];
    Vector x = Vector::Zero(model.dim());
    for (int k = 0; k < 3; ++k) {
        if (l[k] == 0.0) continue;
        x += l[k] * evaluate_subset(model, y, tri.vertex_neighbors[static_cast<std::size_t>(t[static_cast<std::size_t>(k)])]);
    }
    return x;
}

json to_json(const Triangulation& tri) {
    json vertices = json::array();
    for (Eigen::Index i = 0; i < tri.vertices.rows(); ++i) vertices.push_back({tri.vertices(i, 0), tri.vertices(i, 1)});
    json neighbor_sets = json::array();
    for (const auto& set : tri.neighbor_sets) neighbor_sets.push_back(set);
    return {{"vertices", vertices}, {"simplices", tri.simplices}, {"neighbor_sets", neighbor_sets}};
}

}  // namespace deepview
