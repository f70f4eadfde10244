#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance runner. None of this calls into the library beyond data types
// and classifier prediction.

#include "support.hpp"

#include "deepview/classifier.hpp"
#include "deepview/inverse_map.hpp"
#include "deepview/types.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

namespace oracle {

using namespace deepview;

using Rational = boost::multiprecision::cpp_rational;
using Edge = std::pair<int, int>;
using Tri = std::array<int, 3>;
using Dense = Eigen::MatrixXd;
using LongMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

inline Matrix random_points(Rng& rng, int n, double scale = 10.0) {
    Matrix p(n, 2);
    for (int i = 0; i < n; ++i) p.row(i) << rng.uniform(0, scale), rng.uniform(0, scale);
    return p;
}

inline Point2 row(const Matrix& m, Eigen::Index i) { return m.row(i).transpose(); }

inline Rational orient_exact(const Point2& a, const Point2& b, const Point2& c) {
    return (Rational(b.x()) - a.x()) * (Rational(c.y()) - a.y()) - (Rational(b.y()) - a.y()) * (Rational(c.x()) - a.x());
}

// Positive when d is strictly inside the circumcircle of the ccw triangle abc.
inline Rational incircle_exact(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
    const Rational adx = Rational(a.x()) - d.x(), ady = Rational(a.y()) - d.y();
    const Rational bdx = Rational(b.x()) - d.x(), bdy = Rational(b.y()) - d.y();
    const Rational cdx = Rational(c.x()) - d.x(), cdy = Rational(c.y()) - d.y();
    const Rational ad = adx * adx + ady * ady;
    const Rational bd = bdx * bdx + bdy * bdy;
    const Rational cd = cdx * cdx + cdy * cdy;
    return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

inline long double orient_ld(const Point2& a, const Point2& b, const Point2& c) {
    return (static_cast<long double>(b.x()) - a.x()) * (static_cast<long double>(c.y()) - a.y()) -
           (static_cast<long double>(b.y()) - a.y()) * (static_cast<long double>(c.x()) - a.x());
}

inline long double incircle_ld(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
    const long double adx = a.x() - static_cast<long double>(d.x()), ady = a.y() - static_cast<long double>(d.y());
    const long double bdx = b.x() - static_cast<long double>(d.x()), bdy = b.y() - static_cast<long double>(d.y());
    const long double cdx = c.x() - static_cast<long double>(d.x()), cdy = c.y() - static_cast<long double>(d.y());
    return adx * (bdy * (cdx * cdx + cdy * cdy) - (bdx * bdx + bdy * bdy) * cdy) -
           ady * (bdx * (cdx * cdx + cdy * cdy) - (bdx * bdx + bdy * bdy) * cdx) +
           (adx * adx + ady * ady) * (bdx * cdy - bdy * cdx);
}

inline std::set<Edge> edges_of(const std::vector<Tri>& tris) {
    std::set<Edge> edges;
    for (const auto& t : tris) {
        for (int k = 0; k < 3; ++k) {
            const int a = t[static_cast<std::size_t>(k)];
            const int b = t[static_cast<std::size_t>((k + 1) % 3)];
            edges.insert({std::min(a, b), std::max(a, b)});
        }
    }
    return edges;
}

// Sweep triangulation in x order followed by Lawson edge flips.
inline std::vector<Tri> lawson_oracle(const Matrix& pts) {
    const int n = static_cast<int>(pts.rows());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return std::pair(pts(a, 0), pts(a, 1)) < std::pair(pts(b, 0), pts(b, 1));
    });
    std::vector<Tri> tris;
    std::vector<int> hull{order[0], order[1], order[2]};
    if (orient_ld(row(pts, hull[0]), row(pts, hull[1]), row(pts, hull[2])) < 0) std::swap(hull[1], hull[2]);
    tris.push_back({hull[0], hull[1], hull[2]});
    for (std::size_t k = 3; k < order.size(); ++k) {
        const int p = order[k];
        const std::size_t m = hull.size();
        std::vector<bool> visible(m);
        for (std::size_t e = 0; e < m; ++e) {
            const int a = hull[e];
            const int b = hull[(e + 1) % m];
            visible[e] = orient_ld(row(pts, a), row(pts, b), row(pts, p)) < 0;
            if (visible[e]) tris.push_back({a, p, b});
        }
        std::size_t s = 0;
        while (!(visible[s] && !visible[(s + m - 1) % m])) ++s;
        std::size_t t = s;
        while (visible[(t + 1) % m]) t = (t + 1) % m;
        std::vector<int> next;
        for (std::size_t v = (t + 1) % m;; v = (v + 1) % m) {
            next.push_back(hull[v]);
            if (v == s) break;
        }
        next.push_back(p);
        hull = next;
    }
    for (bool flipped = true; flipped;) {
        flipped = false;
        std::map<Edge, std::vector<std::pair<std::size_t, int>>> owners;
        for (std::size_t ti = 0; ti < tris.size(); ++ti) {
            for (int k = 0; k < 3; ++k) {
                const int a = tris[ti][static_cast<std::size_t>((k + 1) % 3)];
                const int b = tris[ti][static_cast<std::size_t>((k + 2) % 3)];
                owners[{std::min(a, b), std::max(a, b)}].push_back({ti, k});
            }
        }
        for (const auto& [edge, list] : owners) {
            if (list.size() != 2) continue;
            const auto [t1, k1] = list[0];
            const auto [t2, k2] = list[1];
            const Tri abc = tris[t1];
            const int c = abc[static_cast<std::size_t>(k1)];
            const int d = tris[t2][static_cast<std::size_t>(k2)];
            const int a = abc[static_cast<std::size_t>((k1 + 1) % 3)];
            const int b = abc[static_cast<std::size_t>((k1 + 2) % 3)];
            if (incircle_ld(row(pts, a), row(pts, b), row(pts, c), row(pts, d)) > 0) {
                tris[t1] = {c, a, d};
                tris[t2] = {d, b, c};
                flipped = true;
                break;
            }
        }
    }
    return tris;
}

// Literal transcription of the composition loop; nullopt when the loop would
// read past the end of a row.
inline std::optional<std::vector<Eigen::Index>> compose_literal(const std::vector<std::vector<Eigen::Index>>& rows, int n_k) {
    const std::size_t n = rows.size();
    std::vector<std::size_t> k(n, 0);
    std::set<Eigen::Index> taken;
    std::vector<Eigen::Index> c;
    std::size_t i = 0;
    int j = 1;
    while (j <= n_k) {
        k[i] += 1;
        if (k[i] > rows[i].size()) return std::nullopt;
        const Eigen::Index candidate = rows[i][k[i] - 1];
        if (!taken.count(candidate)) {
            taken.insert(candidate);
            c.push_back(candidate);
            i = (i + 1) % n;
            j += 1;
        }
    }
    return c;
}

// sqrt(JS) written out directly for an independent path oracle.
inline double js_sqrt_reference(const Vector& p, const Vector& q) {
    double js = 0.0;
    for (Eigen::Index c = 0; c < p.size(); ++c) {
        const double m = 0.5 * (p[c] + q[c]);
        if (p[c] > 0.0) js += 0.5 * p[c] * std::log(p[c] / m);
        if (q[c] > 0.0) js += 0.5 * q[c] * std::log(q[c] / m);
    }
    return std::sqrt(std::max(js, 0.0));
}

inline double dense_path_length(const Vector& x, const Vector& y, const Classifier& f, int n) {
    double total = 0.0;
    Vector previous = f.predict(x);
    for (int i = 1; i <= n; ++i) {
        const Vector current = f.predict(x + (static_cast<double>(i) / n) * (y - x));
        total += js_sqrt_reference(previous, current);
        previous = current;
    }
    return total;
}

inline InverseMapModel random_model(Rng& rng, Eigen::Index n, Eigen::Index dim, double spread = 3.0) {
    InverseMapModel m;
    m.anchors2d = test::random_matrix(rng, n, 2, spread);
    m.theta = test::random_matrix(rng, dim, n);
    m.sigma_hat = Vector::NullaryExpr(n, [&] { return rng.uniform(0.5, 2.0); });
    m.a = rng.uniform(0.5, 2.0);
    m.b = rng.uniform(0.8, 1.2);
    return m;
}

inline Dense random_spd(Rng& rng, Eigen::Index dim) {
    const Dense m = test::random_matrix(rng, dim, dim);
    return m * m.transpose() + 0.1 * Dense::Identity(dim, dim);
}

// Loss along theta - eta * dir, accumulated in long double.
inline long double line_loss(const Dense& theta, const Dense& dir, const Dense& w, const Dense& s,
                      const std::vector<Dense>& metrics, long double eta) {
    const LongMatrix t = theta.cast<long double>() - eta * dir.cast<long double>();
    long double total = 0.0L;
    for (Eigen::Index i = 0; i < w.cols(); ++i) {
        const Eigen::Matrix<long double, Eigen::Dynamic, 1> r =
            t * w.col(i).cast<long double>() - s.col(i).cast<long double>();
        total += 0.5L * r.dot(metrics[static_cast<std::size_t>(i)].cast<long double>() * r);
    }
    return total;
}

inline long double golden_section(const std::function<long double(long double)>& phi) {
    long double lo = 0.0L;
    long double hi = 1e-3L;
    while (phi(hi) < phi(0.5L * hi)) hi *= 2.0L;
    const long double ratio = (std::sqrt(5.0L) - 1.0L) / 2.0L;
    long double x1 = hi - ratio * (hi - lo);
    long double x2 = lo + ratio * (hi - lo);
    long double f1 = phi(x1);
    long double f2 = phi(x2);
    for (int it = 0; it < 200; ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = phi(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = phi(x2);
        }
    }
    return 0.5L * (lo + hi);
}

// Conjugate gradients on sum_i p_i (x - theta_i)^T A (x - theta_i).
inline Vector weighted_minimizer(const Dense& theta, const Vector& p, const Dense& a) {
    const Eigen::Index dim = theta.rows();
    const Dense hessian = 2.0 * p.sum() * a;
    const auto grad = [&](const Vector& x) {
        Vector g = Vector::Zero(dim);
        for (Eigen::Index i = 0; i < theta.cols(); ++i) g += 2.0 * p[i] * (a * (x - theta.col(i)));
        return g;
    };
    Vector x = Vector::Zero(dim);
    Vector r = -grad(x);
    Vector d = r;
    for (int it = 0; it < 4 * dim && r.norm() > 1e-15; ++it) {
        const double alpha = r.squaredNorm() / d.dot(hessian * d);
        x += alpha * d;
        const Vector r_next = -grad(x);
        d = r_next + (r_next.squaredNorm() / r.squaredNorm()) * d;
        r = r_next;
    }
    return x;
}

}  // namespace oracle
