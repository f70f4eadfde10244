#include "support.hpp"

#include "deepview/errors.hpp"
#include "deepview/evaluation.hpp"
#include "deepview/inverse_map.hpp"

#include "doctest.h"

#include <numeric>

using namespace deepview;

namespace {

Matrix two_clusters() {
    Matrix c(12, 2);
    for (int i = 0; i < 6; ++i) {
        c.row(i) << 0.1 * i, 0.05 * (i % 2);
        c.row(6 + i) << 100.0 + 0.1 * i, 0.05 * (i % 3);
    }
    return c;
}

NeuralHandle constant_classifier(int dim) {
    return make_softmax_linear(Matrix::Zero(2, dim), Vector{{0.3, -0.1}});
}

}  // namespace

TEST_CASE("q_knn on separated clusters") {
    std::vector<int> labels(12, 0);
    std::fill(labels.begin() + 6, labels.end(), 1);
    CHECK(q_knn(two_clusters(), labels) == 1.0);
}

TEST_CASE("q_knn of random labels is near one half") {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const Matrix coords = test::random_matrix(rng, 200, 2);
        std::vector<int> labels(200);
        for (auto& l : labels) l = static_cast<int>(rng.below(2));
        total += q_knn(coords, labels);
    }
    CHECK(std::abs(total / 50 - 0.5) <= 0.1);
}

TEST_CASE("q_knn with every point in one place") {
    CHECK(q_knn(Matrix::Zero(10, 2), std::vector<int>(10, 2)) == 1.0);
    CHECK_THROWS_AS(q_knn(Matrix::Zero(5, 2), std::vector<int>(5, 0)), ParameterError);
    CHECK_THROWS_AS(q_knn(Matrix::Zero(8, 2), std::vector<int>(7, 0)), DimensionError);
}

TEST_CASE("q_knn does not depend on the point order") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        // Integer coordinates create many distance ties.
        Matrix coords(40, 2);
        std::vector<int> labels(40);
        for (int i = 0; i < 40; ++i) {
            coords.row(i) << static_cast<double>(rng.below(5)), static_cast<double>(rng.below(5));
            labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(3));
        }
        std::vector<Eigen::Index> perm(40);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        Matrix permuted(40, 2);
        std::vector<int> permuted_labels(40);
        for (std::size_t i = 0; i < 40; ++i) {
            permuted.row(static_cast<Eigen::Index>(i)) = coords.row(perm[i]);
            permuted_labels[i] = labels[static_cast<std::size_t>(perm[i])];
        }
        CHECK(q_knn(coords, labels) == q_knn(permuted, permuted_labels));
    }
}

TEST_CASE("q_knn tie rules") {
    // k = 1 and A = (0,0) is equidistant from B = (1,0) and C = (-1,0); the
    // canonical order puts C first, so A sees C's label and agrees. B and C
    // both see A.
    CHECK(q_knn(Matrix{{0, 0}, {1, 0}, {-1, 0}}, {2, 1, 2}, 1) == doctest::Approx(2.0 / 3.0));
    // With five points and k = 4 every point sees all others. Labels
    // (1, 1, 2, 1, 2): the first two see a 2:2 vote that resolves to 1 and
    // agree, the fourth sees 1,1,2,2 and agrees, the label-2 points see a
    // majority of 1.
    const Matrix ring{{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    CHECK(q_knn(ring, {1, 1, 2, 1, 2}, 4) == doctest::Approx(3.0 / 5.0));
}

TEST_CASE("q_d special cases") {
    const auto& fx = test::blobs_fixture();
    Rng rng(1);
    const Matrix coords = test::random_matrix(rng, fx.data.size(), 2);
    const InverseFn exact = [&](const Point2& y) -> Vector {
        for (Eigen::Index i = 0; i < coords.rows(); ++i) {
            if (coords.row(i).transpose() == y) return fx.data.points.row(i).transpose();
        }
        return Vector::Zero(10);
    };
    CHECK(q_d(fx.data.points, coords, exact, *fx.model) == 1.0);
    const InverseFn garbage = [](const Point2&) -> Vector { return Vector::Constant(10, 1e3); };
    CHECK(q_d(fx.data.points, coords, garbage, *constant_classifier(10)) == 1.0);
    const double bad = q_d(fx.data.points, coords, garbage, *fx.model);
    CHECK(bad >= 0.0);
    CHECK(bad < 0.5);
}

TEST_CASE("q_nd") {
    const auto& fx = test::blobs_fixture();
    Rng rng(2);
    // Class-separated coordinates so the inverse map is meaningful.
    Matrix coords(fx.data.size(), 2);
    for (Eigen::Index i = 0; i < fx.data.size(); ++i) {
        const int label = (*fx.data.labels)[static_cast<std::size_t>(i)];
        coords.row(i) << 20.0 * label + rng.normal(), rng.normal();
    }
    const Vector sigma = Vector::Ones(fx.data.size());
    const double q = q_nd(fx.data.points, coords, 1.0, 1.0, sigma, *fx.model, 0.7, 3);
    CHECK(q >= 0.9);
    CHECK(q <= 1.0);
    CHECK(q_nd(fx.data.points, coords, 1.0, 1.0, sigma, *constant_classifier(10), 0.7, 3) == 1.0);
    CHECK(q_nd(fx.data.points, coords, 1.0, 1.0, sigma, *fx.model, 0.7, 3) == q);
    CHECK_THROWS_AS(q_nd(fx.data.points, coords, 1.0, 1.0, sigma, *fx.model, 1.0, 3), ParameterError);
    CHECK_THROWS_AS(q_nd(fx.data.points, coords, 1.0, 1.0, sigma, *fx.model, 0.0, 3), ParameterError);
}

TEST_CASE("q_nd with the held-out pair duplicated in training") {
    const auto& fx = test::blobs_fixture();
    const Eigen::Index n = 31;
    Matrix samples(n, 10);
    Matrix coords(n, 2);
    for (Eigen::Index i = 0; i < 30; ++i) {
        samples.row(i) = fx.data.points.row(i);
        coords.row(i) << 20.0 * (*fx.data.labels)[static_cast<std::size_t>(i)], 0.1 * static_cast<double>(i);
    }
    samples.row(30) = samples.row(4);
    coords.row(30) = coords.row(4);
    const Vector sigma = Vector::Ones(n);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        CHECK(q_nd(samples, coords, 1.0, 1.0, sigma, *fx.model, 1.0 - 1.0 / n, seed) == 1.0);
    }
}

TEST_CASE("lambda selection") {
    CHECK(select_lambda({10, 1, 0.1}, [](double) { return 0.8; }) == 10);
    const auto profile = [](double l) { return l == 10 ? 0.60 : l == 1 ? 0.95 : 0.96; };
    CHECK(select_lambda({10, 1, 0.1}, profile) == 1);
    CHECK(select_lambda({0.5}, [](double) { return 0.0; }) == 0.5);
    CHECK_THROWS_AS(select_lambda({}, [](double) { return 0.0; }), ParameterError);
}

TEST_CASE("a selection") {
    const auto increasing = [](double a) { return a == 0.1 ? 0.80 : a == 0.3 ? 0.90 : a == 1 ? 0.975 : a == 3 ? 0.99 : 0.995; };
    CHECK(select_a(a_grid(), increasing) == 1);
    CHECK(select_a(a_grid(), [](double) { return 0.9; }) == 0.1);
    CHECK(select_a({3.0}, [](double) { return 0.1; }) == 3.0);
}

TEST_CASE("lambda scale and grid") {
    const auto& fx = test::blobs_fixture();
    CHECK(lambda_scale(fx.data.points, *constant_classifier(10)) == 1.0);
    const double scale = lambda_scale(fx.data.points, *fx.model);
    CHECK(scale > 0.0);
    const auto grid = lambda_grid(fx.data.points, *fx.model);
    REQUIRE(grid.size() == 8);
    CHECK(grid.front() == doctest::Approx(10 * scale));
    CHECK(grid.back() == doctest::Approx(0.05 * scale));
    CHECK(std::is_sorted(grid.rbegin(), grid.rend()));
}

TEST_CASE("quality report JSON") {
    QualityReport r;
    r.q_knn = 0.9;
    r.q_knn_eucl = 0.7;
    r.q_d = 0.95;
    r.q_nd = 0.8;
    const auto j = to_json(r);
    CHECK(j.at("q_knn") == 0.9);
    CHECK(j.at("q_knn_eucl") == 0.7);
    CHECK(j.at("k") == 5);
    CHECK(j.at("split_fraction") == 0.7);
    r.q_knn_eucl.reset();
    CHECK(to_json(r).at("q_knn_eucl").is_null());
}
