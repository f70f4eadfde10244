#include "oracles.hpp"
#include "support.hpp"

#include "deepview/errors.hpp"
#include "deepview/inverse_map.hpp"

#include "doctest.h"

#include <cmath>

using namespace deepview;
using namespace oracle;

TEST_CASE("a single anchor maps everything to its column") {
    InverseMapModel m;
    m.anchors2d = Matrix{{0.5, -1.0}};
    m.theta = Dense{{1.0}, {2.0}, {3.0}};
    m.sigma_hat = Vector::Ones(1);
    for (const Point2 y : {Point2(0, 0), Point2(100, -50), Point2(0.5, -1.0)}) {
        CHECK(evaluate(m, y) == m.theta.col(0));
    }
}

TEST_CASE("equidistant query between two equal anchors gives the midpoint") {
    InverseMapModel m;
    m.anchors2d = Matrix{{-1.0, 0.0}, {1.0, 0.0}};
    m.theta = Dense{{0.0, 4.0}, {2.0, -2.0}};
    m.sigma_hat = Vector::Constant(2, 0.7);
    const Vector x = evaluate(m, Point2(0.0, 3.0));
    CHECK(x[0] == doctest::Approx(2.0));
    CHECK(x[1] == doctest::Approx(0.0));
}

TEST_CASE("query on a far-apart anchor returns nearly its column") {
    Rng rng(31);
    InverseMapModel m;
    const int n = 6;
    m.anchors2d.resize(n, 2);
    for (int i = 0; i < n; ++i) m.anchors2d.row(i) << 12.0 * i, 5.0 * (i % 2);
    m.theta = test::random_matrix(rng, 4, n) + Dense::Constant(4, n, 5.0);
    m.sigma_hat = Vector::Ones(n);
    m.a = 1.0;
    m.b = 1.0;
    for (int j = 0; j < n; ++j) {
        const Point2 y = m.anchors2d.row(j).transpose();
        Vector u(n);
        for (int i = 0; i < n; ++i) u[i] = 1.0 / (1.0 + (y - m.anchors2d.row(i).transpose()).squaredNorm());
        u /= u.sum();
        const Vector x = evaluate(m, y);
        CHECK((x - m.theta * u).norm() <= 1e-12);
        CHECK((x - m.theta.col(j)).norm() <= 0.05 * m.theta.col(j).norm());
    }
}

TEST_CASE("evaluation stays in the convex hull and is Lipschitz") {
    Rng rng(4);
    const InverseMapModel m = random_model(rng, 15, 3);
    const Vector lo = m.theta.rowwise().minCoeff();
    const Vector hi = m.theta.rowwise().maxCoeff();
    double max_ratio = 0.0;
    for (int t = 0; t < 500; ++t) {
        const Point2 y(rng.uniform(-10, 10), rng.uniform(-10, 10));
        const Vector u = anchor_weights(m, y);
        CHECK(u.minCoeff() >= 0.0);
        CHECK(std::abs(u.sum() - 1.0) <= 1e-12);
        const Vector x = evaluate(m, y);
        CHECK(((x - lo).array() >= -1e-12).all());
        CHECK(((hi - x).array() >= -1e-12).all());
        const Point2 y2 = y + Point2(rng.normal(), rng.normal()) * 1e-4;
        max_ratio = std::max(max_ratio, (evaluate(m, y2) - x).norm() / (y2 - y).norm());
    }
    // |dx/dy| <= 2 max|grad log w_i| * diam(theta), with
    // |grad log w| = 2ab d^(2b-1) / (1 + a d^(2b)) maximised over d.
    double g = 0.0;
    for (double d = 1e-3; d < 100.0; d += 1e-3) {
        g = std::max(g, 2 * m.a * m.b * std::pow(d, 2 * m.b - 1) / (1 + m.a * std::pow(d, 2 * m.b)));
    }
    double diameter = 0.0;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        for (Eigen::Index j = 0; j < m.size(); ++j) diameter = std::max(diameter, (m.theta.col(i) - m.theta.col(j)).norm());
    }
    const double bound = 2.0 * g * diameter;
    CHECK(max_ratio <= bound);
}

TEST_CASE("log-space fallback when every weight underflows") {
    Rng rng(9);
    InverseMapModel m = random_model(rng, 5, 2);
    m.b = 1.0;
    m.sigma_hat = Vector::Ones(5);
    const Point2 far(1e10, -1e10);
    const Vector reference = evaluate(m, far);
    m.sigma_hat = Vector::Constant(5, 1e300);
    const Vector x = evaluate(m, far);
    CHECK(x.allFinite());
    CHECK((x - reference).norm() <= 1e-9 * reference.norm());
}

TEST_CASE("subset evaluation only uses the listed anchors") {
    Rng rng(14);
    const InverseMapModel m = random_model(rng, 8, 3);
    const std::vector<Eigen::Index> anchors{1, 4, 6};
    const Point2 y(0.3, -0.2);
    const Vector u = anchor_weights(m, y, anchors);
    CHECK(u.size() == 3);
    Vector expected = Vector::Zero(3);
    double total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
        const double w = 1.0 / (1.0 + m.a * std::pow((y - m.anchors2d.row(anchors[k]).transpose()).norm(), 2.0 * m.b));
        total += w / m.sigma_hat[anchors[k]];
        expected += w / m.sigma_hat[anchors[k]] * m.theta.col(anchors[k]);
    }
    CHECK((evaluate_subset(m, y, anchors) - expected / total).norm() <= 1e-12);
}

TEST_CASE("the weighted mean minimises every inner-product weighted objective") {
    Rng rng(77);
    int instance = 0;
    for (Eigen::Index dim : {2, 5, 10}) {
        const int count = dim == 10 ? 16 : 17;
        for (int t = 0; t < count; ++t, ++instance) {
            const InverseMapModel m = random_model(rng, 7, dim);
            const Point2 y(rng.normal(), rng.normal());
            const Vector p = anchor_weights(m, y);
            const Dense a = random_spd(rng, dim);
            CHECK((evaluate(m, y) - weighted_minimizer(m.theta, p, a)).norm() <= 1e-8);
        }
    }
    CHECK(instance == 50);
}

TEST_CASE("inverse gradient matches finite differences") {
    Rng rng(23);
    for (int t = 0; t < 20; ++t) {
        const Eigen::Index n = 6;
        const Eigen::Index dim = 4;
        const Dense theta = test::random_matrix(rng, dim, n);
        const InverseMapModel m = random_model(rng, n, dim);
        const Dense w = weight_matrix(m, test::random_matrix(rng, n, 2, 3.0));
        const Dense s = test::random_matrix(rng, dim, n);
        std::vector<Dense> spd;
        for (Eigen::Index i = 0; i < n; ++i) spd.push_back(random_spd(rng, dim));
        const LocalMetrics metrics = LocalMetrics::from_matrices(spd);
        const Dense j = inverse_gradient(theta, w, s, metrics);
        const double h = 1e-6;
        double worst = 0.0;
        for (Eigen::Index r = 0; r < dim; ++r) {
            for (Eigen::Index c = 0; c < n; ++c) {
                Dense hi = theta;
                Dense lo = theta;
                hi(r, c) += h;
                lo(r, c) -= h;
                const double fd = (inverse_loss(hi, w, s, metrics) - inverse_loss(lo, w, s, metrics)) / (2 * h);
                worst = std::max(worst, std::abs(j(r, c) - fd) / std::max(std::abs(fd), 1e-3));
            }
        }
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("optimal learning rate agrees with a golden-section line search") {
    Rng rng(58);
    for (int t = 0; t < 50; ++t) {
        const Eigen::Index n = 8;
        const Eigen::Index dim = 5;
        const InverseMapModel m = random_model(rng, n, dim);
        const Dense w = weight_matrix(m, test::random_matrix(rng, n, 2, 3.0));
        const Dense s = test::random_matrix(rng, dim, n);
        const Dense theta = test::random_matrix(rng, dim, n);
        std::vector<Dense> spd;
        for (Eigen::Index i = 0; i < n; ++i) spd.push_back(random_spd(rng, dim));
        const LocalMetrics metrics = LocalMetrics::from_matrices(spd);
        // Mix the gradient with a random direction, as momentum steps do.
        const Dense dir = inverse_gradient(theta, w, s, metrics) + 0.5 * test::random_matrix(rng, dim, n);
        const double eta = optimal_learning_rate(theta, dir, w, s, metrics);
        const long double oracle =
            golden_section([&](long double e) { return line_loss(theta, dir, w, s, spd, e); });
        if (oracle <= 0.0L) continue;
        CHECK(std::abs(eta - static_cast<double>(oracle)) <= 1e-8 * std::max(1.0, std::abs(eta)));
    }
}

TEST_CASE("optimal learning rate edge cases") {
    const Dense theta{{3.0}};
    const Dense w{{1.0}};
    const Dense s{{1.0}};
    const auto metrics = LocalMetrics::identity();
    const Dense j = inverse_gradient(theta, w, s, metrics);
    const double eta = optimal_learning_rate(theta, j, w, s, metrics);
    CHECK(inverse_loss(theta - eta * j, w, s, metrics) == 0.0);
    CHECK(optimal_learning_rate(theta, Dense::Zero(1, 1), w, s, metrics) == 0.0);
}

TEST_CASE("a single pair is fitted exactly") {
    const Matrix samples{{1.0, -2.0, 0.5}};
    const Matrix coords{{0.0, 0.0}};
    const auto [model, report] = train_inverse(samples, coords, 1.0, 1.0, Vector::Ones(1));
    CHECK(report.loss_trace.back() == 0.0);
    CHECK(evaluate(model, Point2(4.0, 4.0)) == samples.row(0).transpose());
}

TEST_CASE("plain line search never increases the loss") {
    Rng rng(66);
    const Eigen::Index n = 30;
    const Matrix samples = test::random_matrix(rng, n, 6);
    const Matrix coords = test::random_matrix(rng, n, 2, 2.0);
    const Vector sigma = Vector::NullaryExpr(n, [&] { return rng.uniform(0.5, 2.0); });
    std::vector<Vector> diagonals;
    for (Eigen::Index i = 0; i < n; ++i) diagonals.push_back(Vector::NullaryExpr(6, [&] { return rng.uniform(0.1, 5.0); }));
    for (const LocalMetrics& metrics : {LocalMetrics::identity(), LocalMetrics::from_diagonals(diagonals)}) {
        InverseTrainOptions options;
        options.momentum = 0.0;
        options.warmup_iters = 0;
        options.max_iters = 100;
        const auto [model, report] = train_inverse(samples, coords, 1.0, 1.0, sigma, options, metrics);
        for (std::size_t t = 1; t < report.loss_trace.size(); ++t) {
            CHECK(report.loss_trace[t] <= report.loss_trace[t - 1]);
        }
    }
}

TEST_CASE("training shrinks the reconstruction error of separated pairs") {
    Rng rng(90);
    const Eigen::Index n = 20;
    Matrix coords(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) coords.row(i) << 3.0 * (i % 5), 3.0 * (i / 5);
    // Isometric lift of the plane into R^4.
    Dense basis = test::random_matrix(rng, 4, 2);
    basis = Eigen::HouseholderQR<Dense>(basis).householderQ() * Dense::Identity(4, 2);
    const Matrix samples = (coords * basis.transpose()).eval();
    InverseMapModel untrained;
    untrained.anchors2d = coords;
    untrained.theta = samples.transpose();
    untrained.sigma_hat = Vector::Ones(n);
    const auto mean_error = [&](const InverseMapModel& m) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) total += (evaluate(m, coords.row(i).transpose()) - samples.row(i).transpose()).norm();
        return total / n;
    };
    const auto [trained, report] = train_inverse(samples, coords, 1.0, 1.0, Vector::Ones(n));
    CHECK(report.loss_trace.back() <= report.loss_trace.front());
    CHECK(mean_error(trained) <= 0.1 * mean_error(untrained));
}

TEST_CASE("local metrics") {
    const Matrix points{{0.0, 0.0}, {1.0, -1.0}};
    const auto identity = local_metrics(points, *make_softmax_linear(Matrix::Zero(2, 2), Vector::Zero(2)),
                                        MetricMode::identity);
    CHECK(identity.kind == LocalMetrics::Kind::identity);
    CHECK(identity.apply(0, Vector{{2.0, 3.0}}) == Vector{{2.0, 3.0}});

    const auto constant = local_metrics(points, *make_softmax_linear(Matrix::Zero(3, 2), Vector::Zero(3)),
                                        MetricMode::fisher_diag);
    for (const auto& d : constant.diagonal) CHECK(d == Vector::Constant(2, 1e-6));
}

TEST_CASE("Fisher diagonal of a logistic model peaks at the boundary") {
    const Matrix w{{0.0, 0.0}, {3.0, -1.0}};
    const auto f = make_softmax_linear(w, Vector::Zero(2));
    Matrix points(5, 2);
    points << 0.0, 0.0, 0.5, 0.2, 1.0, 0.0, 2.0, 1.0, -1.5, 0.3;
    const auto metrics = local_metrics(points, *f, MetricMode::fisher_diag);
    // For a two-class logistic model (d sqrt(JS) / dx_d)^2 = p(1 - p) w_d^2 / 8.
    const Vector slope{{3.0, -1.0}};
    std::vector<double> first;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const double p = f->predict(points.row(i).transpose())[1];
        for (Eigen::Index d = 0; d < 2; ++d) {
            const double expected = std::max(p * (1 - p) * slope[d] * slope[d] / 8.0, 1e-6);
            CHECK(metrics.diagonal[static_cast<std::size_t>(i)][d] == doctest::Approx(expected).epsilon(1e-3));
        }
        first.push_back(metrics.diagonal[static_cast<std::size_t>(i)][0]);
    }
    CHECK(first[0] == *std::max_element(first.begin(), first.end()));
}

TEST_CASE("fisher_diag refuses wide external classifiers") {
    const auto f = external_connect(std::string(MOCK_BACKEND) + " 2 65", 2, 64);
    CHECK_THROWS_AS(local_metrics(Matrix::Zero(1, 65), *f, MetricMode::fisher_diag), UnsupportedError);
}

TEST_CASE("inverse model JSON round trip") {
    Rng rng(1);
    const InverseMapModel m = random_model(rng, 4, 3);
    const auto j = to_json(m);
    for (const char* key : {"anchors2d", "theta", "sigma", "a", "b"}) CHECK(j.contains(key));
    const InverseMapModel back = inverse_model_from_json(j);
    CHECK(back.anchors2d == m.anchors2d);
    CHECK(back.theta == m.theta);
    CHECK(back.sigma_hat == m.sigma_hat);
    CHECK(back.a == m.a);
    CHECK(back.b == m.b);
}

TEST_CASE("invalid inverse models are rejected") {
    InverseMapModel m;
    m.anchors2d = Matrix::Zero(2, 2);
    m.theta = Dense::Zero(3, 2);
    m.sigma_hat = Vector{{1.0, 0.0}};
    CHECK_THROWS_AS(m.validate(), ParameterError);
}
