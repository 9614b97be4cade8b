#include "helpers.hpp"

#include "whilealive/spline_basis.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <doctest.h>

using namespace wa;
using wa::test::vec;

namespace {
const std::vector<double> grid_knots{1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};

BasisConfig cfg(BasisFamily f, std::vector<double> knots, int degree = 0) {
    BasisConfig c;
    c.family = f;
    c.knots = std::move(knots);
    c.degree = degree;
    return c;
}
}  // namespace

TEST_CASE("step basis thresholds") {
    const auto j = evaluate_basis(cfg(BasisFamily::step, grid_knots), 2.2);
    CHECK(j == vec({1, 1, 1, 0, 0, 0, 0}));
    CHECK(evaluate_basis(cfg(BasisFamily::step, grid_knots), 0.5).isZero());
}

TEST_CASE("degree-0 B-splines are interval indicators") {
    const auto b = bspline_basis(grid_knots, 0, 2.2);
    REQUIRE(b.size() == 6);
    CHECK(b == vec({0, 0, 1, 0, 0, 0}));
}

TEST_CASE("time-fixed basis is constant") {
    const auto c = cfg(BasisFamily::time_fixed, {0.0, 5.0});
    CHECK(evaluate_basis(c, 2.0) == vec({1}));
    const auto gamma = vec({0.7, -0.2});
    for (double t : {0.0, 1.0, 4.9}) CHECK(beta_at(gamma, c, t) == gamma);
}

TEST_CASE("B-spline partition of unity and the t-scaled bz basis") {
    const std::vector<double> knots{0.0, 1.0, 2.5, 4.0};
    for (int d : {1, 2, 3}) {
        for (double t = 0.0; t <= 4.0; t += 0.13) {
            const auto b = bspline_basis(knots, d, t);
            CHECK(b.size() == static_cast<Eigen::Index>(knots.size()) + d - 1);
            CHECK(b.sum() == doctest::Approx(1.0).epsilon(1e-13));
            CHECK(b.minCoeff() >= -1e-15);
            const auto j = evaluate_basis(cfg(BasisFamily::bspline, knots, d), t);
            CHECK((j - t * b).cwiseAbs().maxCoeff() < 1e-15);
        }
        CHECK(evaluate_basis(cfg(BasisFamily::bspline, knots, d), 0.0).isZero());
    }
}

TEST_CASE("M-splines integrate to one") {
    const auto c = cfg(BasisFamily::mspline, {0.0, 1.0, 2.5, 4.0}, 2);
    const int R = c.dimension();
    for (int r = 0; r < R; ++r) {
        double total = 0.0;
        const std::vector<double> pieces{0.0, 1.0, 2.5, 4.0};
        for (std::size_t k = 0; k + 1 < pieces.size(); ++k)
            total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
                [&](double t) { return evaluate_basis(c, t)[r]; }, pieces[k], pieces[k + 1], 10, 1e-12);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("natural cubic spline is linear past the boundary knot before clamping") {
    // Inside [first, last] knot, the second derivative vanishes at the last knot.
    const auto c = cfg(BasisFamily::natural_spline, {0.0, 1.0, 2.0, 3.0});
    CHECK(c.dimension() == 4);
    const double h = 1e-3, t = 3.0 - 2 * h;
    const Eigen::VectorXd second = (evaluate_basis(c, t + h) - 2.0 * evaluate_basis(c, t) + evaluate_basis(c, t - h)) / (h * h);
    CHECK(second.cwiseAbs().maxCoeff() < 0.05);
    CHECK(evaluate_basis(c, 0.5)[0] == 1.0);
    CHECK(evaluate_basis(c, 0.5)[1] == 0.5);
}

TEST_CASE("truncated-linear, interval-linear and piecewise-polynomial families") {
    const std::vector<double> knots{0.0, 1.0, 2.0, 4.0};
    const auto tl = evaluate_basis(cfg(BasisFamily::truncated_linear, knots), 3.0);
    CHECK(tl == vec({1, 3, 2, 1}));
    const auto il = evaluate_basis(cfg(BasisFamily::interval_linear, knots), 3.0);
    CHECK(il == vec({0, 0, 0.5, 0.5}));
    for (double t = 0.0; t <= 4.0; t += 0.1) CHECK(evaluate_basis(cfg(BasisFamily::interval_linear, knots), t).sum() == doctest::Approx(1.0));
    const auto pl = cfg(BasisFamily::piecewise_poly, knots, 1);
    CHECK(pl.dimension() == 6);
    CHECK(evaluate_basis(pl, 1.5) == vec({0, 0, 1, 0.5, 0, 0}));
}

TEST_CASE("clamping past the last knot and rejecting negative time") {
    for (auto f : {BasisFamily::step, BasisFamily::bspline, BasisFamily::natural_spline, BasisFamily::mspline,
                   BasisFamily::piecewise_poly, BasisFamily::truncated_linear, BasisFamily::interval_linear}) {
        const auto c = cfg(f, {0.0, 1.0, 2.0, 3.0}, 2);
        CHECK(evaluate_basis(c, 7.0) == evaluate_basis(c, 3.0));
        CHECK_THROWS_AS(evaluate_basis(c, -0.1), std::invalid_argument);
    }
}

TEST_CASE("basis validation and names") {
    CHECK_THROWS(cfg(BasisFamily::bspline, {0.0}).validate());
    CHECK_THROWS(cfg(BasisFamily::step, {1.0, 1.0}).validate());
    CHECK_THROWS(cfg(BasisFamily::time_fixed, {0.0, 1.0, 2.0}).validate());
    CHECK_THROWS(cfg(BasisFamily::step, {-1.0, 1.0}).validate());
    for (const char* n : {"st", "bz", "ns", "ms", "pl", "tl", "il", "tf"}) CHECK(basis_family_name(parse_basis_family(n)) == n);
    CHECK_THROWS(parse_basis_family("xx"));
}

TEST_CASE("expand_design ordering and linearity of beta_at") {
    CHECK(expand_design(vec({1, 2}), vec({1, 0})) == vec({1, 0, 2, 0}));
    CHECK(expand_design(vec({0, 0, 0}), vec({1, 2})).isZero());
    const auto j = vec({0.3, 0.7, 1.1});
    CHECK(expand_design(vec({1}), j) == j);
    const auto z = vec({2.0, -1.0, 0.5});
    const Eigen::VectorXd e = expand_design(z, j);
    const Eigen::MatrixXd outer = z * j.transpose();
    for (int a = 0; a < 3; ++a)
        for (int r = 0; r < 3; ++r) CHECK(e[a * 3 + r] == outer(a, r));

    const auto c = cfg(BasisFamily::step, grid_knots);
    Eigen::VectorXd g1 = Eigen::VectorXd::Zero(14), g2 = Eigen::VectorXd::Random(14);
    g1[0] = 0.4;
    CHECK(beta_at(g1, c, 2.2)[0] == doctest::Approx(0.4));
    CHECK(beta_at(Eigen::VectorXd::Zero(14), c, 3.0).isZero());
    const Eigen::VectorXd lhs = beta_at(2.0 * g1 - 3.0 * g2, c, 2.7);
    const Eigen::VectorXd rhs = 2.0 * beta_at(g1, c, 2.7) - 3.0 * beta_at(g2, c, 2.7);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((coefficient_map(c, 2, 2.7) * g2 - beta_at(g2, c, 2.7)).cwiseAbs().maxCoeff() < 1e-14);
}
