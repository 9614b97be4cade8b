#include "helpers.hpp"

#include "whilealive/estimator.hpp"
#include "whilealive/variance.hpp"

#include <doctest.h>

#include <cmath>

using namespace wa;
using wa::test::dataset;
using wa::test::subject;
using wa::test::vec;

namespace {

FitSpec landmark_spec(double t, WeightScheme w, Link link, CensoringKind kind = CensoringKind::kaplan_meier) {
    FitSpec spec;
    spec.basis.family = BasisFamily::time_fixed;
    spec.basis.knots = {0.0, t};
    spec.tau_grid = {t};
    spec.weights = std::move(w);
    spec.link = link;
    spec.censoring.kind = kind;
    return spec;
}

FitSpec step_spec(std::vector<double> knots, WeightScheme w, Link link = Link::log) {
    FitSpec spec;
    spec.basis.family = BasisFamily::step;
    spec.basis.knots = knots;
    spec.tau_grid = knots;
    spec.weights = std::move(w);
    spec.link = link;
    spec.censoring.kind = CensoringKind::cox;
    spec.censoring.covariates = {"Z1", "Z2"};
    return spec;
}

EventDataset two_arm() {
    // Arm 0: (L=1, D∧t=2) and (L=0, D∧t=1); arm 1: (2, 2) twice. Death weight 0.
    return dataset({subject("a", vec({1, 0}), 3.0, true, {0.5}), subject("b", vec({1, 0}), 1.0, true),
                    subject("c", vec({1, 1}), 2.5, true, {0.4, 1.1}), subject("d", vec({1, 1}), 4.0, true, {1.5, 1.9})},
                   {"(Intercept)", "A"});
}

}  // namespace

TEST_CASE("link functions") {
    for (double x : {-2.0, 0.0, 1.5}) {
        CHECK(LinkFunction::link(Link::log, LinkFunction::inverse(Link::log, x)) == doctest::Approx(x));
        CHECK(LinkFunction::inverse(Link::identity, x) == x);
        CHECK(LinkFunction::inverse_derivative(Link::identity, x) == 1.0);
        CHECK(LinkFunction::inverse_derivative(Link::log, x) == doctest::Approx(std::exp(x)));
    }
    CHECK(parse_link("log") == Link::log);
    CHECK_THROWS(parse_link("probit"));
}

TEST_CASE("identity link, intercept only, one stacking time: ratio of sums") {
    const auto d = dataset({subject("1", vec({1}), 1.0, true), subject("2", vec({1}), 3.0, true)}, {"(Intercept)"}, 1);
    const auto fit = solve(d, landmark_spec(2.0, {{1.0}, 1.0}, Link::identity));
    CHECK(fit.gamma[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("average hazard special case") {
    const auto d = dataset({subject("1", vec({1}), 1.0, true, {0.2}), subject("2", vec({1}), 3.0, true, {0.5, 1.5})}, {"(Intercept)"}, 1);
    const auto fit = solve(d, landmark_spec(2.0, {{0.0}, 1.0}, Link::identity));
    CHECK(fit.gamma[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("saturated two-arm fit reproduces the plug-in arm ratios") {
    const auto d = two_arm();
    const auto fit = solve(d, landmark_spec(2.0, {{1.0}, 0.0}, Link::log));
    CHECK(fit.gamma[0] == doctest::Approx(std::log(1.0 / 3.0)).epsilon(1e-10));
    CHECK(fit.gamma[1] == doctest::Approx(std::log(3.0)).epsilon(1e-10));
    const auto id = solve(d, landmark_spec(2.0, {{1.0}, 0.0}, Link::identity));
    CHECK(std::exp(fit.gamma[0]) == doctest::Approx(id.gamma[0]).epsilon(1e-10));
    CHECK(std::exp(fit.gamma[0] + fit.gamma[1]) == doctest::Approx(id.gamma[0] + id.gamma[1]).epsilon(1e-10));
}

TEST_CASE("landmark fit equals solve with the time-fixed basis") {
    const auto d = two_arm();
    const auto lm = fit_landmark(d, 2.0, {{1.0}, 0.0}, Link::log, CensoringSpec{CensoringKind::kaplan_meier, {}, {}});
    const auto fit = solve(d, landmark_spec(2.0, {{1.0}, 0.0}, Link::log));
    CHECK(lm.beta == fit.gamma);
    CHECK(lm.vcov == fit.vcov);
    CHECK_THROWS_AS(fit_landmark(d, 9.0, {{1.0}, 0.0}, Link::log, CensoringSpec{CensoringKind::kaplan_meier, {}, {}}), EstimationError);
}

TEST_CASE("zero events under the log link has no root") {
    const auto d = dataset({subject("1", vec({1}), 2.0, false), subject("2", vec({1}), 3.0, false)}, {"(Intercept)"}, 1);
    try {
        solve(d, landmark_spec(1.0, {{1.0}, 1.0}, Link::log));
        FAIL("no error");
    } catch (const EstimationError& e) {
        CHECK(e.kind() == EstimationError::Kind::no_root_log_link);
        CHECK(std::string(e.what()) == "score has no root under log link");
    }
}

TEST_CASE("all subjects censored before the first stacking time") {
    const auto d = dataset({subject("1", vec({1}), 1.0, false), subject("2", vec({1}), 1.5, false)}, {"(Intercept)"}, 1);
    const auto spec = landmark_spec(1.8, {{1.0}, 1.0}, Link::identity);
    const auto g1 = no_censoring_model(CensoringKind::kaplan_meier);
    const auto problem = build_problem(d, spec, g1);
    CHECK(problem.rows() == 0);
    for (double g : {-1.0, 0.0, 2.5}) CHECK(stacked_score(vec({g}), problem).isZero());
    CHECK(score_jacobian(vec({0.3}), problem).isZero());
    try {
        solve(d, spec, g1);
        FAIL("no error");
    } catch (const EstimationError& e) {
        CHECK(e.kind() == EstimationError::Kind::singular_jacobian);
    }
}

TEST_CASE("stacking past the data raises degenerate weights") {
    const auto d = wa::test::small_simulated(100, 2);
    auto spec = step_spec({1.0, 2.0, 50.0}, {{1.0, 1.0}, 1.0});
    try {
        solve(d, spec);
        FAIL("no error");
    } catch (const EstimationError& e) {
        CHECK(e.kind() == EstimationError::Kind::degenerate_weights);
    }
}

TEST_CASE("root property and Jacobian structure on simulated data") {
    const auto d = wa::test::small_simulated(500, 4);
    const auto spec = step_spec({1.0, 1.5, 2.0, 2.5, 3.0}, {{1.0, 1.0}, 1.0});
    const auto fit = solve(d, spec);
    const auto cens = fit.censoring;
    CHECK(stacked_score(fit.gamma, d, spec, cens).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(fit.score_norm <= 1e-8);
    const Eigen::MatrixXd J = score_jacobian(fit.gamma, d, spec, cens);
    CHECK((J - J.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
    CHECK(eig.eigenvalues().maxCoeff() <= 1e-12);
    CHECK((fit.vcov - fit.vcov.transpose()).cwiseAbs().maxCoeff() < 1e-15);

    auto id_spec = spec;
    id_spec.link = Link::identity;
    const auto J1 = score_jacobian(Eigen::VectorXd::Zero(10), d, id_spec, cens);
    const auto J2 = score_jacobian(Eigen::VectorXd::Random(10), d, id_spec, cens);
    CHECK((J1 - J2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("analytic Jacobian matches central differences") {
    const auto d = wa::test::small_simulated(200, 9);
    for (Link link : {Link::log, Link::identity}) {
        auto spec = step_spec({1.0, 2.0, 3.0}, {{1.0, 2.0}, 2.0}, link);
        const auto cens = fit_censoring(d, spec.censoring);
        const auto pr = build_problem(d, spec, cens);
        Eigen::VectorXd g = 0.3 * Eigen::VectorXd::Random(6);
        if (link == Link::identity) g = g.cwiseAbs();
        const Eigen::MatrixXd J = score_jacobian(g, pr);
        const double h = 1e-6;
        double gap = 0.0;
        for (int c = 0; c < 6; ++c) {
            Eigen::VectorXd up = g, dn = g;
            up[c] += h;
            dn[c] -= h;
            const Eigen::VectorXd fd = (stacked_score(up, pr) - stacked_score(dn, pr)) / (2 * h);
            gap = std::max(gap, (fd - J.col(c)).cwiseAbs().maxCoeff());
        }
        CHECK(gap <= 1e-6);
    }
}

TEST_CASE("KM and Cox IPCW agree when nothing is censored") {
    ScenarioConfig s = scenario_by_label("I(b)");
    s.n = 300;
    s.censoring = {};
    const auto d = simulate_dataset(s, 17);
    CHECK_FALSE(d.any_censoring());
    auto spec = step_spec({1.0, 2.0, 3.0}, {{1.0, 1.0}, 1.0});
    const auto cox = solve(d, spec);
    spec.censoring.kind = CensoringKind::kaplan_meier;
    const auto km = solve(d, spec);
    CHECK(cox.gamma == km.gamma);
    CHECK(cox.vcov == km.vcov);
    CHECK_FALSE(cox.diagnostics.empty());
}

TEST_CASE("arm-stratified KM fit equals the nonparametric IPCW ratio") {
    auto d = select_covariates(wa::test::small_simulated(600, 31), {"Z1"}, true);
    const double t = 2.0;
    const WeightScheme w{{1.0, 2.0}, 2.0};
    FitSpec spec = landmark_spec(t, w, Link::log);
    spec.censoring.strata = "Z1";
    const auto fit = solve(d, spec);
    const auto km = fit_km_censoring(d, std::string("Z1"));
    double num[2] = {0, 0}, den[2] = {0, 0};
    for (const auto& s : d.subjects) {
        const int arm = static_cast<int>(s.z[1]);
        const double wt = ipcw_weight(km, s, t);
        num[arm] += wt * cumulative_loss(s, w, t);
        den[arm] += wt * std::min(s.U, t);
    }
    CHECK(std::exp(fit.gamma[0]) == doctest::Approx(num[0] / den[0]).epsilon(1e-10));
    CHECK(std::exp(fit.gamma[0] + fit.gamma[1]) == doctest::Approx(num[1] / den[1]).epsilon(1e-10));
}

TEST_CASE("weight cap replaces the positivity error") {
    const auto d = dataset({subject("1", vec({1}), 1.0, false), subject("2", vec({1}), 1.2, true, {0.5}), subject("3", vec({1}), 2.0, false)},
                           {"(Intercept)"}, 1);
    FitSpec spec = landmark_spec(1.5, {{1.0}, 1.0}, Link::log);
    spec.positivity_floor = 0.9;
    CHECK_THROWS_AS(solve(d, spec), PositivityError);
    spec.weight_cap_quantile = 0.5;
    CHECK_NOTHROW(solve(d, spec));
}
