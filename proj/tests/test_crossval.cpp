#include "helpers.hpp"

#include "whilealive/crossval.hpp"

#include <doctest.h>

#include <map>
#include <set>

using namespace wa;
using wa::test::dataset;
using wa::test::subject;
using wa::test::vec;

namespace {

FitResult handmade_fit(BasisConfig basis, Eigen::VectorXd gamma, Link link, WeightScheme w) {
    FitResult fit;
    fit.spec.basis = std::move(basis);
    fit.spec.link = link;
    fit.spec.weights = std::move(w);
    fit.gamma = std::move(gamma);
    fit.R = fit.spec.basis.dimension();
    fit.p = static_cast<int>(fit.gamma.size()) / fit.R;
    return fit;
}

CvGrid quick_grid() {
    CvGrid g;
    g.weights = {{1.0, 1.0}, 1.0};
    g.censoring.kind = CensoringKind::cox;
    g.censoring.covariates = {"Z1", "Z2"};
    g.time_range = std::make_pair(0.0, 3.0);
    g.threads = 1;
    return g;
}

}  // namespace

TEST_CASE("fold assignment sizes, determinism and cluster integrity") {
    auto d = wa::test::small_simulated(10, 1);
    const auto folds = assign_folds(d, 5, 42);
    std::map<int, int> count;
    for (int f : folds) ++count[f];
    CHECK(count.size() == 5);
    for (auto [f, c] : count) CHECK(c == 2);
    CHECK(assign_folds(d, 5, 42) == folds);
    CHECK_THROWS(assign_folds(d, 11, 1));
    CHECK_THROWS(assign_folds(d, 1, 1));

    auto c = wa::test::small_simulated(20, 2);
    for (std::size_t i = 0; i < c.n(); ++i) c.subjects[i].cluster = "k" + std::to_string(i % 7);
    set_cluster_mode(c, true);
    const auto cf = assign_folds(c, 3, 9);
    std::map<std::string, int> of_cluster;
    std::map<int, std::set<std::string>> members;
    for (std::size_t i = 0; i < c.n(); ++i) {
        const auto& id = *c.subjects[i].cluster;
        if (of_cluster.count(id)) CHECK(of_cluster[id] == cf[i]);
        of_cluster[id] = cf[i];
        members[cf[i]].insert(id);
    }
    std::multiset<std::size_t> sizes;
    for (const auto& [f, m] : members) sizes.insert(m.size());
    CHECK(sizes == std::multiset<std::size_t>{2, 2, 3});
}

TEST_CASE("integration grid") {
    const auto g = integration_grid(0.0, 2.0, 5);
    CHECK(g == std::vector<double>{0.0, 0.5, 1.0, 1.5, 2.0});
    CHECK_THROWS(integration_grid(1.0, 1.0, 5));
}

TEST_CASE("prediction error: zero residual and constant integrand") {
    BasisConfig tf;
    tf.family = BasisFamily::time_fixed;
    tf.knots = {0.0, 2.0};
    const auto none = no_censoring_model(CensoringKind::kaplan_meier);
    const auto quiet = dataset({subject("1", vec({1}), 5.0, false)}, {"(Intercept)"});
    const auto zero_fit = handmade_fit(tf, vec({0.0}), Link::identity, {{1.0}, 1.0});
    CHECK(prediction_error(quiet, zero_fit, none, integration_grid(0.0, 2.0, 100)) == 0.0);

    // An event at time 0 keeps L(s) = 1 on the whole range; with rate 0 the integrand is 1.
    const auto busy = dataset({subject("1", vec({1}), 5.0, false, {0.0}), subject("2", vec({1}), 6.0, false, {0.0})}, {"(Intercept)"});
    CHECK(prediction_error(busy, zero_fit, none, integration_grid(0.5, 2.0, 7)) == doctest::Approx(2 * 1.5).epsilon(1e-14));
}

TEST_CASE("prediction error matches direct summation") {
    const auto train = wa::test::small_simulated(200, 77);
    const auto km = fit_km_censoring(train);
    BasisConfig st;
    st.family = BasisFamily::step;
    st.knots = {0.0, 0.8, 1.6};
    const Eigen::VectorXd gamma = vec({-0.2, 0.3, 0.1, 0.5, -0.4, 0.2});
    const WeightScheme w{{1.0, 2.0}, 3.0};
    for (Link link : {Link::log, Link::identity}) {
        const auto fit = handmade_fit(st, link == Link::log ? gamma : Eigen::VectorXd(gamma.cwiseAbs()), link, w);
        const auto held = subset(train, {3, 50, 120});
        const double t0 = 0.0, tau = 2.0;
        const int T = 5;
        const auto grid = integration_grid(t0, tau, T);
        const double h = (tau - t0) / (T - 1);
        double direct = 0.0;
        for (const auto& s : held.subjects) {
            double interior = 0.0, ends = 0.0;
            for (int k = 0; k < T; ++k) {
                const double u = t0 + h * k;
                const bool observed = s.U > u || s.delta;
                double f = 0.0;
                if (observed) {
                    const double G = survival_at(km, std::min(s.U, u), s.z);
                    const Eigen::VectorXd b = beta_at(fit.gamma, st, u);
                    const double mu = LinkFunction::inverse(link, b.dot(s.z));
                    const double r = (cumulative_loss(s, w, u) - mu * std::min(s.U, u)) / G;
                    f = r * r;
                }
                if (k == 0 || k == T - 1) ends += f;
                else interior += f;
            }
            direct += h * (interior + 0.5 * ends);
        }
        CHECK(std::abs(prediction_error(held, fit, km, grid) - direct) <= 1e-12 * std::max(1.0, direct));
    }
}

TEST_CASE("configuration enumeration and knots") {
    CvGrid g;
    g.families = {BasisFamily::step, BasisFamily::bspline, BasisFamily::time_fixed};
    g.degrees = {1, 3};
    g.n_interior = {2, 4};
    g.links = {Link::log};
    const auto configs = enumerate_configs(g);
    CHECK(configs.size() == 2 + 4 + 1);
    CvConfig st{BasisFamily::step, 0, 3, Link::log};
    CHECK(config_knots(st, KnotScheme::equidistant, 0.0, 4.0, {}) == std::vector<double>{0.0, 1.0, 2.0, 3.0});
    CvConfig bz{BasisFamily::bspline, 3, 1, Link::log};
    CHECK(config_knots(bz, KnotScheme::equidistant, 0.0, 4.0, {}) == std::vector<double>{0.0, 2.0, 4.0});
    const auto q = config_knots(bz, KnotScheme::quantile, 0.0, 4.0, {1.0, 2.0, 3.0});
    CHECK(q == std::vector<double>{0.0, 2.0, 4.0});
    CHECK(parse_knot_scheme("equidist") == KnotScheme::equidistant);
    CHECK_THROWS(parse_knot_scheme("random"));
}

TEST_CASE("select: single, duplicated and singleton-cluster grids") {
    auto d = wa::test::small_simulated(300, 61);
    CvGrid g = quick_grid();
    const auto one = select(d, g);
    CHECK(one.entries.size() == 1);
    CHECK(one.selected == 0);
    CHECK(one.entries[0].ok);

    g.families = {BasisFamily::step, BasisFamily::step};
    const auto dup = select(d, g);
    CHECK(dup.entries[0].pe == dup.entries[1].pe);
    CHECK(dup.entries[0].pe == one.entries[0].pe);

    for (std::size_t i = 0; i < d.n(); ++i) d.subjects[i].cluster = "c" + std::to_string(i);
    set_cluster_mode(d, true);
    g.families = {BasisFamily::step};
    const auto clustered = select(d, g);
    CHECK(clustered.entries[0].pe == one.entries[0].pe);
    CHECK(clustered.entries[0].fold_pe == one.entries[0].fold_pe);
}

TEST_CASE("select is reproducible across thread counts and disqualifies failing configurations") {
    const auto d = wa::test::small_simulated(250, 62);
    CvGrid g = quick_grid();
    g.families = {BasisFamily::step, BasisFamily::time_fixed, BasisFamily::bspline};
    g.degrees = {2};
    g.n_interior = {2};
    g.threads = 1;
    const auto a = select(d, g);
    g.threads = 3;
    const auto b = select(d, g);
    for (std::size_t c = 0; c < a.entries.size(); ++c) CHECK(a.entries[c].fold_pe == b.entries[c].fold_pe);
    CHECK(a.selected == b.selected);

    // A stacking time past every follow-up time breaks every split.
    g.tau_grid = std::vector<double>{1.0, 1e6};
    CHECK_THROWS_AS(select(d, g), CvError);
}

TEST_CASE("integration grid refinement changes PE by under one percent") {
    const auto d = wa::test::small_simulated(300, 63);
    CvGrid g = quick_grid();
    g.families = {BasisFamily::bspline};
    g.degrees = {2};
    g.n_interior = {2};
    g.T = 100;
    const double pe100 = select(d, g).entries[0].pe;
    g.T = 200;
    const double pe200 = select(d, g).entries[0].pe;
    CHECK(std::abs(pe200 - pe100) <= 0.01 * pe100);
}

TEST_CASE("time-fixed basis loses to a step basis when the effect changes sign") {
    // Type 1 events happen early and are raised by Z1; type 2 events happen late and are lowered by it.
    ScenarioConfig s = scenario_by_label("I(b)");
    s.n = 400;
    s.recurrent_baselines = {BaselineSpec::piecewise_exp({0.0, 1.0}, {2.0, 0.01}), BaselineSpec::piecewise_exp({0.0, 1.0}, {0.01, 2.0})};
    s.recurrent_alpha = {vec({1.5, 0.0}), vec({-1.5, 0.0})};
    CvGrid g = quick_grid();
    g.families = {BasisFamily::step, BasisFamily::time_fixed};
    g.time_range = std::make_pair(0.0, 2.5);
    g.tau_grid = std::vector<double>{0.5, 1.0, 1.5, 2.0, 2.5};
    int tf_wins = 0;
    const int replicates = 400;
    for (int r = 0; r < replicates; ++r) {
        const auto d = simulate_dataset(s, substream_seed(5, static_cast<std::uint64_t>(r), 1));
        g.seed = static_cast<std::uint64_t>(r + 1);
        const auto res = select(d, g);
        if (res.entries[res.selected].config.family == BasisFamily::time_fixed) ++tf_wins;
    }
    MESSAGE("time-fixed selected in " << tf_wins << " of " << replicates << " replicates");
    CHECK(2 * tf_wins < replicates);
}
