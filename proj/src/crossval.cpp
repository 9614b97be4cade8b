#include "whilealive/crossval.hpp"

#include "whilealive/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace wa {

KnotScheme parse_knot_scheme(const std::string& name) {
    if (name == "equidist" || name == "equidistant") return KnotScheme::equidistant;
    if (name == "quantile") return KnotScheme::quantile;
    throw std::invalid_argument("unknown knot scheme '" + name + "' (expected equidist or quantile)");
}

std::string CvConfig::label() const {
    std::ostringstream out;
    out << basis_family_name(family) << "/d" << degree << "/k" << n_interior << "/" << link_name(link);
    return out.str();
}

std::vector<int> assign_folds(const EventDataset& data, int K, std::uint64_t seed) {
    const std::size_t units = data.n_units();
    if (K < 2) throw std::invalid_argument("cross-validation needs K >= 2");
    if (static_cast<std::size_t>(K) > units) throw std::invalid_argument("K exceeds the number of units");
    std::vector<std::size_t> order(units);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> unit_fold(units);
    for (std::size_t pos = 0; pos < units; ++pos) unit_fold[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(K));
    std::vector<int> labels(data.n());
    for (std::size_t i = 0; i < data.n(); ++i)
        labels[i] = unit_fold[data.cluster_mode ? static_cast<std::size_t>(data.cluster_index[i]) : i];
    return labels;
}

std::vector<double> integration_grid(double t_min, double tau, int T) {
    if (T < 2) throw std::invalid_argument("integration grid needs at least two points");
    if (!(tau > t_min)) throw std::invalid_argument("integration range is empty");
    std::vector<double> grid(static_cast<std::size_t>(T));
    for (int k = 0; k < T; ++k) grid[static_cast<std::size_t>(k)] = t_min + (tau - t_min) * k / (T - 1);
    grid.back() = tau;
    return grid;
}

double prediction_error(const EventDataset& heldout, const FitResult& fit, const CensoringModel& censoring,
                        const std::vector<double>& grid) {
    std::vector<Eigen::VectorXd> beta;
    beta.reserve(grid.size());
    for (double s : grid) beta.push_back(beta_at(fit.gamma, fit.spec.basis, s));
    double total = 0.0;
    for (const auto& subj : heldout.subjects) {
        double prev = 0.0;
        for (std::size_t k = 0; k < grid.size(); ++k) {
            const double s = grid[k];
            const double w = ipcw_weight(censoring, subj, s, fit.spec.positivity_floor);
            double f = 0.0;
            if (w > 0.0) {
                const double mu = LinkFunction::inverse(fit.spec.link, beta[k].dot(subj.z));
                const double r = w * (cumulative_loss(subj, fit.spec.weights, s) - mu * std::min(subj.U, s));
                f = r * r;
            }
            if (k > 0) total += 0.5 * (grid[k] - grid[k - 1]) * (prev + f);
            prev = f;
        }
    }
    return total;
}

namespace {

bool uses_degree(BasisFamily f) {
    return f == BasisFamily::bspline || f == BasisFamily::mspline || f == BasisFamily::piecewise_poly;
}

double empirical_quantile(std::vector<double> values, double prob) {
    std::sort(values.begin(), values.end());
    const double pos = prob * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace

std::vector<CvConfig> enumerate_configs(const CvGrid& grid) {
    std::vector<CvConfig> out;
    for (BasisFamily f : grid.families) {
        const std::vector<int> degrees = uses_degree(f) ? grid.degrees : std::vector<int>{0};
        const std::vector<int> n_int = f == BasisFamily::time_fixed ? std::vector<int>{0} : grid.n_interior;
        for (int d : degrees)
            for (int k : n_int)
                for (Link l : grid.links) out.push_back({f, d, k, l});
    }
    if (out.empty()) throw std::invalid_argument("cross-validation grid has no configurations");
    return out;
}

std::vector<double> config_knots(const CvConfig& config, KnotScheme scheme, double t_min, double tau,
                                 const std::vector<double>& follow_up) {
    if (config.family == BasisFamily::time_fixed) return {t_min, tau};
    std::vector<double> interior;
    const int m = config.n_interior;
    if (scheme == KnotScheme::equidistant) {
        for (int k = 1; k <= m; ++k) interior.push_back(t_min + (tau - t_min) * k / (m + 1));
    } else {
        std::vector<double> inside;
        for (double u : follow_up)
            if (u > t_min && u < tau) inside.push_back(u);
        if (inside.size() < static_cast<std::size_t>(m)) throw CvError("too few follow-up times for quantile knots");
        for (int k = 1; k <= m; ++k) interior.push_back(empirical_quantile(inside, static_cast<double>(k) / (m + 1)));
    }
    std::vector<double> knots{t_min};
    knots.insert(knots.end(), interior.begin(), interior.end());
    if (config.family != BasisFamily::step) knots.push_back(tau);
    for (std::size_t k = 1; k < knots.size(); ++k)
        if (!(knots[k] > knots[k - 1])) throw CvError("knot placement produced tied knots");
    return knots;
}

double default_tau(const EventDataset& data) {
    std::vector<double> u;
    for (const auto& s : data.subjects) u.push_back(s.U);
    return empirical_quantile(u, 0.9);
}

CvResult select(const EventDataset& data, const CvGrid& grid) {
    CvResult result;
    result.t_min = grid.time_range ? grid.time_range->first : 0.0;
    result.tau = grid.time_range ? grid.time_range->second : default_tau(data);
    if (!(result.tau > result.t_min) || result.t_min < 0.0) throw std::invalid_argument("invalid time range");
    if (grid.T < 2) throw std::invalid_argument("integration grid size must be at least 2");

    const auto configs = enumerate_configs(grid);
    const auto folds = assign_folds(data, grid.K, grid.seed);
    const auto int_grid = integration_grid(result.t_min, result.tau, grid.T);
    std::vector<double> stacking;
    if (grid.tau_grid) {
        stacking = *grid.tau_grid;
    } else {
        for (int k = 1; k <= 10; ++k) stacking.push_back(result.t_min + (result.tau - result.t_min) * k / 10.0);
    }

    std::vector<EventDataset> train(static_cast<std::size_t>(grid.K)), test(static_cast<std::size_t>(grid.K));
    for (int b = 0; b < grid.K; ++b) {
        std::vector<std::size_t> in, out;
        for (std::size_t i = 0; i < data.n(); ++i) (folds[i] == b ? out : in).push_back(i);
        train[static_cast<std::size_t>(b)] = subset(data, in);
        test[static_cast<std::size_t>(b)] = subset(data, out);
    }

    const std::size_t tasks = configs.size() * static_cast<std::size_t>(grid.K);
    std::vector<double> pe(tasks, 0.0);
    std::vector<std::string> failure(tasks);
    std::vector<int> knot_count(tasks, 0);
    parallel_for(tasks, grid.threads, [&](std::size_t task) {
        const CvConfig& cfg = configs[task / static_cast<std::size_t>(grid.K)];
        const auto b = task % static_cast<std::size_t>(grid.K);
        try {
            std::vector<double> follow_up;
            for (const auto& s : train[b].subjects) follow_up.push_back(s.U);
            FitSpec spec;
            spec.basis.family = cfg.family;
            spec.basis.degree = cfg.degree;
            spec.basis.knots = config_knots(cfg, grid.knot_scheme, result.t_min, result.tau, follow_up);
            knot_count[task] = static_cast<int>(spec.basis.knots.size());
            spec.tau_grid = stacking;
            spec.weights = grid.weights;
            spec.link = cfg.link;
            spec.censoring = grid.censoring;
            spec.compute_variance = false;
            const CensoringModel censoring = fit_censoring(train[b], grid.censoring);
            const FitResult fit = solve(train[b], spec, censoring);
            pe[task] = prediction_error(test[b], fit, censoring, int_grid);
        } catch (const std::exception& e) {
            failure[task] = "fold " + std::to_string(b + 1) + ": " + e.what();
        }
    });

    bool any_ok = false;
    for (std::size_t c = 0; c < configs.size(); ++c) {
        CvEntry entry;
        entry.config = configs[c];
        for (int b = 0; b < grid.K; ++b) {
            const std::size_t task = c * static_cast<std::size_t>(grid.K) + static_cast<std::size_t>(b);
            entry.n_knots = std::max(entry.n_knots, knot_count[task]);
            if (!failure[task].empty() && entry.ok) {
                entry.ok = false;
                entry.failure = failure[task];
            }
            entry.fold_pe.push_back(pe[task]);
            entry.pe += pe[task];
        }
        if (!entry.ok) entry.pe = std::nan("");
        if (entry.ok) {
            const bool better = !any_ok || [&] {
                const CvEntry& best = result.entries[result.selected];
                if (entry.pe != best.pe) return entry.pe < best.pe;
                if (entry.n_knots != best.n_knots) return entry.n_knots < best.n_knots;
                return entry.config.degree < best.config.degree;
            }();
            if (better) result.selected = c;
            any_ok = true;
        }
        result.entries.push_back(std::move(entry));
    }
    if (!any_ok) throw CvError("every configuration failed on at least one split: " + result.entries.front().failure);
    return result;
}

}  // namespace wa
