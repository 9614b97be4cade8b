#include "whilealive/estimator.hpp"

#include "whilealive/variance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace wa {

Link parse_link(const std::string& name) {
    if (name == "log") return Link::log;
    if (name == "identity" || name == "id") return Link::identity;
    throw std::invalid_argument("unknown link '" + name + "' (expected log or identity)");
}

std::string link_name(Link link) { return link == Link::log ? "log" : "identity"; }

double LinkFunction::link(Link l, double mu) { return l == Link::log ? std::log(mu) : mu; }
double LinkFunction::inverse(Link l, double x) { return l == Link::log ? std::exp(x) : x; }
double LinkFunction::inverse_derivative(Link l, double x) { return l == Link::log ? std::exp(x) : 1.0; }

void FitSpec::validate(const EventDataset& data) const {
    basis.validate();
    weights.validate(data.K);
    if (tau_grid.empty()) throw std::invalid_argument("stacking grid is empty");
    for (std::size_t v = 0; v < tau_grid.size(); ++v) {
        if (!(tau_grid[v] > 0.0)) throw std::invalid_argument("stacking times must be positive");
        if (v > 0 && tau_grid[v] <= tau_grid[v - 1]) throw std::invalid_argument("stacking times must be strictly increasing");
    }
    if (weight_cap_quantile && !(*weight_cap_quantile > 0.0 && *weight_cap_quantile <= 1.0))
        throw std::invalid_argument("weight cap quantile must lie in (0, 1]");
    if (data.subjects.empty()) throw std::invalid_argument("no subjects");
}

namespace {

double quantile_of(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/** Concave objective whose gradient is the stacked score, used for step-halving. */
double objective(const Eigen::VectorXd& gamma, const StackedProblem& pr) {
    const Eigen::VectorXd lp = pr.design * gamma;
    double q = 0.0;
    for (std::size_t r = 0; r < pr.rows(); ++r) {
        const double x = lp[static_cast<Eigen::Index>(r)];
        const double h = pr.link == Link::log ? std::exp(x) : 0.5 * x * x;
        q += pr.weight[r] * (x * pr.loss[r] - h * pr.exposure[r]);
    }
    return q / pr.n_units;
}

bool singular_negative_jacobian(const Eigen::MatrixXd& omega) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(omega, Eigen::EigenvaluesOnly);
    const double max_ev = eig.eigenvalues().cwiseAbs().maxCoeff();
    return !(max_ev > 0.0) || !(eig.eigenvalues().minCoeff() > 1e-12 * max_ev);
}

int intercept_column(const EventDataset& data) {
    for (int j = 0; j < data.p; ++j) {
        bool all_one = true;
        for (const auto& s : data.subjects)
            if (s.z[j] != 1.0) {
                all_one = false;
                break;
            }
        if (all_one) return j;
    }
    return -1;
}

}  // namespace

StackedProblem build_problem(const EventDataset& data, const FitSpec& spec, const CensoringModel& censoring) {
    spec.validate(data);
    const double max_u = data.max_time();
    // Past every follow-up only deaths carry weight; with no deaths all rows vanish and
    // the rank check in the solver reports the degeneracy instead.
    const bool any_death = std::any_of(data.subjects.begin(), data.subjects.end(), [](const SubjectData& s) { return s.delta; });
    for (double t : spec.tau_grid)
        if (t > max_u && any_death) {
            std::ostringstream msg;
            msg << "stacking time " << t << " exceeds the largest observed follow-up " << max_u;
            throw EstimationError(EstimationError::Kind::degenerate_weights, msg.str());
        }

    StackedProblem pr;
    pr.p = data.p;
    pr.R = spec.basis.dimension();
    pr.n_units = static_cast<double>(data.n_units());
    pr.link = spec.link;
    const int pR = pr.p * pr.R;
    const double floor = spec.weight_cap_quantile ? 0.0 : spec.positivity_floor;

    std::vector<Eigen::VectorXd> basis_at;
    for (double t : spec.tau_grid) basis_at.push_back(evaluate_basis(spec.basis, t));

    std::vector<Eigen::VectorXd> rows;
    for (std::size_t i = 0; i < data.subjects.size(); ++i) {
        const auto& s = data.subjects[i];
        for (std::size_t v = 0; v < spec.tau_grid.size(); ++v) {
            const double t = spec.tau_grid[v];
            double w = 0.0;
            if (spec.weight_cap_quantile) {
                if (s.U > t || s.delta) w = 1.0 / std::max(survival_at(censoring, std::min(s.U, t), s.z), 1e-300);
            } else {
                w = ipcw_weight(censoring, s, t, floor);
            }
            if (w <= 0.0) continue;
            pr.subject.push_back(static_cast<int>(i));
            pr.batch.push_back(static_cast<int>(v));
            pr.weight.push_back(w);
            pr.loss.push_back(cumulative_loss(s, spec.weights, t));
            pr.exposure.push_back(std::min(s.U, t));
            rows.push_back(expand_design(s.z, basis_at[v]));
        }
    }
    if (spec.weight_cap_quantile && !pr.weight.empty()) {
        const double cap = quantile_of(pr.weight, *spec.weight_cap_quantile);
        for (double& w : pr.weight) w = std::min(w, cap);
    }
    pr.design.resize(static_cast<Eigen::Index>(rows.size()), pR);
    for (std::size_t r = 0; r < rows.size(); ++r) pr.design.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    return pr;
}

Eigen::VectorXd stacked_score(const Eigen::VectorXd& gamma, const StackedProblem& pr) {
    const Eigen::VectorXd lp = pr.design * gamma;
    Eigen::VectorXd coef(static_cast<Eigen::Index>(pr.rows()));
    for (std::size_t r = 0; r < pr.rows(); ++r) {
        const auto k = static_cast<Eigen::Index>(r);
        coef[k] = pr.weight[r] * (pr.loss[r] - LinkFunction::inverse(pr.link, lp[k]) * pr.exposure[r]);
    }
    return pr.design.transpose() * coef / pr.n_units;
}

Eigen::MatrixXd score_jacobian(const Eigen::VectorXd& gamma, const StackedProblem& pr) {
    const Eigen::VectorXd lp = pr.design * gamma;
    Eigen::VectorXd d(static_cast<Eigen::Index>(pr.rows()));
    for (std::size_t r = 0; r < pr.rows(); ++r) {
        const auto k = static_cast<Eigen::Index>(r);
        d[k] = pr.weight[r] * LinkFunction::inverse_derivative(pr.link, lp[k]) * pr.exposure[r];
    }
    Eigen::MatrixXd jac = -(pr.design.transpose() * d.asDiagonal() * pr.design) / pr.n_units;
    return 0.5 * (jac + jac.transpose());
}

Eigen::VectorXd stacked_score(const Eigen::VectorXd& gamma, const EventDataset& data, const FitSpec& spec,
                              const CensoringModel& censoring) {
    return stacked_score(gamma, build_problem(data, spec, censoring));
}

Eigen::MatrixXd score_jacobian(const Eigen::VectorXd& gamma, const EventDataset& data, const FitSpec& spec,
                               const CensoringModel& censoring) {
    return score_jacobian(gamma, build_problem(data, spec, censoring));
}

CensoringModel fit_censoring(const EventDataset& data, const CensoringSpec& spec, std::vector<std::string>* diagnostics) {
    if (spec.kind == CensoringKind::kaplan_meier) return fit_km_censoring(data, spec.strata);
    if (!data.any_censoring()) {
        if (diagnostics) diagnostics->push_back("no censoring events: using G = 1 in place of the Cox censoring model");
        CensoringModel model = no_censoring_model(CensoringKind::cox);
        model.covariate_names = spec.covariates;
        return model;
    }
    return fit_cox_censoring(data, spec.covariates);
}

FitResult solve(const EventDataset& data, const FitSpec& spec) {
    std::vector<std::string> diagnostics;
    CensoringModel censoring = fit_censoring(data, spec.censoring, &diagnostics);
    FitResult fit = solve(data, spec, censoring);
    fit.diagnostics.insert(fit.diagnostics.begin(), diagnostics.begin(), diagnostics.end());
    return fit;
}

FitResult solve(const EventDataset& data, const FitSpec& spec, const CensoringModel& censoring) {
    const StackedProblem pr = build_problem(data, spec, censoring);
    const int pR = pr.p * pr.R;

    if (spec.link == Link::log) {
        bool any_loss = false;
        for (std::size_t r = 0; r < pr.rows() && !any_loss; ++r) any_loss = pr.loss[r] > 0.0;
        if (!any_loss) throw EstimationError(EstimationError::Kind::no_root_log_link, "score has no root under log link");
    }

    Eigen::VectorXd gamma = Eigen::VectorXd::Zero(pR);
    const int icol = intercept_column(data);
    if (spec.link == Link::log && icol >= 0) {
        const double tau = spec.tau_grid.back();
        double total_loss = 0.0, total_time = 0.0;
        for (const auto& s : data.subjects) {
            total_loss += cumulative_loss(s, spec.weights, tau);
            total_time += std::min(s.U, tau);
        }
        if (total_loss > 0.0 && total_time > 0.0) {
            Eigen::MatrixXd jmat(static_cast<Eigen::Index>(spec.tau_grid.size()), pr.R);
            for (std::size_t v = 0; v < spec.tau_grid.size(); ++v)
                jmat.row(static_cast<Eigen::Index>(v)) = evaluate_basis(spec.basis, spec.tau_grid[v]).transpose();
            const Eigen::VectorXd target =
                Eigen::VectorXd::Constant(static_cast<Eigen::Index>(spec.tau_grid.size()), std::log(total_loss / total_time));
            gamma.segment(icol * pr.R, pr.R) = jmat.completeOrthogonalDecomposition().solve(target);
        }
    }

    Eigen::VectorXd score = stacked_score(gamma, pr);
    double value = objective(gamma, pr);
    int iter = 0;
    bool converged = false;
    while (true) {
        if (score.cwiseAbs().maxCoeff() <= spec.tolerance) {
            converged = true;
            break;
        }
        if (iter >= spec.max_iterations) break;
        const Eigen::MatrixXd omega = -score_jacobian(gamma, pr);
        if (singular_negative_jacobian(omega))
            throw EstimationError(EstimationError::Kind::singular_jacobian,
                                  "singular Jacobian: the stacked design is rank deficient on the stacking grid");
        const Eigen::VectorXd step = omega.ldlt().solve(score);
        ++iter;
        double factor = 1.0;
        Eigen::VectorXd candidate = gamma + step;
        double cand_value = objective(candidate, pr);
        for (int h = 0; h < spec.max_halvings && !(cand_value >= value - 1e-14 * std::abs(value)); ++h) {
            factor *= 0.5;
            candidate = gamma + factor * step;
            cand_value = objective(candidate, pr);
        }
        if (!std::isfinite(cand_value)) break;
        gamma = candidate;
        value = cand_value;
        score = stacked_score(gamma, pr);
    }
    if (!converged) {
        std::ostringstream msg;
        msg << "stacked estimating equation did not converge after " << iter << " iterations (score max-norm "
            << score.cwiseAbs().maxCoeff() << ")";
        throw EstimationError(EstimationError::Kind::non_convergence, msg.str());
    }

    FitResult fit;
    fit.gamma = gamma;
    fit.p = pr.p;
    fit.R = pr.R;
    fit.n_subjects = data.n();
    fit.n_units = data.n_units();
    fit.cluster_mode = data.cluster_mode;
    fit.iterations = iter;
    fit.score_norm = score.cwiseAbs().maxCoeff();
    fit.spec = spec;
    fit.covariate_names = data.covariate_names;
    fit.censoring = censoring;
    fit.omega = omega_hat(gamma, pr);
    if (singular_negative_jacobian(fit.omega))
        throw EstimationError(EstimationError::Kind::singular_jacobian, "singular Jacobian at the solution");
    if (spec.compute_variance) {
        const InfluenceDecomposition inf = influence(gamma, pr, data, censoring);
        const SandwichVariance sw = data.cluster_mode ? sandwich(fit.omega, inf.phi, data.cluster_index, data.n_clusters)
                                                      : sandwich(fit.omega, inf.phi);
        fit.meat = sw.meat;
        fit.vcov = sw.vcov;
        fit.vcov_available = true;
    }
    return fit;
}

LandmarkResult fit_landmark(const EventDataset& data, double t, const WeightScheme& weights, Link link,
                            const CensoringSpec& censoring) {
    FitSpec spec;
    spec.basis.family = BasisFamily::time_fixed;
    spec.basis.knots = {0.0, t};
    spec.tau_grid = {t};
    spec.weights = weights;
    spec.link = link;
    spec.censoring = censoring;
    LandmarkResult out;
    out.fit = solve(data, spec);
    out.beta = out.fit.gamma;
    out.vcov = out.fit.vcov;
    return out;
}

}  // namespace wa
