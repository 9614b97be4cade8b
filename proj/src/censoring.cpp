#include "whilealive/censoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace wa {

std::size_t CensoringStratum::jumps_before(double t) const {
    return static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), t) - times.begin());
}

std::size_t CensoringStratum::jumps_through(double t) const {
    return static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
}

Eigen::VectorXd CensoringModel::censoring_covariates(const Eigen::VectorXd& z) const {
    Eigen::VectorXd x(static_cast<Eigen::Index>(columns.size()));
    for (std::size_t j = 0; j < columns.size(); ++j) x[static_cast<Eigen::Index>(j)] = z[columns[j]];
    return x;
}

double CensoringModel::risk_score(const Eigen::VectorXd& z) const {
    if (columns.empty()) return 1.0;
    return std::exp(theta.dot(censoring_covariates(z)));
}

std::size_t CensoringModel::stratum_of(const Eigen::VectorXd& z) const {
    if (!strata_column) return 0;
    const double value = z[*strata_column];
    auto it = std::find(strata_values.begin(), strata_values.end(), value);
    if (it == strata_values.end()) {
        std::ostringstream msg;
        msg << "censoring stratum value " << value << " was not seen when fitting";
        throw CensoringError(CensoringError::Kind::unknown_stratum, msg.str());
    }
    return static_cast<std::size_t>(it - strata_values.begin());
}

namespace {

int column_of(const EventDataset& data, const std::string& name) {
    auto it = std::find(data.covariate_names.begin(), data.covariate_names.end(), name);
    if (it == data.covariate_names.end()) throw std::invalid_argument("censoring covariate '" + name + "' not in data");
    return static_cast<int>(it - data.covariate_names.begin());
}

std::vector<std::size_t> order_by_time(const EventDataset& data, const std::vector<std::size_t>& members) {
    std::vector<std::size_t> idx = members;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return data.subjects[a].U < data.subjects[b].U; });
    return idx;
}

/** Risk-set sums over distinct censoring times, scanning from the largest time down. */
CensoringStratum build_stratum(const EventDataset& data, const std::vector<std::size_t>& members, const CensoringModel& model) {
    const auto q = static_cast<Eigen::Index>(model.q());
    const auto idx = order_by_time(data, members);
    CensoringStratum st;
    std::vector<Eigen::VectorXd> s1_cols;
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(q);
    std::size_t pos = idx.size();
    while (pos > 0) {
        const double u = data.subjects[idx[pos - 1]].U;
        double d = 0.0;
        while (pos > 0 && data.subjects[idx[pos - 1]].U == u) {
            const auto& s = data.subjects[idx[pos - 1]];
            const double r = model.risk_score(s.z);
            s0 += r;
            if (q > 0) s1 += r * model.censoring_covariates(s.z);
            if (!s.delta) d += 1.0;
            --pos;
        }
        if (d > 0.0) {
            st.times.push_back(u);
            st.events.push_back(d);
            st.s0.push_back(s0);
            s1_cols.push_back(s1);
        }
    }
    std::reverse(st.times.begin(), st.times.end());
    std::reverse(st.events.begin(), st.events.end());
    std::reverse(st.s0.begin(), st.s0.end());
    std::reverse(s1_cols.begin(), s1_cols.end());
    const std::size_t m = st.times.size();
    st.s1.resize(q, static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < m; ++k) st.s1.col(static_cast<Eigen::Index>(k)) = s1_cols[k];
    st.dlambda.resize(m);
    st.cumhaz.resize(m);
    st.surv_after.resize(m);
    double cum = 0.0, surv = 1.0;
    for (std::size_t k = 0; k < m; ++k) {
        st.dlambda[k] = st.events[k] / st.s0[k];
        cum += st.dlambda[k];
        surv *= 1.0 - st.dlambda[k];
        st.cumhaz[k] = cum;
        st.surv_after[k] = surv;
    }
    return st;
}

struct PartialLikelihood {
    double loglik = 0.0;
    Eigen::VectorXd score;
    Eigen::MatrixXd info;
};

PartialLikelihood evaluate_partial_likelihood(const std::vector<Eigen::VectorXd>& x, const std::vector<double>& time,
                                              const std::vector<bool>& censored, const std::vector<std::size_t>& order,
                                              const Eigen::VectorXd& theta) {
    const Eigen::Index q = theta.size();
    PartialLikelihood pl;
    pl.score = Eigen::VectorXd::Zero(q);
    pl.info = Eigen::MatrixXd::Zero(q, q);
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(q);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(q, q);
    std::size_t pos = order.size();
    while (pos > 0) {
        const double u = time[order[pos - 1]];
        double d = 0.0;
        Eigen::VectorXd xsum = Eigen::VectorXd::Zero(q);
        while (pos > 0 && time[order[pos - 1]] == u) {
            const std::size_t i = order[pos - 1];
            const double lp = theta.dot(x[i]);
            const double r = std::exp(lp);
            s0 += r;
            s1 += r * x[i];
            s2.noalias() += r * x[i] * x[i].transpose();
            if (censored[i]) {
                d += 1.0;
                xsum += x[i];
                pl.loglik += lp;
            }
            --pos;
        }
        if (d > 0.0) {
            const Eigen::VectorXd zbar = s1 / s0;
            pl.loglik -= d * std::log(s0);
            pl.score += xsum - d * zbar;
            pl.info += d * (s2 / s0 - zbar * zbar.transpose());
        }
    }
    return pl;
}

bool is_singular(const Eigen::MatrixXd& info) {
    if (info.size() == 0) return false;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info, Eigen::EigenvaluesOnly);
    const double max_ev = eig.eigenvalues().cwiseAbs().maxCoeff();
    return !(eig.eigenvalues().minCoeff() > 1e-10 * std::max(1.0, max_ev));
}

}  // namespace

CensoringModel fit_km_censoring(const EventDataset& data, std::optional<std::string> strata_covariate) {
    if (data.subjects.empty()) throw std::invalid_argument("censoring fit needs at least one subject");
    CensoringModel model;
    model.kind = CensoringKind::kaplan_meier;
    std::vector<std::vector<std::size_t>> members(1);
    if (strata_covariate) {
        model.strata_column = column_of(data, *strata_covariate);
        members.clear();
        for (std::size_t i = 0; i < data.subjects.size(); ++i) {
            const double value = data.subjects[i].z[*model.strata_column];
            auto it = std::find(model.strata_values.begin(), model.strata_values.end(), value);
            if (it == model.strata_values.end()) {
                model.strata_values.push_back(value);
                members.emplace_back();
                it = model.strata_values.end() - 1;
            }
            members[static_cast<std::size_t>(it - model.strata_values.begin())].push_back(i);
        }
    } else {
        members[0].resize(data.subjects.size());
        std::iota(members[0].begin(), members[0].end(), std::size_t{0});
    }
    for (const auto& m : members) model.strata.push_back(build_stratum(data, m, model));
    return model;
}

CensoringModel no_censoring_model(CensoringKind kind) {
    CensoringModel model;
    model.kind = kind;
    model.strata.emplace_back();
    return model;
}

CensoringModel fit_cox_censoring(const EventDataset& data, const std::vector<std::string>& covariates, const CoxOptions& options) {
    if (data.subjects.empty()) throw std::invalid_argument("censoring fit needs at least one subject");
    if (!data.any_censoring())
        throw CensoringError(CensoringError::Kind::no_censoring_events, "Cox censoring model: no censoring events");
    CensoringModel model;
    model.kind = CensoringKind::cox;
    model.covariate_names = covariates;
    for (const auto& name : covariates) model.columns.push_back(column_of(data, name));
    const auto q = static_cast<Eigen::Index>(covariates.size());
    model.theta = Eigen::VectorXd::Zero(q);

    const std::size_t n = data.subjects.size();
    std::vector<Eigen::VectorXd> x(n);
    std::vector<double> time(n);
    std::vector<bool> censored(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = model.censoring_covariates(data.subjects[i].z);
        time[i] = data.subjects[i].U;
        censored[i] = !data.subjects[i].delta;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return time[a] < time[b]; });

    const double scale = 1.0 / static_cast<double>(n);
    PartialLikelihood pl = evaluate_partial_likelihood(x, time, censored, order, model.theta);
    bool converged = q == 0;
    int iter = 0;
    while (!converged && iter < options.max_iterations) {
        if (is_singular(pl.info)) {
            if (iter == 0)
                throw CensoringError(CensoringError::Kind::singular_information, "Cox censoring model: singular information matrix");
            // Information vanishing along the path means θ is running off to infinity.
            break;
        }
        const Eigen::VectorXd step = pl.info.ldlt().solve(pl.score);
        if (pl.score.cwiseAbs().maxCoeff() * scale <= options.tolerance && step.cwiseAbs().maxCoeff() <= options.step_tolerance) {
            converged = true;
            break;
        }
        ++iter;
        double factor = 1.0;
        Eigen::VectorXd candidate = model.theta + step;
        PartialLikelihood next = evaluate_partial_likelihood(x, time, censored, order, candidate);
        for (int h = 0; h < options.max_halvings && !(next.loglik >= pl.loglik - 1e-12 * std::abs(pl.loglik)); ++h) {
            factor *= 0.5;
            candidate = model.theta + factor * step;
            next = evaluate_partial_likelihood(x, time, censored, order, candidate);
        }
        model.theta = candidate;
        pl = std::move(next);
    }
    if (!converged)
        throw CensoringError(CensoringError::Kind::non_convergence,
                             "Cox censoring model did not converge in " + std::to_string(options.max_iterations) +
                                 " iterations (possible monotone likelihood)");
    model.iterations = iter;
    model.score_norm = q > 0 ? pl.score.cwiseAbs().maxCoeff() * scale : 0.0;
    model.information = pl.info;

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    model.strata.push_back(build_stratum(data, all, model));
    return model;
}

double survival_at(const CensoringModel& model, double t, const Eigen::VectorXd& z) {
    const CensoringStratum& st = model.strata[model.stratum_of(z)];
    const std::size_t k = st.jumps_before(t);
    if (k == 0) return 1.0;
    if (model.kind == CensoringKind::kaplan_meier) return std::max(0.0, st.surv_after[k - 1]);
    return std::exp(-st.cumhaz[k - 1] * model.risk_score(z));
}

double ipcw_weight(const CensoringModel& model, const SubjectData& subject, double t, double epsilon) {
    const bool numerator = subject.U > t || subject.delta;
    if (!numerator) return 0.0;
    const double g = survival_at(model, std::min(subject.U, t), subject.z);
    if (g < epsilon) {
        std::ostringstream msg;
        msg << "positivity violation: G(" << std::min(subject.U, t) << ") = " << g << " < " << epsilon << " for subject "
            << subject.id;
        throw PositivityError(msg.str());
    }
    return 1.0 / g;
}

StepFunction martingale_residual_path(const CensoringModel& model, const SubjectData& subject) {
    const CensoringStratum& st = model.strata[model.stratum_of(subject.z)];
    const double r = model.risk_score(subject.z);
    StepFunction path;
    path.times = st.times;
    path.values.resize(st.times.size());
    double compensator = 0.0;
    for (std::size_t k = 0; k < st.times.size(); ++k) {
        if (st.times[k] <= subject.U) compensator += r * st.dlambda[k];
        const double counting = (!subject.delta && subject.U <= st.times[k]) ? 1.0 : 0.0;
        path.values[k] = counting - compensator;
    }
    return path;
}

}  // namespace wa
