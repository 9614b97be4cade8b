#include "whilealive/variance.hpp"

#include <cmath>

namespace wa {

Eigen::MatrixXd omega_hat(const Eigen::VectorXd& gamma, const StackedProblem& problem) {
    return -score_jacobian(gamma, problem);
}

namespace {

InfluenceDecomposition influence_core(const Eigen::VectorXd& gamma, const StackedProblem& pr, const EventDataset& data,
                                      const CensoringModel& model) {
    const std::size_t n = data.n();
    const Eigen::Index pR = static_cast<Eigen::Index>(pr.p) * pr.R;
    const auto q = static_cast<Eigen::Index>(model.q());
    const bool with_theta = model.kind == CensoringKind::cox && q > 0;

    InfluenceDecomposition out;
    out.varpi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), pR);
    out.theta_term = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), pR);
    out.baseline_term = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), pR);
    out.xi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), with_theta ? q : 0);
    out.kappa_theta = Eigen::MatrixXd::Zero(pR, with_theta ? q : 0);

    std::vector<std::size_t> stratum(n);
    std::vector<double> risk(n);
    std::vector<Eigen::VectorXd> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        stratum[i] = model.stratum_of(data.subjects[i].z);
        risk[i] = model.risk_score(data.subjects[i].z);
        if (with_theta) x[i] = model.censoring_covariates(data.subjects[i].z);
    }

    // Prefix sums per stratum: lam[k] = Σ_{k'<k} dΛ, abar[k] = Σ_{k'<k} z̄ dΛ.
    const std::size_t n_strata = model.strata.size();
    std::vector<std::vector<double>> lam(n_strata);
    std::vector<Eigen::MatrixXd> abar(n_strata);
    for (std::size_t s = 0; s < n_strata; ++s) {
        const auto& st = model.strata[s];
        const std::size_t m = st.times.size();
        lam[s].assign(m + 1, 0.0);
        abar[s] = Eigen::MatrixXd::Zero(with_theta ? q : 0, static_cast<Eigen::Index>(m + 1));
        for (std::size_t k = 0; k < m; ++k) {
            lam[s][k + 1] = lam[s][k] + st.dlambda[k];
            if (with_theta)
                abar[s].col(static_cast<Eigen::Index>(k + 1)) =
                    abar[s].col(static_cast<Eigen::Index>(k)) + st.s1.col(static_cast<Eigen::Index>(k)) / st.s0[k] * st.dlambda[k];
        }
    }

    // Pass over stacked rows: direct term, κ_Λ buckets, κ_θ accumulation.
    std::vector<Eigen::MatrixXd> bucket(n_strata);
    for (std::size_t s = 0; s < n_strata; ++s)
        bucket[s] = Eigen::MatrixXd::Zero(pR, static_cast<Eigen::Index>(model.strata[s].times.size() + 1));
    Eigen::MatrixXd kt_sum = Eigen::MatrixXd::Zero(pR, with_theta ? q : 0);
    const Eigen::VectorXd lp = pr.design * gamma;
    for (std::size_t r = 0; r < pr.rows(); ++r) {
        const auto i = static_cast<std::size_t>(pr.subject[r]);
        const double res = pr.loss[r] - LinkFunction::inverse(pr.link, lp[static_cast<Eigen::Index>(r)]) * pr.exposure[r];
        const Eigen::VectorXd a = pr.weight[r] * res * pr.design.row(static_cast<Eigen::Index>(r)).transpose();
        out.varpi.row(static_cast<Eigen::Index>(i)) += a.transpose();
        const std::size_t s = stratum[i];
        const std::size_t idx = model.strata[s].jumps_before(pr.exposure[r]);
        const Eigen::VectorXd c = risk[i] * a;
        bucket[s].col(static_cast<Eigen::Index>(idx)) += c;
        if (with_theta && idx > 0)
            kt_sum.noalias() += c * (lam[s][idx] * x[i] - abar[s].col(static_cast<Eigen::Index>(idx))).transpose();
    }

    // K_s(u_k) = Σ over rows whose exposure lies strictly after u_k.
    out.kappa_lambda.resize(n_strata);
    std::vector<Eigen::MatrixXd> prefix(n_strata);  // P[k] = Σ_{k'<k} dΛ K / s0
    for (std::size_t s = 0; s < n_strata; ++s) {
        const auto& st = model.strata[s];
        const std::size_t m = st.times.size();
        Eigen::MatrixXd& K = out.kappa_lambda[s];
        K = Eigen::MatrixXd::Zero(pR, static_cast<Eigen::Index>(m));
        Eigen::VectorXd running = Eigen::VectorXd::Zero(pR);
        for (std::size_t k = m; k-- > 0;) {
            running += bucket[s].col(static_cast<Eigen::Index>(k + 1));
            K.col(static_cast<Eigen::Index>(k)) = running;
        }
        prefix[s] = Eigen::MatrixXd::Zero(pR, static_cast<Eigen::Index>(m + 1));
        for (std::size_t k = 0; k < m; ++k)
            prefix[s].col(static_cast<Eigen::Index>(k + 1)) =
                prefix[s].col(static_cast<Eigen::Index>(k)) + K.col(static_cast<Eigen::Index>(k)) * (st.dlambda[k] / st.s0[k]);
    }

    if (with_theta) {
        const Eigen::LDLT<Eigen::MatrixXd> info(model.information);
        if (info.info() != Eigen::Success || !(info.vectorD().minCoeff() > 0.0))
            throw VarianceError("censoring information matrix is singular");
        out.kappa_theta = info.solve(kt_sum.transpose()).transpose();
    }

    for (std::size_t i = 0; i < n; ++i) {
        const auto& subj = data.subjects[i];
        const std::size_t s = stratum[i];
        const auto& st = model.strata[s];
        const std::size_t through = st.jumps_through(subj.U);
        const bool censored_jump = !subj.delta && through > 0 && st.times[through - 1] == subj.U;
        Eigen::VectorXd base = -risk[i] * prefix[s].col(static_cast<Eigen::Index>(through));
        if (censored_jump) base += out.kappa_lambda[s].col(static_cast<Eigen::Index>(through - 1)) / st.s0[through - 1];
        out.baseline_term.row(static_cast<Eigen::Index>(i)) = base.transpose();
        if (with_theta) {
            Eigen::VectorXd xi = -risk[i] * (lam[s][through] * x[i] - abar[s].col(static_cast<Eigen::Index>(through)));
            if (censored_jump) xi += x[i] - st.s1.col(static_cast<Eigen::Index>(through - 1)) / st.s0[through - 1];
            out.xi.row(static_cast<Eigen::Index>(i)) = xi.transpose();
            out.theta_term.row(static_cast<Eigen::Index>(i)) = (out.kappa_theta * xi).transpose();
        }
    }
    out.phi = out.varpi + out.theta_term + out.baseline_term;
    return out;
}

Eigen::MatrixXd sandwich_matrix(const Eigen::MatrixXd& omega, const Eigen::MatrixXd& meat, double units) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(omega);
    if (!lu.isInvertible()) throw VarianceError("singular Omega: variance unavailable");
    const Eigen::MatrixXd inv = lu.inverse();
    Eigen::MatrixXd v = inv * meat * inv.transpose() / units;
    return 0.5 * (v + v.transpose());
}

}  // namespace

InfluenceDecomposition influence_cox(const Eigen::VectorXd& gamma, const StackedProblem& problem, const EventDataset& data,
                                     const CensoringModel& cox_model) {
    if (cox_model.kind != CensoringKind::cox) throw std::invalid_argument("influence_cox needs a Cox censoring model");
    return influence_core(gamma, problem, data, cox_model);
}

InfluenceDecomposition influence_km(const Eigen::VectorXd& gamma, const StackedProblem& problem, const EventDataset& data,
                                    const CensoringModel& km_model) {
    if (km_model.kind != CensoringKind::kaplan_meier) throw std::invalid_argument("influence_km needs a product-limit model");
    return influence_core(gamma, problem, data, km_model);
}

InfluenceDecomposition influence(const Eigen::VectorXd& gamma, const StackedProblem& problem, const EventDataset& data,
                                 const CensoringModel& model) {
    return influence_core(gamma, problem, data, model);
}

SandwichVariance sandwich(const Eigen::MatrixXd& omega, const Eigen::MatrixXd& phi) {
    const double n = static_cast<double>(phi.rows());
    SandwichVariance out;
    out.omega = omega;
    out.meat = phi.transpose() * phi / n;
    out.vcov = sandwich_matrix(omega, out.meat, n);
    return out;
}

SandwichVariance sandwich(const Eigen::MatrixXd& omega, const Eigen::MatrixXd& phi, const std::vector<int>& cluster_index,
                          int n_clusters) {
    if (static_cast<Eigen::Index>(cluster_index.size()) != phi.rows())
        throw std::invalid_argument("cluster sandwich needs one cluster id per subject");
    Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(n_clusters, phi.cols());
    for (std::size_t i = 0; i < cluster_index.size(); ++i) psi.row(cluster_index[i]) += phi.row(static_cast<Eigen::Index>(i));
    const double m = static_cast<double>(n_clusters);
    SandwichVariance out;
    out.omega = omega;
    out.meat = psi.transpose() * psi / m;
    out.vcov = sandwich_matrix(omega, out.meat, m);
    return out;
}

}  // namespace wa
