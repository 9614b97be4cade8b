#pragma once

#include "whilealive/censoring.hpp"
#include "whilealive/estimator.hpp"

#include <Eigen/Dense>

#include <vector>

namespace wa {

/**
 * Plug-in influence functions of the stacked estimator, one row per subject.
 * phi = varpi + theta_term + baseline_term, all summed over stacking times.
 * The kernels are on the sum scale, so Σ_i phi_i ≈ n·U_n(γ̂).
 */
struct InfluenceDecomposition {
    Eigen::MatrixXd phi;
    Eigen::MatrixXd varpi;
    Eigen::MatrixXd theta_term;
    Eigen::MatrixXd baseline_term;
    Eigen::MatrixXd xi;           // n × q censoring-score residuals (empty for KM)
    Eigen::MatrixXd kappa_theta;  // pR × q
    // Per stratum, pR × jumps: Σ_v Σ_i c_iv I(u_k < U_i ∧ t_v)
    std::vector<Eigen::MatrixXd> kappa_lambda;
};

struct SandwichVariance {
    Eigen::MatrixXd omega;
    Eigen::MatrixXd meat;
    Eigen::MatrixXd vcov;
};

class VarianceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/** Ω̂ = −∂U_n/∂γᵀ at γ̂. */
Eigen::MatrixXd omega_hat(const Eigen::VectorXd& gamma, const StackedProblem& problem);

InfluenceDecomposition influence_cox(const Eigen::VectorXd& gamma, const StackedProblem& problem, const EventDataset& data,
                                     const CensoringModel& cox_model);
InfluenceDecomposition influence_km(const Eigen::VectorXd& gamma, const StackedProblem& problem, const EventDataset& data,
                                    const CensoringModel& km_model);
/** Dispatches on the model kind. */
InfluenceDecomposition influence(const Eigen::VectorXd& gamma, const StackedProblem& problem, const EventDataset& data,
                                 const CensoringModel& model);

/** Independent units: meat = n⁻¹ Σ φφᵀ, vcov = Ω̂⁻¹ meat Ω̂⁻ᵀ / n. */
SandwichVariance sandwich(const Eigen::MatrixXd& omega, const Eigen::MatrixXd& phi);

/** Cluster units: φ summed within each cluster before forming the meat. */
SandwichVariance sandwich(const Eigen::MatrixXd& omega, const Eigen::MatrixXd& phi, const std::vector<int>& cluster_index,
                          int n_clusters);

}  // namespace wa
