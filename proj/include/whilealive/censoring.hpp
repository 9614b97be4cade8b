#pragma once

#include "whilealive/data_model.hpp"

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace wa {

enum class CensoringKind { kaplan_meier, cox };

/**
 * Risk-set summaries on the censoring jump times of one stratum.
 * All moments are sums (not averages): s0(u) = Σ_j Y_j(u) exp(θᵀZ_j), s1 likewise with Z_j.
 */
struct CensoringStratum {
    std::vector<double> times;
    std::vector<double> events;
    std::vector<double> s0;
    Eigen::MatrixXd s1;  // q × jumps
    std::vector<double> dlambda;
    std::vector<double> cumhaz;      // Λ̂₀ just after each jump
    std::vector<double> surv_after;  // product-limit value just after each jump (KM only)

    /** Number of jump times strictly before t. */
    std::size_t jumps_before(double t) const;
    /** Number of jump times at or before t. */
    std::size_t jumps_through(double t) const;
};

struct CensoringModel {
    CensoringKind kind = CensoringKind::kaplan_meier;
    std::vector<std::string> covariate_names;
    std::vector<int> columns;  // positions in the dataset covariate vector
    Eigen::VectorXd theta;
    Eigen::MatrixXd information;  // observed information, sum scale
    int iterations = 0;
    double score_norm = 0.0;  // max-norm of the averaged partial-likelihood score at θ̂

    std::optional<int> strata_column;
    std::vector<double> strata_values;
    std::vector<CensoringStratum> strata;

    Eigen::VectorXd censoring_covariates(const Eigen::VectorXd& z) const;
    double risk_score(const Eigen::VectorXd& z) const;
    std::size_t stratum_of(const Eigen::VectorXd& z) const;
    std::size_t q() const { return columns.size(); }
};

class CensoringError : public std::runtime_error {
public:
    enum class Kind { no_censoring_events, singular_information, non_convergence, unknown_stratum };
    CensoringError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class PositivityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CoxOptions {
    double tolerance = 1e-8;
    double step_tolerance = 1e-6;
    int max_iterations = 50;
    int max_halvings = 30;
};

/** Left-continuous product-limit estimate of P(C ≥ t); optional strata by the value of one covariate column. */
CensoringModel fit_km_censoring(const EventDataset& data, std::optional<std::string> strata_covariate = std::nullopt);

/** Proportional-hazards censoring model with Breslow ties and baseline. */
CensoringModel fit_cox_censoring(const EventDataset& data, const std::vector<std::string>& covariates,
                                 const CoxOptions& options = {});

/** The model G ≡ 1 used when the data contain no censoring at all. */
CensoringModel no_censoring_model(CensoringKind kind);

/** G(t | Z) = P(C ≥ t | Z); z is the full dataset covariate vector. */
double survival_at(const CensoringModel& model, double t, const Eigen::VectorXd& z);

inline constexpr double default_positivity_floor = 1e-6;

/** {I(U ≤ t)Δ + I(U > t)} / G(U∧t | Z); zero for subjects censored before t. */
double ipcw_weight(const CensoringModel& model, const SubjectData& subject, double t,
                   double epsilon = default_positivity_floor);

struct StepFunction {
    std::vector<double> times;
    std::vector<double> values;
};

/** M̂ᶜ evaluated just after each jump time of the subject's stratum. */
StepFunction martingale_residual_path(const CensoringModel& model, const SubjectData& subject);

}  // namespace wa
