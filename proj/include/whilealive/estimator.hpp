#pragma once

#include "whilealive/censoring.hpp"
#include "whilealive/data_model.hpp"
#include "whilealive/spline_basis.hpp"

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace wa {

enum class Link { log, identity };

Link parse_link(const std::string& name);
std::string link_name(Link link);

/** η⁻¹ and its derivative for the supported links. */
struct LinkFunction {
    static double link(Link l, double mu);
    static double inverse(Link l, double x);
    static double inverse_derivative(Link l, double x);
};

struct CensoringSpec {
    CensoringKind kind = CensoringKind::cox;
    std::vector<std::string> covariates;  // Cox only
    std::optional<std::string> strata;    // KM only
};

struct FitSpec {
    BasisConfig basis;
    std::vector<double> tau_grid;
    WeightScheme weights;
    Link link = Link::log;
    CensoringSpec censoring;
    double positivity_floor = default_positivity_floor;
    // When set, weights are capped at this quantile of the positive weights instead of raising positivity errors.
    std::optional<double> weight_cap_quantile;
    double tolerance = 1e-8;
    int max_iterations = 100;
    int max_halvings = 30;
    bool compute_variance = true;

    void validate(const EventDataset& data) const;
};

class EstimationError : public std::runtime_error {
public:
    enum class Kind { non_convergence, singular_jacobian, no_root_log_link, degenerate_weights };
    EstimationError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/**
 * The stacked equation materialized as one row per (subject, stacking time) with a positive weight.
 * Nothing is duplicated per batch beyond these scalars and the expanded design row.
 */
struct StackedProblem {
    int p = 0;
    int R = 0;
    double n_units = 0.0;  // n, or M in cluster mode
    Link link = Link::log;
    std::vector<int> subject;
    std::vector<int> batch;
    std::vector<double> weight;
    std::vector<double> loss;
    std::vector<double> exposure;  // U ∧ t_v
    Eigen::MatrixXd design;        // rows × pR

    std::size_t rows() const { return weight.size(); }
};

StackedProblem build_problem(const EventDataset& data, const FitSpec& spec, const CensoringModel& censoring);

Eigen::VectorXd stacked_score(const Eigen::VectorXd& gamma, const StackedProblem& problem);
Eigen::MatrixXd score_jacobian(const Eigen::VectorXd& gamma, const StackedProblem& problem);

Eigen::VectorXd stacked_score(const Eigen::VectorXd& gamma, const EventDataset& data, const FitSpec& spec,
                              const CensoringModel& censoring);
Eigen::MatrixXd score_jacobian(const Eigen::VectorXd& gamma, const EventDataset& data, const FitSpec& spec,
                               const CensoringModel& censoring);

struct FitResult {
    Eigen::VectorXd gamma;
    Eigen::MatrixXd vcov;
    Eigen::MatrixXd omega;
    Eigen::MatrixXd meat;
    bool vcov_available = false;
    int p = 0;
    int R = 0;
    std::size_t n_subjects = 0;
    std::size_t n_units = 0;
    bool cluster_mode = false;
    int iterations = 0;
    double score_norm = 0.0;
    FitSpec spec;
    std::vector<std::string> covariate_names;
    CensoringModel censoring;
    std::vector<std::string> diagnostics;
};

/** Fit the censoring model named by the spec; Cox on data without censoring degrades to G ≡ 1. */
CensoringModel fit_censoring(const EventDataset& data, const CensoringSpec& spec, std::vector<std::string>* diagnostics = nullptr);

FitResult solve(const EventDataset& data, const FitSpec& spec);
FitResult solve(const EventDataset& data, const FitSpec& spec, const CensoringModel& censoring);

struct LandmarkResult {
    Eigen::VectorXd beta;
    Eigen::MatrixXd vcov;
    FitResult fit;
};

/** Single-time fit: time-fixed basis with the stacking grid {t}. */
LandmarkResult fit_landmark(const EventDataset& data, double t, const WeightScheme& weights, Link link,
                            const CensoringSpec& censoring);

}  // namespace wa
