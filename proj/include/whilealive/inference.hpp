#pragma once

#include "whilealive/estimator.hpp"

#include <functional>
#include <vector>

namespace wa {

struct Interval {
    double estimate = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double se = 0.0;
};

struct EffectCurve {
    int covariate = 0;
    std::vector<double> times;
    std::vector<double> estimates;
    std::vector<double> se;
};

struct WaldResult {
    int block = 0;
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
};

struct AveragedEffect {
    double estimate = 0.0;
    double se = 0.0;
};

class InferenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

double normal_quantile(double level);

Interval pointwise_ci(const FitResult& fit, int j, double t, double level = 0.95);
EffectCurve effect_curve(const FitResult& fit, int j, const std::vector<double>& times);

/** Delta-method interval for η⁻¹(β̂(t)ᵀZ) on the rate scale. */
Interval predict_rate(const FitResult& fit, const Eigen::VectorXd& z, double t, double level = 0.95);

using WeightFunction = std::function<double(double)>;

/** ∫β_j ω / ∫ω over [t_a, t_b], trapezoid on a 200-point grid. */
AveragedEffect averaged_effect(const FitResult& fit, int j, double t_a, double t_b, const WeightFunction& weight = {});

/** Empirical probability of being alive and uncensored, n⁻¹ Σ I(U_i ≥ u). */
WeightFunction at_risk_weight(const EventDataset& data);

WaldResult global_wald(const FitResult& fit, int j);

/** 1 − exp(β) for a log-rate difference β: the proportional reduction in the rate. */
double rate_reduction(double log_rate_difference);

}  // namespace wa
