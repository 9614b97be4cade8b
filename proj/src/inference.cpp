#include "whilealive/inference.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>

namespace wa {

double normal_quantile(double level) {
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + level / 2.0);
}

namespace {

void require_vcov(const FitResult& fit) {
    if (!fit.vcov_available) throw InferenceError("variance unavailable for this fit");
}

void require_block(const FitResult& fit, int j) {
    if (j < 0 || j >= fit.p) throw std::out_of_range("covariate index out of range");
}

}  // namespace

Interval pointwise_ci(const FitResult& fit, int j, double t, double level) {
    require_block(fit, j);
    require_vcov(fit);
    const Eigen::VectorXd jt = evaluate_basis(fit.spec.basis, t);
    const Eigen::VectorXd g = fit.gamma.segment(j * fit.R, fit.R);
    const Eigen::MatrixXd vjj = fit.vcov.block(j * fit.R, j * fit.R, fit.R, fit.R);
    Interval out;
    out.estimate = g.dot(jt);
    out.se = std::sqrt(std::max(0.0, jt.dot(vjj * jt)));
    const double z = normal_quantile(level);
    out.lower = out.estimate - z * out.se;
    out.upper = out.estimate + z * out.se;
    return out;
}

EffectCurve effect_curve(const FitResult& fit, int j, const std::vector<double>& times) {
    EffectCurve curve;
    curve.covariate = j;
    for (double t : times) {
        const Interval ci = pointwise_ci(fit, j, t);
        curve.times.push_back(t);
        curve.estimates.push_back(ci.estimate);
        curve.se.push_back(ci.se);
    }
    return curve;
}

Interval predict_rate(const FitResult& fit, const Eigen::VectorXd& z, double t, double level) {
    require_vcov(fit);
    if (z.size() != fit.p) throw std::invalid_argument("prediction covariate vector has the wrong length");
    const Eigen::VectorXd row = expand_design(z, evaluate_basis(fit.spec.basis, t));
    const double lp = fit.gamma.dot(row);
    const double se_lp = std::sqrt(std::max(0.0, row.dot(fit.vcov * row)));
    Interval out;
    out.estimate = LinkFunction::inverse(fit.spec.link, lp);
    out.se = LinkFunction::inverse_derivative(fit.spec.link, lp) * se_lp;
    const double q = normal_quantile(level);
    out.lower = out.estimate - q * out.se;
    out.upper = out.estimate + q * out.se;
    return out;
}

AveragedEffect averaged_effect(const FitResult& fit, int j, double t_a, double t_b, const WeightFunction& weight) {
    require_block(fit, j);
    if (!(t_b > t_a) || t_a < 0.0) throw std::invalid_argument("averaging window must satisfy 0 <= t_a < t_b");
    constexpr int points = 200;
    const double h = (t_b - t_a) / (points - 1);
    Eigen::VectorXd functional = Eigen::VectorXd::Zero(fit.R);
    double mass = 0.0;
    for (int k = 0; k < points; ++k) {
        const double u = t_a + h * k;
        const double trap = (k == 0 || k == points - 1) ? 0.5 * h : h;
        const double w = trap * (weight ? weight(u) : 1.0);
        functional += w * evaluate_basis(fit.spec.basis, u);
        mass += w;
    }
    if (!(mass > 0.0)) throw std::invalid_argument("averaging weight integrates to zero");
    functional /= mass;
    AveragedEffect out;
    out.estimate = functional.dot(fit.gamma.segment(j * fit.R, fit.R));
    if (fit.vcov_available) {
        const Eigen::MatrixXd vjj = fit.vcov.block(j * fit.R, j * fit.R, fit.R, fit.R);
        out.se = std::sqrt(std::max(0.0, functional.dot(vjj * functional)));
    } else {
        out.se = std::nan("");
    }
    return out;
}

WeightFunction at_risk_weight(const EventDataset& data) {
    std::vector<double> times;
    for (const auto& s : data.subjects) times.push_back(s.U);
    std::sort(times.begin(), times.end());
    const double n = static_cast<double>(times.size());
    return [times = std::move(times), n](double u) {
        const auto below = std::lower_bound(times.begin(), times.end(), u) - times.begin();
        return (n - static_cast<double>(below)) / n;
    };
}

WaldResult global_wald(const FitResult& fit, int j) {
    require_block(fit, j);
    require_vcov(fit);
    const Eigen::VectorXd g = fit.gamma.segment(j * fit.R, fit.R);
    const Eigen::MatrixXd vjj = fit.vcov.block(j * fit.R, j * fit.R, fit.R, fit.R);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(vjj);
    if (!lu.isInvertible()) throw InferenceError("covariance block is singular; Wald test unavailable");
    WaldResult out;
    out.block = j;
    out.df = fit.R;
    out.statistic = std::max(0.0, g.dot(lu.solve(g)));
    out.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(out.df), out.statistic));
    return out;
}

double rate_reduction(double log_rate_difference) { return 1.0 - std::exp(log_rate_difference); }

}  // namespace wa
