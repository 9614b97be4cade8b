#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace wa {

enum class BasisFamily { step, bspline, natural_spline, mspline, piecewise_poly, truncated_linear, interval_linear, time_fixed };

/** Short CLI names: st, bz, ns, ms, pl, tl, il, tf. */
BasisFamily parse_basis_family(const std::string& name);
std::string basis_family_name(BasisFamily family);

struct BasisConfig {
    BasisFamily family = BasisFamily::step;
    int degree = 0;
    std::vector<double> knots;

    /** Throws std::invalid_argument when the knots or degree are unusable for the family. */
    void validate() const;
    /** Basis dimension R for this family and knot set. */
    int dimension() const;
};

/**
 * Evaluate J(t). Times past the last knot are clamped to it.
 * The bspline family returns t·B(t), so every component vanishes at t = 0.
 */
Eigen::VectorXd evaluate_basis(const BasisConfig& config, double t);

/** Plain clamped B-spline basis of the given degree (Cox–de Boor), length knots + degree − 1. */
Eigen::VectorXd bspline_basis(const std::vector<double>& knots, int degree, double t);

/** Kronecker product Z ⊗ J: entry j·R + r holds Z_j·J_r. */
Eigen::VectorXd expand_design(const Eigen::VectorXd& z, const Eigen::VectorXd& jt);

/** β_j(t) = Σ_r γ_{jR+r} J_r(t). */
Eigen::VectorXd beta_at(const Eigen::VectorXd& gamma, const BasisConfig& config, double t);

/** A(t) = I_p ⊗ J(t)ᵀ, so β(t) = A(t)γ. */
Eigen::MatrixXd coefficient_map(const BasisConfig& config, int p, double t);

}  // namespace wa
