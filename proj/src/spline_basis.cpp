#include "whilealive/spline_basis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wa {

BasisFamily parse_basis_family(const std::string& name) {
    if (name == "st") return BasisFamily::step;
    if (name == "bz") return BasisFamily::bspline;
    if (name == "ns") return BasisFamily::natural_spline;
    if (name == "ms") return BasisFamily::mspline;
    if (name == "pl") return BasisFamily::piecewise_poly;
    if (name == "tl") return BasisFamily::truncated_linear;
    if (name == "il") return BasisFamily::interval_linear;
    if (name == "tf") return BasisFamily::time_fixed;
    throw std::invalid_argument("unknown basis family '" + name + "' (expected st, bz, ns, ms, pl, tl, il or tf)");
}

std::string basis_family_name(BasisFamily family) {
    switch (family) {
        case BasisFamily::step: return "st";
        case BasisFamily::bspline: return "bz";
        case BasisFamily::natural_spline: return "ns";
        case BasisFamily::mspline: return "ms";
        case BasisFamily::piecewise_poly: return "pl";
        case BasisFamily::truncated_linear: return "tl";
        case BasisFamily::interval_linear: return "il";
        case BasisFamily::time_fixed: return "tf";
    }
    return "?";
}

void BasisConfig::validate() const {
    if (knots.size() < 2 && family != BasisFamily::step)
        throw std::invalid_argument("basis needs at least two knots");
    if (knots.empty()) throw std::invalid_argument("basis needs at least one knot");
    if (family == BasisFamily::time_fixed && knots.size() != 2)
        throw std::invalid_argument("time-fixed basis takes exactly two boundary knots");
    for (std::size_t i = 0; i < knots.size(); ++i) {
        if (!std::isfinite(knots[i]) || knots[i] < 0.0) throw std::invalid_argument("knots must be finite and nonnegative");
        if (i > 0 && knots[i] <= knots[i - 1]) throw std::invalid_argument("knots must be strictly increasing");
    }
    if (degree < 0) throw std::invalid_argument("degree must be nonnegative");
}

int BasisConfig::dimension() const {
    const int k = static_cast<int>(knots.size());
    switch (family) {
        case BasisFamily::step: return k;
        case BasisFamily::bspline:
        case BasisFamily::mspline: return k + degree - 1;
        case BasisFamily::natural_spline: return k;
        case BasisFamily::piecewise_poly: return (k - 1) * (degree + 1);
        case BasisFamily::truncated_linear: return k;
        case BasisFamily::interval_linear: return k;
        case BasisFamily::time_fixed: return 1;
    }
    return 0;
}

namespace {

std::vector<double> clamped_knot_vector(const std::vector<double>& knots, int degree) {
    std::vector<double> kv;
    kv.insert(kv.end(), static_cast<std::size_t>(degree), knots.front());
    kv.insert(kv.end(), knots.begin(), knots.end());
    kv.insert(kv.end(), static_cast<std::size_t>(degree), knots.back());
    return kv;
}

double clamp_to(const std::vector<double>& knots, double t) { return std::clamp(t, knots.front(), knots.back()); }

}  // namespace

Eigen::VectorXd bspline_basis(const std::vector<double>& knots, int degree, double t) {
    const int n_basis = static_cast<int>(knots.size()) + degree - 1;
    const auto kv = clamped_knot_vector(knots, degree);
    t = clamp_to(knots, t);
    // Locate span s with kv[s] <= t < kv[s+1]; the right end belongs to the last nonempty span.
    int span = static_cast<int>(std::upper_bound(kv.begin(), kv.end(), t) - kv.begin()) - 1;
    span = std::min(span, static_cast<int>(kv.size()) - degree - 2);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n_basis);
    // Triangular Cox–de Boor table for the degree+1 nonzero functions on the span.
    std::vector<double> n(static_cast<std::size_t>(degree + 1), 0.0), left(static_cast<std::size_t>(degree + 1)),
        right(static_cast<std::size_t>(degree + 1));
    n[0] = 1.0;
    for (int j = 1; j <= degree; ++j) {
        left[static_cast<std::size_t>(j)] = t - kv[static_cast<std::size_t>(span + 1 - j)];
        right[static_cast<std::size_t>(j)] = kv[static_cast<std::size_t>(span + j)] - t;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double denom = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
            const double temp = denom > 0.0 ? n[static_cast<std::size_t>(r)] / denom : 0.0;
            n[static_cast<std::size_t>(r)] = saved + right[static_cast<std::size_t>(r + 1)] * temp;
            saved = left[static_cast<std::size_t>(j - r)] * temp;
        }
        n[static_cast<std::size_t>(j)] = saved;
    }
    for (int r = 0; r <= degree; ++r) {
        const int idx = span - degree + r;
        if (idx >= 0 && idx < n_basis) b[idx] = n[static_cast<std::size_t>(r)];
    }
    return b;
}

Eigen::VectorXd evaluate_basis(const BasisConfig& config, double t) {
    if (!(t >= 0.0)) throw std::invalid_argument("basis evaluated at negative time");
    const auto& kn = config.knots;
    const int R = config.dimension();
    Eigen::VectorXd j = Eigen::VectorXd::Zero(R);
    t = std::min(t, kn.back());
    switch (config.family) {
        case BasisFamily::time_fixed:
            j[0] = 1.0;
            break;
        case BasisFamily::step:
            for (int r = 0; r < R; ++r) j[r] = t >= kn[static_cast<std::size_t>(r)] ? 1.0 : 0.0;
            break;
        case BasisFamily::bspline:
            j = t * bspline_basis(kn, config.degree, t);
            break;
        case BasisFamily::mspline: {
            j = bspline_basis(kn, config.degree, t);
            const auto kv = clamped_knot_vector(kn, config.degree);
            for (int r = 0; r < R; ++r) {
                const double width = kv[static_cast<std::size_t>(r + config.degree + 1)] - kv[static_cast<std::size_t>(r)];
                j[r] *= (config.degree + 1) / width;
            }
            break;
        }
        case BasisFamily::natural_spline: {
            // Truncated-power natural cubic spline: 1, t, then d_k − d_{K−1}.
            const int K = static_cast<int>(kn.size());
            j[0] = 1.0;
            j[1] = t;
            auto cube_plus = [](double x) { return x > 0.0 ? x * x * x : 0.0; };
            auto d = [&](int k) {
                return (cube_plus(t - kn[static_cast<std::size_t>(k)]) - cube_plus(t - kn.back())) /
                       (kn.back() - kn[static_cast<std::size_t>(k)]);
            };
            const double d_last = d(K - 2);
            for (int k = 0; k < K - 2; ++k) j[k + 2] = d(k) - d_last;
            break;
        }
        case BasisFamily::piecewise_poly: {
            const double tc = clamp_to(kn, t);
            int m = static_cast<int>(std::upper_bound(kn.begin(), kn.end(), tc) - kn.begin()) - 1;
            m = std::clamp(m, 0, static_cast<int>(kn.size()) - 2);
            const double x = tc - kn[static_cast<std::size_t>(m)];
            double power = 1.0;
            for (int e = 0; e <= config.degree; ++e, power *= x) j[m * (config.degree + 1) + e] = power;
            break;
        }
        case BasisFamily::truncated_linear:
            j[0] = 1.0;
            j[1] = t;
            for (std::size_t k = 1; k + 1 < kn.size(); ++k) j[static_cast<Eigen::Index>(k) + 1] = std::max(0.0, t - kn[k]);
            break;
        case BasisFamily::interval_linear: {
            const double tc = clamp_to(kn, t);
            int m = static_cast<int>(std::upper_bound(kn.begin(), kn.end(), tc) - kn.begin()) - 1;
            m = std::clamp(m, 0, static_cast<int>(kn.size()) - 2);
            const double frac = (tc - kn[static_cast<std::size_t>(m)]) / (kn[static_cast<std::size_t>(m + 1)] - kn[static_cast<std::size_t>(m)]);
            j[m] = 1.0 - frac;
            j[m + 1] = frac;
            break;
        }
    }
    return j;
}

Eigen::VectorXd expand_design(const Eigen::VectorXd& z, const Eigen::VectorXd& jt) {
    const Eigen::Index p = z.size(), R = jt.size();
    Eigen::VectorXd out(p * R);
    for (Eigen::Index a = 0; a < p; ++a) out.segment(a * R, R) = z[a] * jt;
    return out;
}

Eigen::VectorXd beta_at(const Eigen::VectorXd& gamma, const BasisConfig& config, double t) {
    const Eigen::VectorXd jt = evaluate_basis(config, t);
    const Eigen::Index R = jt.size();
    if (R == 0 || gamma.size() % R != 0) throw std::invalid_argument("coefficient length is not a multiple of R");
    const Eigen::Index p = gamma.size() / R;
    Eigen::VectorXd beta(p);
    for (Eigen::Index a = 0; a < p; ++a) beta[a] = gamma.segment(a * R, R).dot(jt);
    return beta;
}

Eigen::MatrixXd coefficient_map(const BasisConfig& config, int p, double t) {
    const Eigen::VectorXd jt = evaluate_basis(config, t);
    const Eigen::Index R = jt.size();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p * R);
    for (int a = 0; a < p; ++a) A.block(a, a * R, 1, R) = jt.transpose();
    return A;
}

}  // namespace wa
