#pragma once

#include "whilealive/estimator.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace wa {

enum class KnotScheme { equidistant, quantile };

KnotScheme parse_knot_scheme(const std::string& name);

struct CvGrid {
    std::vector<BasisFamily> families{BasisFamily::step};
    std::vector<int> degrees{3};
    std::vector<int> n_interior{3};
    KnotScheme knot_scheme = KnotScheme::equidistant;
    std::vector<Link> links{Link::log};
    int K = 5;
    std::uint64_t seed = 1;
    std::optional<std::pair<double, double>> time_range;
    int T = 100;
    std::optional<std::vector<double>> tau_grid;
    WeightScheme weights;
    CensoringSpec censoring;
    int threads = 0;
};

struct CvConfig {
    BasisFamily family = BasisFamily::step;
    int degree = 0;
    int n_interior = 0;
    Link link = Link::log;

    std::string label() const;
};

struct CvEntry {
    CvConfig config;
    bool ok = true;
    double pe = 0.0;
    std::vector<double> fold_pe;
    std::string failure;
    int n_knots = 0;  // knot count used for tie-breaking
};

struct CvResult {
    std::vector<CvEntry> entries;
    std::size_t selected = 0;
    double t_min = 0.0;
    double tau = 0.0;
};

class CvError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/** One label in [0, K) per subject; whole clusters share a label in cluster mode. */
std::vector<int> assign_folds(const EventDataset& data, int K, std::uint64_t seed);

/** Equally spaced integration grid of T points on [t_min, tau]. */
std::vector<double> integration_grid(double t_min, double tau, int T);

/** Σ over held-out subjects of the trapezoid rule applied to the squared weighted residual. */
double prediction_error(const EventDataset& heldout, const FitResult& trained_fit, const CensoringModel& trained_censoring,
                        const std::vector<double>& grid);

/** Expand the grid into configurations; degree is ignored (fixed at 0) for families without one. */
std::vector<CvConfig> enumerate_configs(const CvGrid& grid);

/** Knots for one configuration given the training follow-up times. */
std::vector<double> config_knots(const CvConfig& config, KnotScheme scheme, double t_min, double tau,
                                 const std::vector<double>& follow_up);

/** τ used when no time range is supplied: the 0.9 quantile of observed follow-up. */
double default_tau(const EventDataset& data);

CvResult select(const EventDataset& data, const CvGrid& grid);

}  // namespace wa
