#pragma once

#include "whilealive/data_model.hpp"
#include "whilealive/estimator.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace wa {

/**
 * Baseline intensity or hazard with its cumulative and inverse.
 * weibull: Λ(t) = scale·t^shape, with scale 0 giving a zero intensity. piecewise_exp: constant rates between cuts.
 * gompertz: λ(t) = kappa·exp(nu·t). The *_density kinds use the density of the
 * corresponding distribution as the intensity, so their cumulative is a CDF bounded by 1.
 */
struct BaselineSpec {
    enum class Kind { weibull, piecewise_exp, gompertz, weibull_density, pwexp_density };
    Kind kind = Kind::weibull;
    double scale = 1.0;
    double shape = 1.0;
    std::vector<double> cuts;
    std::vector<double> rates;
    double kappa = 1.0;
    double nu = 0.0;

    static BaselineSpec weibull(double scale, double shape);
    static BaselineSpec piecewise_exp(std::vector<double> cuts, std::vector<double> rates);
    static BaselineSpec gompertz(double kappa, double nu);
    static BaselineSpec weibull_density(double scale, double shape);
    static BaselineSpec pwexp_density(std::vector<double> cuts, std::vector<double> rates);

    void validate() const;
    double intensity(double t) const;
    double cumulative(double t) const;
    /** Smallest t with cumulative(t) = x; +∞ when the cumulative never reaches x. */
    double inverse_cumulative(double x) const;
};

struct CovariateLaw {
    enum class Kind { bernoulli, normal };
    std::string name;
    Kind kind = Kind::normal;
    double a = 0.0;  // Bernoulli p, or normal mean
    double b = 1.0;  // normal sd
};

struct GammaLaw {
    double shape = 0.0;
    double rate = 0.0;
    bool enabled() const { return shape > 0.0; }
};

struct CensoringLaw {
    enum class Kind { none, covariate_exp, exponential };
    Kind kind = Kind::none;
    double c0 = 0.0;  // covariate_exp base rate, or the exponential rate
    Eigen::VectorXd theta;
};

struct ScenarioConfig {
    std::string label = "custom";
    int n = 2000;
    bool clustered = false;
    int n_clusters = 0;
    int size_min = 0;
    int size_max = 0;
    std::vector<CovariateLaw> covariates;
    GammaLaw frailty;
    GammaLaw cluster_frailty;
    double frailty_power = 1.0;
    std::vector<BaselineSpec> recurrent_baselines;
    std::vector<Eigen::VectorXd> recurrent_alpha;
    BaselineSpec death_baseline;
    Eigen::VectorXd death_alpha;
    WeightScheme weights;
    CensoringLaw censoring;
    bool intercept = false;  // whether the fitted regression design carries an intercept
    CensoringKind ipcw = CensoringKind::cox;
    // Administrative end of follow-up. Needed when some subjects can never die.
    double horizon = std::numeric_limits<double>::infinity();

    void validate() const;
    std::vector<std::string> covariate_names() const;
};

class SimulationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<std::string> scenario_labels();
/** Throws SimulationError listing valid labels when the label is unknown. */
ScenarioConfig scenario_by_label(const std::string& label);
ScenarioConfig scenario_from_json(const std::string& text);
std::string scenario_to_json(const ScenarioConfig& scenario);

/** Seed for substream `index` of a run; independent of evaluation order. */
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream);

/** One subject's latent and observed quantities before assembly into a dataset. */
struct SimulatedSubject {
    Eigen::VectorXd z;
    double death = 0.0;
    double censor = 0.0;
    std::vector<std::vector<double>> events;  // all events before death, per type
};

SimulatedSubject simulate_subject(const ScenarioConfig& scenario, double cluster_frailty, std::mt19937_64& rng,
                                  bool with_censoring = true);

EventDataset simulate_dataset(const ScenarioConfig& scenario, std::uint64_t seed);

/** Regression design for a scenario: raw covariates, plus an intercept when the scenario asks for one. */
EventDataset scenario_design(const ScenarioConfig& scenario, const EventDataset& data);

/** Default analysis: step basis with knots {1.0, 1.5, ..., 4.0}, stacking at the knots, log link. */
FitSpec default_fit_spec(const ScenarioConfig& scenario);

// ===== closed-form rates =====

struct DgmParams {
    double lambda0 = 0.3;  // constant death hazard for DGM 1 and 2
    double beta_D = 0.5;
    double kappa = 1.0;    // frailty variance for DGM 2 and 4
    double frailty_power = 1.0;
    double w_D = 1.0;
    BaselineSpec death_baseline = BaselineSpec::weibull(0.3, 1.0);
    std::vector<BaselineSpec> recurrent;
    std::vector<double> beta_recur;
    std::vector<double> w_recur;
};

/** While-alive rate l(t | a) under DGM 1 to 4; integrals by adaptive Gauss–Kronrod at 1e-8 relative tolerance. */
double closed_form_rate(int dgm, const DgmParams& params, double t, double a);

// ===== oracle and replication =====

/** Rows: grid times; columns: coefficients of the scenario's regression design. */
Eigen::MatrixXd true_beta_oracle(const ScenarioConfig& scenario, const std::vector<double>& t_grid, std::size_t superpop_n,
                                 std::uint64_t seed, Link link = Link::log, int threads = 0);

struct MetricsRow {
    double time = 0.0;
    std::string coefficient;
    double truth = 0.0;
    double mean_estimate = 0.0;
    double abias = 0.0;
    double mcsd = 0.0;
    double aese = 0.0;
    double cp = 0.0;
};

struct MetricsTable {
    std::string label;
    int replicates = 0;
    int failed = 0;
    std::vector<std::string> failures;
    std::vector<MetricsRow> rows;
    // Per replicate and row: estimate and SE (NaN for failed replicates).
    Eigen::MatrixXd estimates;
    Eigen::MatrixXd standard_errors;

    const MetricsRow& row(double time, const std::string& coefficient) const;
};

struct ReplicationOptions {
    int replicates = 200;
    std::uint64_t seed = 1;
    int threads = 0;
    std::size_t superpop_n = 1000000;
    std::vector<double> eval_times;          // defaults to the fit's stacking grid
    std::optional<Eigen::MatrixXd> oracle;   // computed when absent
};

MetricsTable run_scenario(const ScenarioConfig& scenario, const FitSpec& fit_spec, const ReplicationOptions& options);

void write_metrics_csv(std::ostream& out, const MetricsTable& table);

}  // namespace wa
