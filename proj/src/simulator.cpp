#include "whilealive/simulator.hpp"

#include "whilealive/inference.hpp"
#include "whilealive/parallel.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace wa {

namespace {
constexpr double infinity = std::numeric_limits<double>::infinity();
}

// ===== baselines =====

BaselineSpec BaselineSpec::weibull(double scale, double shape) {
    BaselineSpec b;
    b.kind = Kind::weibull;
    b.scale = scale;
    b.shape = shape;
    return b;
}

BaselineSpec BaselineSpec::piecewise_exp(std::vector<double> cuts, std::vector<double> rates) {
    BaselineSpec b;
    b.kind = Kind::piecewise_exp;
    b.cuts = std::move(cuts);
    b.rates = std::move(rates);
    return b;
}

BaselineSpec BaselineSpec::gompertz(double kappa, double nu) {
    BaselineSpec b;
    b.kind = Kind::gompertz;
    b.kappa = kappa;
    b.nu = nu;
    return b;
}

BaselineSpec BaselineSpec::weibull_density(double scale, double shape) {
    BaselineSpec b = weibull(scale, shape);
    b.kind = Kind::weibull_density;
    return b;
}

BaselineSpec BaselineSpec::pwexp_density(std::vector<double> cuts, std::vector<double> rates) {
    BaselineSpec b = piecewise_exp(std::move(cuts), std::move(rates));
    b.kind = Kind::pwexp_density;
    return b;
}

void BaselineSpec::validate() const {
    switch (kind) {
        case Kind::weibull:
            // scale 0 is allowed and means a zero intensity
            if (!(scale >= 0.0 && shape > 0.0)) throw SimulationError("Weibull scale must be nonnegative and shape positive");
            break;
        case Kind::weibull_density:
            if (!(scale > 0.0 && shape > 0.0)) throw SimulationError("Weibull scale and shape must be positive");
            break;
        case Kind::piecewise_exp:
        case Kind::pwexp_density:
            if (cuts.empty() || cuts.size() != rates.size() || cuts.front() != 0.0)
                throw SimulationError("piecewise baseline needs cuts starting at 0 and one rate per interval");
            for (std::size_t m = 0; m < cuts.size(); ++m) {
                if (!(rates[m] > 0.0)) throw SimulationError("piecewise rates must be positive");
                if (m > 0 && !(cuts[m] > cuts[m - 1])) throw SimulationError("piecewise cuts must increase");
            }
            break;
        case Kind::gompertz:
            if (!(kappa > 0.0) || !std::isfinite(nu)) throw SimulationError("Gompertz kappa must be positive");
            break;
    }
}

namespace {

double pw_cumulative(const std::vector<double>& cuts, const std::vector<double>& rates, double t) {
    double h = 0.0;
    for (std::size_t m = 0; m < cuts.size(); ++m) {
        const double end = m + 1 < cuts.size() ? cuts[m + 1] : infinity;
        if (t <= cuts[m]) break;
        h += rates[m] * (std::min(t, end) - cuts[m]);
    }
    return h;
}

double pw_rate(const std::vector<double>& cuts, const std::vector<double>& rates, double t) {
    const auto m = static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), t) - cuts.begin());
    return rates[m == 0 ? 0 : m - 1];
}

double pw_inverse(const std::vector<double>& cuts, const std::vector<double>& rates, double x) {
    double h = 0.0;
    for (std::size_t m = 0; m < cuts.size(); ++m) {
        const double end = m + 1 < cuts.size() ? cuts[m + 1] : infinity;
        const double piece = rates[m] * (end - cuts[m]);
        if (h + piece >= x) return cuts[m] + (x - h) / rates[m];
        h += piece;
    }
    return infinity;
}

}  // namespace

double BaselineSpec::intensity(double t) const {
    switch (kind) {
        case Kind::weibull: return scale * shape * std::pow(t, shape - 1.0);
        case Kind::piecewise_exp: return pw_rate(cuts, rates, t);
        case Kind::gompertz: return kappa * std::exp(nu * t);
        case Kind::weibull_density: {
            const double x = t / scale;
            return shape / scale * std::pow(x, shape - 1.0) * std::exp(-std::pow(x, shape));
        }
        case Kind::pwexp_density: return pw_rate(cuts, rates, t) * std::exp(-pw_cumulative(cuts, rates, t));
    }
    return 0.0;
}

double BaselineSpec::cumulative(double t) const {
    if (t <= 0.0) return 0.0;
    switch (kind) {
        case Kind::weibull: return scale * std::pow(t, shape);
        case Kind::piecewise_exp: return pw_cumulative(cuts, rates, t);
        case Kind::gompertz: return nu == 0.0 ? kappa * t : kappa / nu * std::expm1(nu * t);
        case Kind::weibull_density: return -std::expm1(-std::pow(t / scale, shape));
        case Kind::pwexp_density: return -std::expm1(-pw_cumulative(cuts, rates, t));
    }
    return 0.0;
}

double BaselineSpec::inverse_cumulative(double x) const {
    if (x <= 0.0) return 0.0;
    switch (kind) {
        case Kind::weibull: return scale > 0.0 ? std::pow(x / scale, 1.0 / shape) : infinity;
        case Kind::piecewise_exp: return pw_inverse(cuts, rates, x);
        case Kind::gompertz: {
            if (nu == 0.0) return x / kappa;
            const double arg = nu * x / kappa;
            if (arg <= -1.0) return infinity;
            return std::log1p(arg) / nu;
        }
        case Kind::weibull_density:
            if (x >= 1.0) return infinity;
            return scale * std::pow(-std::log1p(-x), 1.0 / shape);
        case Kind::pwexp_density:
            if (x >= 1.0) return infinity;
            return pw_inverse(cuts, rates, -std::log1p(-x));
    }
    return infinity;
}

// ===== scenarios =====

void ScenarioConfig::validate() const {
    const auto p = static_cast<Eigen::Index>(covariates.size());
    if (clustered) {
        if (n_clusters < 1 || size_min < 1 || size_max < size_min) throw SimulationError("invalid cluster layout");
    } else if (n < 1) {
        throw SimulationError("sample size must be positive");
    }
    for (const auto& c : covariates) {
        if (c.kind == CovariateLaw::Kind::bernoulli && !(c.a >= 0.0 && c.a <= 1.0))
            throw SimulationError("Bernoulli probability must lie in [0, 1]");
        if (c.kind == CovariateLaw::Kind::normal && !(c.b >= 0.0)) throw SimulationError("normal sd must be nonnegative");
    }
    if (frailty.enabled() && !(frailty.rate > 0.0)) throw SimulationError("frailty gamma rate must be positive");
    if (cluster_frailty.enabled() && !(cluster_frailty.rate > 0.0)) throw SimulationError("cluster frailty rate must be positive");
    if (recurrent_baselines.size() != recurrent_alpha.size()) throw SimulationError("one alpha vector per recurrent type");
    for (const auto& b : recurrent_baselines) b.validate();
    for (const auto& a : recurrent_alpha)
        if (a.size() != p) throw SimulationError("recurrent alpha length must match the covariates");
    death_baseline.validate();
    if (death_alpha.size() != p) throw SimulationError("death alpha length must match the covariates");
    weights.validate(static_cast<int>(recurrent_baselines.size()));
    if (censoring.kind == CensoringLaw::Kind::covariate_exp && (censoring.theta.size() != p || !(censoring.c0 > 0.0)))
        throw SimulationError("covariate-dependent censoring needs c0 > 0 and one theta per covariate");
    if (censoring.kind == CensoringLaw::Kind::exponential && !(censoring.c0 > 0.0))
        throw SimulationError("censoring rate must be positive");
    if (!(horizon > 0.0)) throw SimulationError("follow-up horizon must be positive");
}

std::vector<std::string> ScenarioConfig::covariate_names() const {
    std::vector<std::string> names;
    for (const auto& c : covariates) names.push_back(c.name);
    return names;
}

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index k = 0;
    for (double x : v) out[k++] = x;
    return out;
}

ScenarioConfig set_one(double c0, Eigen::VectorXd theta, std::vector<double> w) {
    ScenarioConfig s;
    s.n = 2000;
    s.covariates = {{"Z1", CovariateLaw::Kind::bernoulli, 0.5, 0.0}, {"Z2", CovariateLaw::Kind::normal, 0.0, 1.0}};
    s.frailty = {4.5, 4.5};
    s.recurrent_baselines = {BaselineSpec::weibull(0.5, 1.25), BaselineSpec::piecewise_exp({0.0, 1.0, 3.0}, {0.40, 0.22, 0.10})};
    s.recurrent_alpha = {vec({0.5, -0.8}), vec({0.3, 0.9})};
    s.death_baseline = BaselineSpec::gompertz(0.45, 0.30);
    s.death_alpha = vec({0.2, 1.0});
    s.weights = {{w[0], w[1]}, w[2]};
    s.censoring.kind = CensoringLaw::Kind::covariate_exp;
    s.censoring.c0 = c0;
    s.censoring.theta = std::move(theta);
    return s;
}

ScenarioConfig set_two(std::vector<double> w) {
    ScenarioConfig s = set_one(0.17, vec({0.5, 0.5}), std::move(w));
    s.recurrent_alpha = {vec({0.2, 0.5}), vec({0.8, 1.0})};
    s.death_baseline = BaselineSpec::gompertz(0.10, 0.30);
    return s;
}

ScenarioConfig independent_censoring(std::vector<double> w) {
    ScenarioConfig s = set_one(0.45, vec({0.5, 0.5}), std::move(w));
    s.censoring.kind = CensoringLaw::Kind::exponential;
    s.censoring.c0 = 0.55;
    s.censoring.theta.resize(0);
    s.ipcw = CensoringKind::kaplan_meier;
    return s;
}

ScenarioConfig cluster_trial() {
    ScenarioConfig s = set_one(0.27, vec({0.5, 0.2}), {1, 1, 1});
    s.clustered = true;
    s.n_clusters = 60;
    s.size_min = 20;
    s.size_max = 80;
    s.cluster_frailty = {2.0, 2.0};
    s.death_baseline = BaselineSpec::gompertz(0.30, 0.30);
    return s;
}

}  // namespace

std::vector<std::string> scenario_labels() {
    return {"I(a)", "I(b)", "I(c)", "I(d)", "II(a)", "II(b)", "IC(a)", "IC(b)", "CRT"};
}

ScenarioConfig scenario_by_label(const std::string& label) {
    ScenarioConfig s;
    if (label == "I(a)") s = set_one(0.20, vec({0.2, 0.5}), {1, 1, 1});
    else if (label == "I(b)") s = set_one(0.45, vec({0.5, 0.5}), {1, 1, 1});
    else if (label == "I(c)") s = set_one(0.20, vec({0.2, 0.5}), {1, 2, 2});
    else if (label == "I(d)") s = set_one(0.45, vec({0.5, 0.5}), {1, 2, 2});
    else if (label == "II(a)") s = set_two({1, 1, 1});
    else if (label == "II(b)") s = set_two({1, 2, 2});
    else if (label == "IC(a)") s = independent_censoring({1, 1, 1});
    else if (label == "IC(b)") s = independent_censoring({1, 2, 2});
    else if (label == "CRT") s = cluster_trial();
    else {
        std::string valid;
        for (const auto& l : scenario_labels()) valid += (valid.empty() ? "" : ", ") + l;
        throw SimulationError("unknown scenario '" + label + "'; valid labels: " + valid);
    }
    s.label = label;
    return s;
}

// ===== JSON =====

namespace {

using nlohmann::json;

json baseline_json(const BaselineSpec& b) {
    switch (b.kind) {
        case BaselineSpec::Kind::weibull: return {{"kind", "weibull"}, {"scale", b.scale}, {"shape", b.shape}};
        case BaselineSpec::Kind::weibull_density: return {{"kind", "weibull_density"}, {"scale", b.scale}, {"shape", b.shape}};
        case BaselineSpec::Kind::piecewise_exp: return {{"kind", "piecewise_exp"}, {"cuts", b.cuts}, {"rates", b.rates}};
        case BaselineSpec::Kind::pwexp_density: return {{"kind", "pwexp_density"}, {"cuts", b.cuts}, {"rates", b.rates}};
        case BaselineSpec::Kind::gompertz: return {{"kind", "gompertz"}, {"kappa", b.kappa}, {"nu", b.nu}};
    }
    return {};
}

BaselineSpec baseline_from(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "weibull") return BaselineSpec::weibull(j.at("scale"), j.at("shape"));
    if (kind == "weibull_density") return BaselineSpec::weibull_density(j.at("scale"), j.at("shape"));
    if (kind == "piecewise_exp") return BaselineSpec::piecewise_exp(j.at("cuts"), j.at("rates"));
    if (kind == "pwexp_density") return BaselineSpec::pwexp_density(j.at("cuts"), j.at("rates"));
    if (kind == "gompertz") return BaselineSpec::gompertz(j.at("kappa"), j.at("nu"));
    throw SimulationError("unknown baseline kind '" + kind + "'");
}

Eigen::VectorXd vector_from(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

ScenarioConfig scenario_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw SimulationError(std::string("scenario JSON does not parse: ") + e.what());
    }
    try {
        ScenarioConfig s;
        if (j.contains("base")) s = scenario_by_label(j.at("base").get<std::string>());
        s.label = j.value("label", s.label);
        s.n = j.value("n", s.n);
        if (j.contains("clusters")) {
            const auto& c = j.at("clusters");
            s.clustered = true;
            s.n_clusters = c.at("M");
            s.size_min = c.at("size_min");
            s.size_max = c.at("size_max");
        }
        if (j.contains("covariates")) {
            s.covariates.clear();
            for (const auto& c : j.at("covariates")) {
                CovariateLaw law;
                law.name = c.at("name");
                const std::string kind = c.at("law");
                if (kind == "bernoulli") {
                    law.kind = CovariateLaw::Kind::bernoulli;
                    law.a = c.at("p");
                } else if (kind == "normal") {
                    law.kind = CovariateLaw::Kind::normal;
                    law.a = c.value("mean", 0.0);
                    law.b = c.value("sd", 1.0);
                } else {
                    throw SimulationError("unknown covariate law '" + kind + "'");
                }
                s.covariates.push_back(law);
            }
        }
        auto gamma_law = [](const json& g) { return GammaLaw{g.at("shape"), g.at("rate")}; };
        if (j.contains("frailty")) s.frailty = j.at("frailty").is_null() ? GammaLaw{} : gamma_law(j.at("frailty"));
        if (j.contains("cluster_frailty"))
            s.cluster_frailty = j.at("cluster_frailty").is_null() ? GammaLaw{} : gamma_law(j.at("cluster_frailty"));
        s.frailty_power = j.value("frailty_power", s.frailty_power);
        if (j.contains("recurrent")) {
            s.recurrent_baselines.clear();
            s.recurrent_alpha.clear();
            for (const auto& r : j.at("recurrent")) {
                s.recurrent_baselines.push_back(baseline_from(r.at("baseline")));
                s.recurrent_alpha.push_back(vector_from(r.at("alpha")));
            }
        }
        if (j.contains("death")) {
            s.death_baseline = baseline_from(j.at("death").at("baseline"));
            s.death_alpha = vector_from(j.at("death").at("alpha"));
        }
        if (j.contains("weights")) {
            s.weights.w_recur = j.at("weights").at("recur").get<std::vector<double>>();
            s.weights.w_term = j.at("weights").at("term");
        }
        if (j.contains("censoring")) {
            const auto& c = j.at("censoring");
            const std::string kind = c.at("kind");
            if (kind == "none") s.censoring = {};
            else if (kind == "exponential") s.censoring = {CensoringLaw::Kind::exponential, c.at("rate").get<double>(), {}};
            else if (kind == "covariate_exp")
                s.censoring = {CensoringLaw::Kind::covariate_exp, c.at("c0").get<double>(), vector_from(c.at("theta"))};
            else throw SimulationError("unknown censoring law '" + kind + "'");
        }
        s.intercept = j.value("intercept", s.intercept);
        if (j.contains("horizon")) s.horizon = j.at("horizon").is_null() ? infinity : j.at("horizon").get<double>();
        if (j.contains("ipcw")) s.ipcw = j.at("ipcw") == "km" ? CensoringKind::kaplan_meier : CensoringKind::cox;
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw SimulationError(std::string("invalid scenario JSON: ") + e.what());
    }
}

std::string scenario_to_json(const ScenarioConfig& s) {
    json j;
    j["label"] = s.label;
    j["n"] = s.n;
    if (s.clustered) j["clusters"] = {{"M", s.n_clusters}, {"size_min", s.size_min}, {"size_max", s.size_max}};
    j["covariates"] = json::array();
    for (const auto& c : s.covariates) {
        if (c.kind == CovariateLaw::Kind::bernoulli) j["covariates"].push_back({{"name", c.name}, {"law", "bernoulli"}, {"p", c.a}});
        else j["covariates"].push_back({{"name", c.name}, {"law", "normal"}, {"mean", c.a}, {"sd", c.b}});
    }
    j["frailty"] = s.frailty.enabled() ? json{{"shape", s.frailty.shape}, {"rate", s.frailty.rate}} : json(nullptr);
    j["cluster_frailty"] =
        s.cluster_frailty.enabled() ? json{{"shape", s.cluster_frailty.shape}, {"rate", s.cluster_frailty.rate}} : json(nullptr);
    j["frailty_power"] = s.frailty_power;
    j["recurrent"] = json::array();
    for (std::size_t k = 0; k < s.recurrent_baselines.size(); ++k)
        j["recurrent"].push_back({{"baseline", baseline_json(s.recurrent_baselines[k])}, {"alpha", to_std(s.recurrent_alpha[k])}});
    j["death"] = {{"baseline", baseline_json(s.death_baseline)}, {"alpha", to_std(s.death_alpha)}};
    j["weights"] = {{"recur", s.weights.w_recur}, {"term", s.weights.w_term}};
    switch (s.censoring.kind) {
        case CensoringLaw::Kind::none: j["censoring"] = {{"kind", "none"}}; break;
        case CensoringLaw::Kind::exponential: j["censoring"] = {{"kind", "exponential"}, {"rate", s.censoring.c0}}; break;
        case CensoringLaw::Kind::covariate_exp:
            j["censoring"] = {{"kind", "covariate_exp"}, {"c0", s.censoring.c0}, {"theta", to_std(s.censoring.theta)}};
            break;
    }
    j["intercept"] = s.intercept;
    if (std::isinf(s.horizon)) j["horizon"] = nullptr;
    else j["horizon"] = s.horizon;
    j["ipcw"] = s.ipcw == CensoringKind::kaplan_meier ? "km" : "cox";
    return j.dump(2);
}

// ===== generation =====

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
    // splitmix64 finalizer applied to a combination of the three counters
    auto mix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    return mix(mix(mix(seed) ^ index) ^ (stream * 0x632be59bd9b4e019ULL));
}

SimulatedSubject simulate_subject(const ScenarioConfig& s, double cluster_frailty, std::mt19937_64& rng, bool with_censoring) {
    std::exponential_distribution<double> unit_exp(1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    SimulatedSubject out;
    const auto p = static_cast<Eigen::Index>(s.covariates.size());
    out.z.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const auto& law = s.covariates[static_cast<std::size_t>(j)];
        out.z[j] = law.kind == CovariateLaw::Kind::bernoulli ? (unif(rng) < law.a ? 1.0 : 0.0) : law.a + law.b * normal(rng);
    }
    double w = 1.0;
    if (s.frailty.enabled()) w = std::gamma_distribution<double>(s.frailty.shape, 1.0 / s.frailty.rate)(rng);

    const double m_death = std::pow(w, s.frailty_power) * cluster_frailty * std::exp(s.death_alpha.dot(out.z));
    out.death = s.death_baseline.inverse_cumulative(unit_exp(rng) / m_death);

    const double end = std::min(out.death, s.horizon);
    if (std::isinf(end) && !s.recurrent_baselines.empty())
        throw SimulationError("a subject never dies and no follow-up horizon is set; give the scenario a finite 'horizon'");
    out.events.resize(s.recurrent_baselines.size());
    for (std::size_t k = 0; k < s.recurrent_baselines.size(); ++k) {
        const double m = w * cluster_frailty * std::exp(s.recurrent_alpha[k].dot(out.z));
        double x = 0.0;
        while (true) {
            x += unit_exp(rng) / m;
            const double t = s.recurrent_baselines[k].inverse_cumulative(x);
            if (!(t <= end)) break;
            out.events[k].push_back(t);
        }
    }

    out.censor = s.horizon;
    if (with_censoring) {
        if (s.censoring.kind == CensoringLaw::Kind::exponential) {
            out.censor = std::min(out.censor, unit_exp(rng) / s.censoring.c0);
        } else if (s.censoring.kind == CensoringLaw::Kind::covariate_exp) {
            out.censor = std::min(out.censor, unit_exp(rng) / (s.censoring.c0 * std::exp(s.censoring.theta.dot(out.z))));
        }
    }
    return out;
}

EventDataset simulate_dataset(const ScenarioConfig& s, std::uint64_t seed) {
    s.validate();
    std::mt19937_64 rng(seed);
    EventDataset data;
    data.K = static_cast<int>(s.recurrent_baselines.size());
    data.p = static_cast<int>(s.covariates.size());
    data.covariate_names = s.covariate_names();

    auto add = [&](const SimulatedSubject& sim, std::optional<std::string> cluster) {
        SubjectData subj;
        subj.id = std::to_string(data.subjects.size() + 1);
        subj.cluster = std::move(cluster);
        subj.z = sim.z;
        subj.U = std::min(sim.death, sim.censor);
        subj.delta = sim.death <= sim.censor;
        subj.recurrent.resize(sim.events.size());
        for (std::size_t k = 0; k < sim.events.size(); ++k)
            for (double t : sim.events[k])
                if (t <= subj.U) subj.recurrent[k].push_back(t);
        data.subjects.push_back(std::move(subj));
    };

    if (s.clustered) {
        std::uniform_int_distribution<int> size_law(s.size_min, s.size_max);
        for (int c = 0; c < s.n_clusters; ++c) {
            const int size = size_law(rng);
            double b = 1.0;
            if (s.cluster_frailty.enabled())
                b = std::gamma_distribution<double>(s.cluster_frailty.shape, 1.0 / s.cluster_frailty.rate)(rng);
            for (int m = 0; m < size; ++m) add(simulate_subject(s, b, rng), "c" + std::to_string(c + 1));
        }
        set_cluster_mode(data, true);
    } else {
        for (int i = 0; i < s.n; ++i) add(simulate_subject(s, 1.0, rng), std::nullopt);
    }
    return data;
}

EventDataset scenario_design(const ScenarioConfig& scenario, const EventDataset& data) {
    if (!scenario.intercept) return data;
    return select_covariates(data, data.covariate_names, true);
}

FitSpec default_fit_spec(const ScenarioConfig& scenario) {
    FitSpec spec;
    spec.basis.family = BasisFamily::step;
    spec.basis.knots = {1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};
    spec.tau_grid = spec.basis.knots;
    spec.weights = scenario.weights;
    spec.link = Link::log;
    spec.censoring.kind = scenario.ipcw;
    if (scenario.ipcw == CensoringKind::cox) spec.censoring.covariates = scenario.covariate_names();
    return spec;
}

// ===== closed forms =====

namespace {

template <class F>
double integrate(F f, double a, double b) {
    if (!(b > a)) return 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 15, 1e-8);
}

}  // namespace

double closed_form_rate(int dgm, const DgmParams& pr, double t, double a) {
    if (!(t > 0.0)) throw std::invalid_argument("closed-form rate needs t > 0");
    switch (dgm) {
        case 1:
            return pr.w_D * pr.lambda0 * std::exp(pr.beta_D * a);
        case 2: {
            if (!(pr.kappa > 0.0)) throw SimulationError("DGM 2 requires kappa > 0");
            const double alpha = pr.kappa * pr.lambda0 * std::exp(pr.beta_D * a);
            const double g = 1.0 + alpha * t;
            if (pr.kappa == 1.0) return pr.w_D * alpha * (1.0 - 1.0 / g) / std::log(g);
            const double e = 1.0 - 1.0 / pr.kappa;
            // (1+αt)^{-1/κ} and (1+αt)^{1-1/κ} - 1 via log1p for accuracy at small κ·λ0
            const double lg = std::log1p(alpha * t);
            const double surv = std::exp(-lg / pr.kappa);
            return pr.w_D * alpha * e * (1.0 - surv) / std::expm1(e * lg);
        }
        case 3:
        case 4: {
            if (pr.recurrent.size() != pr.beta_recur.size() || pr.recurrent.size() != pr.w_recur.size())
                throw SimulationError("DGM 3/4 need one coefficient and weight per recurrent type");
            const double hd = std::exp(pr.beta_D * a);
            // surv(u) = P(D ≥ u); frail(u) = E[W · 1{D ≥ u}]
            std::function<double(double)> surv, frail;
            if (dgm == 3) {
                surv = [&](double u) { return std::exp(-hd * pr.death_baseline.cumulative(u)); };
                frail = surv;
            } else {
                if (!(pr.kappa > 0.0)) throw SimulationError("DGM 4 requires kappa > 0");
                const double k = pr.kappa;
                if (pr.frailty_power == 1.0) {
                    surv = [&, k](double u) { return std::pow(1.0 + k * hd * pr.death_baseline.cumulative(u), -1.0 / k); };
                    frail = [&, k](double u) { return std::pow(1.0 + k * hd * pr.death_baseline.cumulative(u), -1.0 / k - 1.0); };
                } else {
                    const double shape = 1.0 / k;
                    const double log_norm = shape * std::log(shape) - std::lgamma(shape);
                    auto mix = [&, shape, log_norm](double u, double power_w) {
                        const double lam = hd * pr.death_baseline.cumulative(u);
                        auto f = [&](double w) {
                            if (w <= 0.0) return 0.0;
                            return std::exp(log_norm + (shape - 1.0 + power_w) * std::log(w) - shape * w -
                                            std::pow(w, pr.frailty_power) * lam);
                        };
                        return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, 0.0, infinity, 15, 1e-9);
                    };
                    surv = [mix](double u) { return mix(u, 0.0); };
                    frail = [mix](double u) { return mix(u, 1.0); };
                }
            }
            double numerator = pr.w_D * (1.0 - surv(t));
            for (std::size_t k = 0; k < pr.recurrent.size(); ++k) {
                const auto& base = pr.recurrent[k];
                numerator += pr.w_recur[k] * std::exp(pr.beta_recur[k] * a) *
                             integrate([&](double u) { return base.intensity(u) * frail(u); }, 0.0, t);
            }
            const double denominator = integrate(surv, 0.0, t);
            return numerator / denominator;
        }
        default:
            throw std::invalid_argument("DGM id must be 1, 2, 3 or 4");
    }
}

// ===== oracle =====

Eigen::MatrixXd true_beta_oracle(const ScenarioConfig& scenario, const std::vector<double>& t_grid, std::size_t superpop_n,
                                 std::uint64_t seed, Link link, int threads) {
    scenario.validate();
    if (t_grid.empty()) throw std::invalid_argument("oracle grid is empty");
    for (double t : t_grid)
        if (t > scenario.horizon) throw SimulationError("oracle time exceeds the scenario follow-up horizon");
    const std::size_t V = t_grid.size();
    const int p = static_cast<int>(scenario.covariates.size()) + (scenario.intercept ? 1 : 0);

    // Work in chunks with their own substreams so the result does not depend on the thread count.
    const double mean_size = scenario.clustered ? 0.5 * (scenario.size_min + scenario.size_max) : 1.0;
    const std::size_t units = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(static_cast<double>(superpop_n) / mean_size)));
    const std::size_t chunk_units = scenario.clustered ? 200 : 10000;
    const std::size_t chunks = (units + chunk_units - 1) / chunk_units;

    struct Chunk {
        std::vector<Eigen::VectorXd> z;
        std::vector<double> loss;      // subject-major, V per subject
        std::vector<double> exposure;  // same layout
    };
    std::vector<Chunk> parts(chunks);
    std::vector<double> w_recur = scenario.weights.w_recur;
    parallel_for(chunks, threads, [&](std::size_t c) {
        std::mt19937_64 rng(substream_seed(seed, c, 0x0a11ce));
        const std::size_t begin = c * chunk_units, end = std::min(units, begin + chunk_units);
        Chunk& out = parts[c];
        auto record = [&](const SimulatedSubject& sim) {
            Eigen::VectorXd z(p);
            if (scenario.intercept) z << 1.0, sim.z;
            else z = sim.z;
            out.z.push_back(std::move(z));
            for (double t : t_grid) {
                double l = 0.0;
                for (std::size_t k = 0; k < sim.events.size(); ++k) {
                    const auto& ev = sim.events[k];
                    l += w_recur[k] * static_cast<double>(std::upper_bound(ev.begin(), ev.end(), t) - ev.begin());
                }
                if (sim.death <= t) l += scenario.weights.w_term;
                out.loss.push_back(l);
                out.exposure.push_back(std::min(sim.death, t));
            }
        };
        for (std::size_t u = begin; u < end; ++u) {
            if (scenario.clustered) {
                const int size = std::uniform_int_distribution<int>(scenario.size_min, scenario.size_max)(rng);
                double b = 1.0;
                if (scenario.cluster_frailty.enabled())
                    b = std::gamma_distribution<double>(scenario.cluster_frailty.shape, 1.0 / scenario.cluster_frailty.rate)(rng);
                for (int m = 0; m < size; ++m) record(simulate_subject(scenario, b, rng, false));
            } else {
                record(simulate_subject(scenario, 1.0, rng, false));
            }
        }
    });

    Eigen::MatrixXd beta(static_cast<Eigen::Index>(V), p);
    for (std::size_t v = 0; v < V; ++v) {
        Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
        bool converged = false;
        for (int iter = 0; iter < 100 && !converged; ++iter) {
            Eigen::VectorXd score = Eigen::VectorXd::Zero(p);
            Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
            double count = 0.0;
            for (const auto& part : parts)
                for (std::size_t i = 0; i < part.z.size(); ++i) {
                    const auto& z = part.z[i];
                    const double lp = b.dot(z);
                    const double e = part.exposure[i * V + v];
                    score += z * (part.loss[i * V + v] - LinkFunction::inverse(link, lp) * e);
                    info.noalias() += LinkFunction::inverse_derivative(link, lp) * e * z * z.transpose();
                    count += 1.0;
                }
            score /= count;
            info /= count;
            if (score.cwiseAbs().maxCoeff() <= 1e-10) {
                converged = true;
                break;
            }
            Eigen::VectorXd step = info.ldlt().solve(score);
            // Cap wild first steps under the log link.
            const double big = step.cwiseAbs().maxCoeff();
            if (big > 2.0) step *= 2.0 / big;
            b += step;
        }
        if (!converged) throw SimulationError("true-beta oracle did not converge at t = " + std::to_string(t_grid[v]));
        beta.row(static_cast<Eigen::Index>(v)) = b.transpose();
    }
    return beta;
}

// ===== replication =====

const MetricsRow& MetricsTable::row(double time, const std::string& coefficient) const {
    for (const auto& r : rows)
        if (std::abs(r.time - time) < 1e-12 && r.coefficient == coefficient) return r;
    throw std::out_of_range("no metrics row for " + coefficient + " at the requested time");
}

MetricsTable run_scenario(const ScenarioConfig& scenario, const FitSpec& fit_spec, const ReplicationOptions& opt) {
    scenario.validate();
    if (opt.replicates < 1) throw std::invalid_argument("need at least one replicate");
    const std::vector<double> times = opt.eval_times.empty() ? fit_spec.tau_grid : opt.eval_times;
    const Eigen::MatrixXd truth =
        opt.oracle ? *opt.oracle : true_beta_oracle(scenario, times, opt.superpop_n, substream_seed(opt.seed, 0, 2), fit_spec.link, opt.threads);
    std::vector<std::string> names = scenario.covariate_names();
    if (scenario.intercept) names.insert(names.begin(), "(Intercept)");
    const int p = static_cast<int>(names.size());
    if (truth.rows() != static_cast<Eigen::Index>(times.size()) || truth.cols() != p)
        throw std::invalid_argument("oracle dimensions do not match the evaluation grid and design");

    const auto n_rows = static_cast<Eigen::Index>(times.size()) * p;
    MetricsTable table;
    table.label = scenario.label;
    table.replicates = opt.replicates;
    table.estimates = Eigen::MatrixXd::Constant(opt.replicates, n_rows, std::nan(""));
    table.standard_errors = table.estimates;
    std::vector<std::string> failure(static_cast<std::size_t>(opt.replicates));

    parallel_for(static_cast<std::size_t>(opt.replicates), opt.threads, [&](std::size_t r) {
        try {
            const EventDataset data = scenario_design(scenario, simulate_dataset(scenario, substream_seed(opt.seed, r, 1)));
            const FitResult fit = solve(data, fit_spec);
            for (std::size_t v = 0; v < times.size(); ++v)
                for (int j = 0; j < p; ++j) {
                    const Interval ci = pointwise_ci(fit, j, times[v]);
                    const auto col = static_cast<Eigen::Index>(v) * p + j;
                    table.estimates(static_cast<Eigen::Index>(r), col) = ci.estimate;
                    table.standard_errors(static_cast<Eigen::Index>(r), col) = ci.se;
                }
        } catch (const std::exception& e) {
            failure[r] = e.what();
        }
    });

    for (std::size_t r = 0; r < failure.size(); ++r)
        if (!failure[r].empty()) {
            ++table.failed;
            table.failures.push_back("replicate " + std::to_string(r) + ": " + failure[r]);
        }
    if (table.failed > 0.05 * opt.replicates) {
        std::string msg = std::to_string(table.failed) + " of " + std::to_string(opt.replicates) + " replicates failed";
        if (!table.failures.empty()) msg += "; first: " + table.failures.front();
        throw SimulationError(msg);
    }

    const double z = normal_quantile(0.95);
    for (std::size_t v = 0; v < times.size(); ++v)
        for (int j = 0; j < p; ++j) {
            const auto col = static_cast<Eigen::Index>(v) * p + j;
            const double true_value = truth(static_cast<Eigen::Index>(v), j);
            double sum = 0.0, sum_se = 0.0, cover = 0.0;
            int ok = 0;
            for (int r = 0; r < opt.replicates; ++r) {
                const double est = table.estimates(r, col);
                if (std::isnan(est)) continue;
                const double se = table.standard_errors(r, col);
                sum += est;
                sum_se += se;
                cover += std::abs(est - true_value) <= z * se ? 1.0 : 0.0;
                ++ok;
            }
            MetricsRow row;
            row.time = times[v];
            row.coefficient = names[static_cast<std::size_t>(j)];
            row.truth = true_value;
            row.mean_estimate = sum / ok;
            double ss = 0.0;
            for (int r = 0; r < opt.replicates; ++r) {
                const double est = table.estimates(r, col);
                if (!std::isnan(est)) ss += (est - row.mean_estimate) * (est - row.mean_estimate);
            }
            row.abias = std::abs(row.mean_estimate - true_value);
            row.mcsd = ok > 1 ? std::sqrt(ss / (ok - 1)) : 0.0;
            row.aese = sum_se / ok;
            row.cp = cover / ok;
            table.rows.push_back(row);
        }
    return table;
}

void write_metrics_csv(std::ostream& out, const MetricsTable& table) {
    out << "scenario,time,coefficient,true,mean_estimate,abias,mcsd,aese,cp,replicates,failed\n";
    out << std::setprecision(10);
    for (const auto& r : table.rows)
        out << table.label << ',' << r.time << ',' << r.coefficient << ',' << r.truth << ',' << r.mean_estimate << ',' << r.abias
            << ',' << r.mcsd << ',' << r.aese << ',' << r.cp << ',' << table.replicates << ',' << table.failed << '\n';
}

}  // namespace wa
