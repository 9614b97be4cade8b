// wareg: command-line front end for while-alive regression.
//
// Subcommands: fit, predict, cv, simulate. Data go to --out (or stdout);
// diagnostics and warnings go to stderr. Exit codes: 0 success, 1 I/O error,
// 2 model or usage error.

#include "manifest.hpp"

#include "whilealive/censoring.hpp"
#include "whilealive/crossval.hpp"
#include "whilealive/data_model.hpp"
#include "whilealive/estimator.hpp"
#include "whilealive/inference.hpp"
#include "whilealive/simulator.hpp"
#include "whilealive/spline_basis.hpp"
#include "whilealive/variance.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

using nlohmann::json;

namespace wa::cli {
namespace {

constexpr int exit_io = 1;
constexpr int exit_model = 2;

/** Failure with an explicit exit code and the module it came from. */
struct CommandError : std::runtime_error {
    int code;
    CommandError(int c, const std::string& message) : std::runtime_error(message), code(c) {}
};

// ===== small parsing helpers =====

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> parse_doubles(const std::string& text, const std::string& flag) {
    std::vector<double> out;
    for (const auto& item : split_list(text)) out.push_back(parse_double(item, flag));
    return out;
}

std::vector<int> parse_ints(const std::string& text, const std::string& flag) {
    std::vector<int> out;
    for (double v : parse_doubles(text, flag)) {
        if (v != std::floor(v)) throw std::invalid_argument(flag + " expects integers");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

struct Formula {
    std::string time = "time";
    std::string status = "status";
    std::vector<std::string> covariates;
    bool intercept = true;
};

/** `Surv(time,status) ~ a+b`; `0 +` or `- 1` on the right drops the intercept. */
Formula parse_formula(const std::string& text) {
    static const std::regex shape(R"(^\s*Surv\s*\(\s*([^,\s]+)\s*,\s*([^)\s]+)\s*\)\s*~(.*)$)");
    std::smatch m;
    if (!std::regex_match(text, m, shape)) throw std::invalid_argument("formula must look like Surv(time,status) ~ z1+z2");
    Formula f;
    f.time = m[1];
    f.status = m[2];
    std::string rhs = m[3];
    static const std::regex minus_one(R"(-\s*1(?![0-9.]))");
    if (std::regex_search(rhs, minus_one)) {
        f.intercept = false;
        rhs = std::regex_replace(rhs, minus_one, "");
    }
    std::string term;
    std::istringstream in(rhs);
    while (std::getline(in, term, '+')) {
        term = trim(term);
        if (term.empty()) continue;
        if (term == "0") {
            f.intercept = false;
        } else if (term == "1") {
            f.intercept = true;
        } else {
            if (term.find_first_of("*:()^-") != std::string::npos)
                throw std::invalid_argument("formula term '" + term + "' is not a plain column name");
            f.covariates.push_back(term);
        }
    }
    return f;
}

// ===== data loading =====

struct LoadedData {
    EventDataset data;
    std::vector<std::string> all_columns;
};

/**
 * Read long-format CSV, renaming the formula's time/status columns and the
 * cluster column so the ingest layer sees its canonical names.
 */
LoadedData load_dataset(const std::string& path, const Formula& formula, const std::optional<std::string>& cluster,
                        std::optional<int> K) {
    if (!std::filesystem::exists(path)) throw IoError("input file not found: " + path);
    CsvTable table = read_csv_file(path);
    for (auto& h : table.header) {
        if (h == formula.time) h = "time";
        else if (h == formula.status) h = "status";
        else if (cluster && h == *cluster) h = "cluster";
    }
    if (cluster && std::find(table.header.begin(), table.header.end(), "cluster") == table.header.end())
        throw IoError("cluster column '" + *cluster + "' not found in " + path);
    // Keep only columns the analysis needs so unrelated text columns cannot break parsing.
    std::vector<std::string> keep{"id", "time", "status"};
    if (cluster) keep.push_back("cluster");
    for (const auto& c : formula.covariates) keep.push_back(c);
    std::vector<int> positions;
    for (const auto& name : keep) {
        auto it = std::find(table.header.begin(), table.header.end(), name);
        if (it == table.header.end()) throw IoError("column '" + name + "' not found in " + path);
        positions.push_back(static_cast<int>(it - table.header.begin()));
    }
    CsvTable narrow;
    for (int c : positions) narrow.header.push_back(table.header[static_cast<std::size_t>(c)]);
    for (const auto& row : table.rows) {
        std::vector<std::string> r;
        for (int c : positions) r.push_back(row[static_cast<std::size_t>(c)]);
        narrow.rows.push_back(std::move(r));
    }
    LoadedData out;
    out.all_columns = table.header;
    IngestOptions options;
    options.K = K;
    std::vector<EventRecord> records = records_from_csv(narrow, options.covariate_names);
    out.data = ingest_long(records, options);
    set_cluster_mode(out.data, cluster.has_value());
    out.data = select_covariates(out.data, formula.covariates, formula.intercept);
    return out;
}

// ===== JSON for model objects =====

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json matrix_rows_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> r(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
        rows.push_back(r);
    }
    return rows;
}

Eigen::MatrixXd matrix_from_rows(const json& rows, Eigen::Index n) {
    Eigen::MatrixXd m(n, n);
    if (rows.size() != static_cast<std::size_t>(n)) throw std::invalid_argument("vcov has the wrong number of rows");
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto r = rows.at(static_cast<std::size_t>(i)).get<std::vector<double>>();
        if (r.size() != static_cast<std::size_t>(n)) throw std::invalid_argument("vcov row has the wrong length");
        for (Eigen::Index j = 0; j < n; ++j) m(i, j) = r[static_cast<std::size_t>(j)];
    }
    return m;
}

json spec_json(const FitSpec& spec, const std::vector<std::string>& covariates, bool intercept) {
    json censoring = {{"kind", spec.censoring.kind == CensoringKind::cox ? "cox" : "km"}, {"covariates", spec.censoring.covariates}};
    if (spec.censoring.strata) censoring["strata"] = *spec.censoring.strata;
    json j = {{"basis", basis_family_name(spec.basis.family)},
              {"degree", spec.basis.degree},
              {"knots", spec.basis.knots},
              {"tau_grid", spec.tau_grid},
              {"weights_recur", spec.weights.w_recur},
              {"weight_term", spec.weights.w_term},
              {"link", link_name(spec.link)},
              {"ipcw", censoring},
              {"positivity_floor", spec.positivity_floor},
              {"covariates", covariates},
              {"intercept", intercept}};
    if (spec.weight_cap_quantile) j["weight_cap_quantile"] = *spec.weight_cap_quantile;
    return j;
}

/** Enough of a fit to evaluate β(t) and predictions: coefficients, covariance and basis. */
FitResult fit_from_json(const json& j) {
    FitResult fit;
    const json& spec = j.at("spec");
    fit.spec.basis.family = parse_basis_family(spec.at("basis"));
    fit.spec.basis.degree = spec.at("degree");
    fit.spec.basis.knots = spec.at("knots").get<std::vector<double>>();
    fit.spec.basis.validate();
    fit.spec.tau_grid = spec.at("tau_grid").get<std::vector<double>>();
    fit.spec.link = parse_link(spec.at("link"));
    fit.covariate_names = spec.at("covariates").get<std::vector<std::string>>();
    if (spec.value("intercept", false)) fit.covariate_names.insert(fit.covariate_names.begin(), "(Intercept)");
    fit.p = static_cast<int>(fit.covariate_names.size());
    fit.R = fit.spec.basis.dimension();
    const auto est = j.at("est").get<std::vector<double>>();
    const auto n = static_cast<Eigen::Index>(fit.p) * fit.R;
    if (static_cast<Eigen::Index>(est.size()) != n) throw std::invalid_argument("fit JSON: est length does not equal p*R");
    fit.gamma = Eigen::Map<const Eigen::VectorXd>(est.data(), n);
    if (j.contains("vcov") && !j.at("vcov").is_null()) {
        fit.vcov = matrix_from_rows(j.at("vcov"), n);
        fit.vcov_available = true;
    }
    return fit;
}

// ===== output helpers =====

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

/** Manifest path accompanying a tabular output file. */
std::string manifest_path(const std::string& out) { return out + ".manifest.json"; }

std::string fmt(double x) {
    std::ostringstream s;
    s << std::setprecision(std::numeric_limits<double>::max_digits10) << x;
    return s.str();
}

/** Default stacking grid when --tau-grid is absent. */
std::vector<double> default_stacking(const BasisConfig& basis) {
    std::vector<double> grid;
    const bool dense = basis.family == BasisFamily::bspline || basis.family == BasisFamily::mspline ||
                       basis.family == BasisFamily::piecewise_poly;
    if (!dense) {
        for (double k : basis.knots)
            if (k > 0.0) grid.push_back(k);
        return grid;
    }
    // Smooth bases need at least R distinct stacking times to identify every coefficient.
    const int points = std::max(basis.dimension(), 10);
    const double a = basis.knots.front(), b = basis.knots.back();
    for (int k = 1; k <= points; ++k) grid.push_back(a + (b - a) * k / points);
    return grid;
}

// ===== shared option blocks =====

struct ModelOptions {
    std::string data;
    std::string formula = "Surv(time,status) ~ 1";
    std::string weights_recur;
    double weight_term = 1.0;
    std::string link = "log";
    std::string ipcw = "cox";
    std::string ipcw_formula;
    std::string ipcw_strata;
    std::optional<std::string> cluster;
    std::optional<double> weight_cap;
    double positivity_floor = default_positivity_floor;

    void add_to(CLI::App* app) {
        app->add_option("--data", data, "long-format CSV (id,[cluster,]time,status,covariates...)")->required();
        app->add_option("--formula", formula, "Surv(time,status) ~ z1+z2 (intercept unless 0+ or -1)");
        app->add_option("--weights-recur", weights_recur, "comma-separated weights w_1..w_K for recurrent types");
        app->add_option("--weight-term", weight_term, "weight of the terminal event");
        app->add_option("--link", link, "log or identity");
        app->add_option("--ipcw", ipcw, "censoring model: km or cox")->check(CLI::IsMember({"km", "cox"}));
        app->add_option("--ipcw-formula", ipcw_formula, "comma-separated Cox censoring covariates (default: all regressors)");
        app->add_option("--ipcw-strata", ipcw_strata, "covariate whose values stratify the KM censoring model");
        app->add_option("--cluster", cluster, "column holding cluster ids; enables cluster-robust variance");
        app->add_option("--weight-cap", weight_cap, "cap IPCW weights at this quantile instead of failing on positivity");
        app->add_option("--positivity-floor", positivity_floor, "smallest censoring survival accepted");
    }

    WeightScheme weights() const {
        WeightScheme w;
        w.w_recur = parse_doubles(weights_recur, "--weights-recur");
        w.w_term = weight_term;
        return w;
    }

    CensoringSpec censoring(const Formula& formula) const {
        CensoringSpec c;
        c.kind = ipcw == "km" ? CensoringKind::kaplan_meier : CensoringKind::cox;
        if (c.kind == CensoringKind::cox) {
            c.covariates = ipcw_formula.empty() ? formula.covariates : split_list(ipcw_formula);
            for (const auto& name : c.covariates)
                if (std::find(formula.covariates.begin(), formula.covariates.end(), name) == formula.covariates.end())
                    throw std::invalid_argument("IPCW covariate '" + name + "' must also appear in the regression formula");
        } else if (!ipcw_strata.empty()) {
            c.strata = ipcw_strata;
        }
        return c;
    }

    json to_json() const {
        json j = {{"data", data},       {"formula", formula}, {"weights_recur", weights_recur}, {"weight_term", weight_term},
                  {"link", link},       {"ipcw", ipcw},       {"ipcw_formula", ipcw_formula},   {"ipcw_strata", ipcw_strata},
                  {"positivity_floor", positivity_floor}};
        j["cluster"] = cluster ? json(*cluster) : json(nullptr);
        j["weight_cap"] = weight_cap ? json(*weight_cap) : json(nullptr);
        return j;
    }

    /** K comes from the weight vector when one is given, otherwise from the data. */
    std::optional<int> K() const {
        if (weights_recur.empty()) return std::nullopt;
        return static_cast<int>(split_list(weights_recur).size());
    }
};

// ===== fit =====

struct FitOptions {
    ModelOptions model;
    std::string basis = "st";
    int degree = 3;
    std::string knots;
    std::string tau_grid;
    std::string out;
    bool report = false;
    double level = 0.95;
};

json fit_report(const FitResult& fit, const EventDataset& data, double level) {
    json report;
    report["level"] = level;
    report["ci"] = json::array();
    for (int j = 0; j < fit.p; ++j)
        for (double t : fit.spec.basis.knots) {
            const Interval ci = pointwise_ci(fit, j, t, level);
            json row = {{"covariate", fit.covariate_names[static_cast<std::size_t>(j)]},
                        {"t", t},
                        {"estimate", ci.estimate},
                        {"se", ci.se},
                        {"lower", ci.lower},
                        {"upper", ci.upper}};
            if (fit.spec.link == Link::log) {
                row["rate_ratio"] = std::exp(ci.estimate);
                row["rate_reduction"] = rate_reduction(ci.estimate);
            }
            report["ci"].push_back(row);
        }
    report["wald"] = json::array();
    for (int j = 0; j < fit.p; ++j) {
        json row = {{"covariate", fit.covariate_names[static_cast<std::size_t>(j)]}};
        try {
            const WaldResult w = global_wald(fit, j);
            row.update({{"statistic", w.statistic}, {"df", w.df}, {"p_value", w.p_value}});
        } catch (const InferenceError& e) {
            row["error"] = e.what();
        }
        report["wald"].push_back(row);
    }
    // Time-averaged effects over the stacking range, weighted by the at-risk proportion.
    const double ta = fit.spec.basis.knots.front(), tb = fit.spec.tau_grid.back();
    report["averaged"] = json::array();
    if (tb > ta) {
        const WeightFunction w = at_risk_weight(data);
        for (int j = 0; j < fit.p; ++j) {
            const AveragedEffect a = averaged_effect(fit, j, ta, tb, w);
            report["averaged"].push_back(
                {{"covariate", fit.covariate_names[static_cast<std::size_t>(j)]}, {"from", ta}, {"to", tb}, {"estimate", a.estimate}, {"se", a.se}});
        }
    }
    return report;
}

int cmd_fit(const FitOptions& o, RunManifest& manifest) {
    const Formula formula = parse_formula(o.model.formula);
    manifest.add_input(o.model.data);
    const LoadedData loaded = load_dataset(o.model.data, formula, o.model.cluster, o.model.K());
    const EventDataset& data = loaded.data;

    FitSpec spec;
    spec.basis.family = parse_basis_family(o.basis);
    spec.basis.degree = o.degree;
    if (o.knots.empty()) throw std::invalid_argument("--knots is required");
    spec.basis.knots = parse_doubles(o.knots, "--knots");
    spec.basis.validate();
    spec.tau_grid = o.tau_grid.empty() ? default_stacking(spec.basis) : parse_doubles(o.tau_grid, "--tau-grid");
    spec.weights = o.model.weights();
    if (spec.weights.w_recur.empty()) spec.weights.w_recur.assign(static_cast<std::size_t>(data.K), 1.0);
    spec.link = parse_link(o.model.link);
    spec.censoring = o.model.censoring(formula);
    spec.positivity_floor = o.model.positivity_floor;
    spec.weight_cap_quantile = o.model.weight_cap;

    json config = o.model.to_json();
    config.update({{"basis", o.basis}, {"degree", o.degree}, {"knots", o.knots}, {"tau_grid", o.tau_grid}, {"report", o.report}});
    manifest.set_config(config);

    const FitResult fit = solve(data, spec);
    for (const auto& d : fit.diagnostics) std::cerr << "warning: " << d << '\n';

    json out;
    out["est"] = vector_json(fit.gamma);
    out["vcov"] = fit.vcov_available ? matrix_rows_json(fit.vcov) : json(nullptr);
    out["spec"] = spec_json(spec, formula.covariates, formula.intercept);
    out["coefficient_names"] = fit.covariate_names;
    out["diagnostics"] = {{"iterations", fit.iterations},
                          {"score_norm", fit.score_norm},
                          {"converged", true},
                          {"n_subjects", fit.n_subjects},
                          {"n_units", fit.n_units},
                          {"cluster_mode", fit.cluster_mode},
                          {"K", data.K},
                          {"p", fit.p},
                          {"R", fit.R},
                          {"censoring_iterations", fit.censoring.iterations},
                          {"censoring_theta", vector_json(fit.censoring.theta)},
                          {"messages", fit.diagnostics}};
    if (o.report) out["report"] = fit_report(fit, data, o.level);
    out["manifest"] = manifest.to_json();
    write_text(o.out, out.dump(2) + "\n");
    return 0;
}

// ===== predict =====

struct PredictOptions {
    std::string fit;
    std::string newdata;
    std::string times;
    std::string out;
    double level = 0.95;
};

int cmd_predict(const PredictOptions& o, RunManifest& manifest) {
    if (!std::filesystem::exists(o.fit)) throw IoError("fit file not found: " + o.fit);
    if (!std::filesystem::exists(o.newdata)) throw IoError("newdata file not found: " + o.newdata);
    manifest.add_input(o.fit);
    manifest.add_input(o.newdata);
    manifest.set_config({{"fit", o.fit}, {"newdata", o.newdata}, {"times", o.times}, {"level", o.level}, {"out", o.out}});

    json fit_json;
    {
        std::ifstream in(o.fit);
        try {
            fit_json = json::parse(in);
        } catch (const json::exception& e) {
            throw IoError("fit file '" + o.fit + "' is not valid JSON: " + e.what());
        }
    }
    const FitResult fit = fit_from_json(fit_json);
    const bool intercept = fit_json.at("spec").value("intercept", false);
    const auto names = fit_json.at("spec").at("covariates").get<std::vector<std::string>>();

    const CsvTable table = read_csv_file(o.newdata);
    auto column = [&](const std::string& name) {
        auto it = std::find(table.header.begin(), table.header.end(), name);
        return it == table.header.end() ? -1 : static_cast<int>(it - table.header.begin());
    };
    const int id_col = column("id");
    if (id_col < 0) throw IoError("newdata must contain an id column");
    std::vector<int> cov_cols;
    for (const auto& n : names) {
        const int c = column(n);
        if (c < 0) throw std::invalid_argument("newdata lacks covariate '" + n + "' used by the fit");
        cov_cols.push_back(c);
    }
    const int t_col = column("t");
    const std::vector<double> times = o.times.empty() ? fit.spec.tau_grid : parse_doubles(o.times, "--times");
    const double last_knot = fit.spec.basis.knots.back();

    std::ostringstream csv;
    csv << "id,t,mu,lb,ub\n";
    std::map<std::string, bool> seen;
    bool warned = false;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string& id = row[static_cast<std::size_t>(id_col)];
        // Long-format newdata repeats covariates per row; one prediction set per subject unless t is given.
        if (t_col < 0 && seen[id]) continue;
        seen[id] = true;
        Eigen::VectorXd z(fit.p);
        Eigen::Index k = 0;
        if (intercept) z[k++] = 1.0;
        for (int c : cov_cols) z[k++] = parse_double(row[static_cast<std::size_t>(c)], "newdata row " + std::to_string(r + 2));
        const std::vector<double> row_times =
            t_col >= 0 ? std::vector<double>{parse_double(row[static_cast<std::size_t>(t_col)], "newdata t")} : times;
        for (double t : row_times) {
            if (t < 0.0) throw std::invalid_argument("prediction time must be nonnegative");
            if (t > last_knot && !warned) {
                std::cerr << "warning: prediction time " << t << " lies past the last knot " << last_knot
                          << "; the basis is evaluated at the last knot\n";
                warned = true;
            }
            const Interval p = predict_rate(fit, z, t, o.level);
            csv << id << ',' << fmt(t) << ',' << fmt(p.estimate) << ',' << fmt(p.lower) << ',' << fmt(p.upper) << '\n';
        }
    }
    write_text(o.out, csv.str());
    if (!o.out.empty() && o.out != "-") write_text(manifest_path(o.out), manifest.to_json().dump(2) + "\n");
    return 0;
}

// ===== cv =====

struct CvOptions {
    ModelOptions model;
    std::string basis_set = "st";
    std::string degree_vec = "3";
    std::string n_int_vec = "3";
    std::string knot_scheme = "equidist";
    std::string link_set;
    std::string time_range;
    std::string tau_grid;
    int K = 5;
    int T = 100;
    std::string out;
    std::string selection;
};

int cmd_cv(const CvOptions& o, std::uint64_t seed, int threads, RunManifest& manifest) {
    const Formula formula = parse_formula(o.model.formula);
    manifest.add_input(o.model.data);
    const LoadedData loaded = load_dataset(o.model.data, formula, o.model.cluster, o.model.K());
    const EventDataset& data = loaded.data;

    CvGrid grid;
    grid.families.clear();
    for (const auto& f : split_list(o.basis_set)) grid.families.push_back(parse_basis_family(f));
    grid.degrees = parse_ints(o.degree_vec, "--degree-vec");
    grid.n_interior = parse_ints(o.n_int_vec, "--n-int-vec");
    grid.knot_scheme = parse_knot_scheme(o.knot_scheme);
    grid.links.clear();
    for (const auto& l : split_list(o.link_set.empty() ? o.model.link : o.link_set)) grid.links.push_back(parse_link(l));
    if (!o.time_range.empty()) {
        const auto r = parse_doubles(o.time_range, "--time-range");
        if (r.size() != 2) throw std::invalid_argument("--time-range expects two values a,b");
        grid.time_range = std::make_pair(r[0], r[1]);
    }
    if (!o.tau_grid.empty()) grid.tau_grid = parse_doubles(o.tau_grid, "--tau-grid");
    grid.K = o.K;
    grid.T = o.T;
    grid.seed = seed;
    grid.threads = threads;
    grid.weights = o.model.weights();
    if (grid.weights.w_recur.empty()) grid.weights.w_recur.assign(static_cast<std::size_t>(data.K), 1.0);
    grid.censoring = o.model.censoring(formula);

    json config = o.model.to_json();
    config.update({{"basis_set", o.basis_set}, {"degree_vec", o.degree_vec}, {"n_int_vec", o.n_int_vec},
                   {"knot_scheme", o.knot_scheme}, {"link_set", o.link_set}, {"time_range", o.time_range},
                   {"tau_grid", o.tau_grid}, {"K", o.K}, {"T", o.T}});
    manifest.set_config(config);
    manifest.set_seed(seed);

    const CvResult result = select(data, grid);

    std::ostringstream csv;
    csv << "config,basis,degree,n_interior,link,n_knots,ok,pe";
    for (int b = 0; b < grid.K; ++b) csv << ",pe_fold" << b + 1;
    csv << ",failure\n";
    for (const auto& e : result.entries) {
        csv << e.config.label() << ',' << basis_family_name(e.config.family) << ',' << e.config.degree << ',' << e.config.n_interior
            << ',' << link_name(e.config.link) << ',' << e.n_knots << ',' << (e.ok ? 1 : 0) << ',' << (e.ok ? fmt(e.pe) : "NA");
        for (double pe : e.fold_pe) csv << ',' << (e.ok ? fmt(pe) : "NA");
        std::string failure = e.failure;
        std::replace(failure.begin(), failure.end(), ',', ';');
        std::replace(failure.begin(), failure.end(), '\n', ' ');
        csv << ',' << failure << '\n';
    }
    write_text(o.out, csv.str());

    const CvEntry& best = result.entries[result.selected];
    std::vector<double> follow_up;
    for (const auto& s : data.subjects) follow_up.push_back(s.U);
    json sel = {{"selected",
                 {{"config", best.config.label()},
                  {"basis", basis_family_name(best.config.family)},
                  {"degree", best.config.degree},
                  {"n_interior", best.config.n_interior},
                  {"link", link_name(best.config.link)},
                  {"knots", config_knots(best.config, grid.knot_scheme, result.t_min, result.tau, follow_up)},
                  {"pe", best.pe}}},
                {"time_range", {result.t_min, result.tau}},
                {"n_configurations", result.entries.size()},
                {"n_disqualified", std::count_if(result.entries.begin(), result.entries.end(), [](const CvEntry& e) { return !e.ok; })},
                {"manifest", manifest.to_json()}};
    const std::string sel_path = o.selection.empty() ? (o.out.empty() || o.out == "-" ? "-" : o.out + ".selection.json") : o.selection;
    if (sel_path == "-" && (o.out.empty() || o.out == "-")) std::cerr << sel.dump(2) << '\n';
    else write_text(sel_path, sel.dump(2) + "\n");
    return 0;
}

// ===== simulate =====

struct SimulateOptions {
    std::string scenario;
    int replicates = 200;
    std::optional<int> n;
    std::size_t superpop = 1000000;
    std::string eval_times;
    std::string out;
    std::string emit_data;
    bool dump_scenario = false;
};

ScenarioConfig resolve_scenario(const std::string& arg, RunManifest& manifest) {
    if (std::filesystem::exists(arg) && std::filesystem::is_regular_file(arg)) {
        std::ifstream in(arg);
        std::stringstream buffer;
        buffer << in.rdbuf();
        manifest.add_input(arg);
        return scenario_from_json(buffer.str());
    }
    if (arg.size() > 5 && arg.substr(arg.size() - 5) == ".json") throw IoError("scenario file not found: " + arg);
    return scenario_by_label(arg);
}

int cmd_simulate(const SimulateOptions& o, std::uint64_t seed, int threads, RunManifest& manifest) {
    ScenarioConfig scenario = resolve_scenario(o.scenario, manifest);
    if (o.n) scenario.n = *o.n;
    scenario.validate();
    if (o.dump_scenario) {
        write_text(o.out, scenario_to_json(scenario) + "\n");
        return 0;
    }
    manifest.set_config({{"scenario", json::parse(scenario_to_json(scenario))},
                         {"replicates", o.replicates},
                         {"superpop", o.superpop},
                         {"eval_times", o.eval_times},
                         {"emit_data", o.emit_data}});
    manifest.set_seed(seed);

    if (!o.emit_data.empty()) {
        std::filesystem::create_directories(o.emit_data);
        for (int r = 0; r < o.replicates; ++r) {
            const EventDataset data = simulate_dataset(scenario, substream_seed(seed, static_cast<std::uint64_t>(r), 1));
            std::ostringstream csv;
            write_long_csv(csv, data);
            write_text((std::filesystem::path(o.emit_data) / ("replicate_" + std::to_string(r + 1) + ".csv")).string(), csv.str());
        }
    }

    const FitSpec spec = default_fit_spec(scenario);
    ReplicationOptions options;
    options.replicates = o.replicates;
    options.seed = seed;
    options.threads = threads;
    options.superpop_n = o.superpop;
    if (!o.eval_times.empty()) options.eval_times = parse_doubles(o.eval_times, "--eval-times");
    const MetricsTable table = run_scenario(scenario, spec, options);
    for (const auto& f : table.failures) std::cerr << "warning: " << f << '\n';

    std::ostringstream csv;
    write_metrics_csv(csv, table);
    write_text(o.out, csv.str());
    if (!o.out.empty() && o.out != "-") write_text(manifest_path(o.out), manifest.to_json().dump(2) + "\n");
    return 0;
}

// ===== error mapping =====

int report_failure(const std::string& command, const std::string& module, const std::string& message, int code) {
    std::cerr << "wareg " << command << ": " << module << " error: " << message << '\n';
    return code;
}

template <class F>
int guarded(const std::string& command, F&& body) {
    try {
        return body();
    } catch (const CommandError& e) {
        return report_failure(command, "cli", e.what(), e.code);
    } catch (const IoError& e) {
        return report_failure(command, "io", e.what(), exit_io);
    } catch (const ValidationError& e) {
        return report_failure(command, "data-model", e.what(), exit_model);
    } catch (const CensoringError& e) {
        return report_failure(command, "censoring", e.what(), exit_model);
    } catch (const PositivityError& e) {
        return report_failure(command, "censoring", e.what(), exit_model);
    } catch (const EstimationError& e) {
        return report_failure(command, "estimator", e.what(), exit_model);
    } catch (const VarianceError& e) {
        return report_failure(command, "variance", e.what(), exit_model);
    } catch (const InferenceError& e) {
        return report_failure(command, "inference", e.what(), exit_model);
    } catch (const CvError& e) {
        return report_failure(command, "crossval", e.what(), exit_model);
    } catch (const SimulationError& e) {
        return report_failure(command, "simulator", e.what(), exit_model);
    } catch (const std::filesystem::filesystem_error& e) {
        return report_failure(command, "io", e.what(), exit_io);
    } catch (const json::exception& e) {
        return report_failure(command, "io", e.what(), exit_io);
    } catch (const std::exception& e) {
        return report_failure(command, "input", e.what(), exit_model);
    }
}

}  // namespace
}  // namespace wa::cli

int main(int argc, char** argv) {
    using namespace wa::cli;
    CLI::App app{"wareg: while-alive regression for recurrent and terminal events"};
    app.set_version_flag("--version", std::string("wareg ") + tool_version);
    app.require_subcommand(1);
    std::uint64_t seed = 1;
    int threads = 0;
    app.add_option("--seed", seed, "random seed for cv folds and simulation")->capture_default_str();
    app.add_option("--threads", threads, "worker cap (0 = hardware concurrency)")->capture_default_str();

    FitOptions fit;
    auto* fit_cmd = app.add_subcommand("fit", "fit the stacked while-alive regression");
    fit.model.add_to(fit_cmd);
    fit_cmd->add_option("--basis", fit.basis, "st, bz, ns, ms, pl, tl, il or tf");
    fit_cmd->add_option("--degree", fit.degree, "polynomial degree for bz, ms and pl");
    fit_cmd->add_option("--knots", fit.knots, "comma-separated knots")->required();
    fit_cmd->add_option("--tau-grid", fit.tau_grid, "comma-separated stacking times");
    fit_cmd->add_option("--out", fit.out, "output JSON path (default stdout)");
    fit_cmd->add_flag("--report", fit.report, "add CIs at the knots, Wald tests and averaged effects");
    fit_cmd->add_option("--level", fit.level, "confidence level");

    PredictOptions pred;
    auto* pred_cmd = app.add_subcommand("predict", "predict while-alive rates from a saved fit");
    pred_cmd->add_option("--fit", pred.fit, "fit JSON written by `wareg fit`")->required();
    pred_cmd->add_option("--newdata", pred.newdata, "CSV with id, covariates and optionally t")->required();
    pred_cmd->add_option("--times", pred.times, "comma-separated prediction times (default: stacking grid)");
    pred_cmd->add_option("--out", pred.out, "output CSV path (default stdout)");
    pred_cmd->add_option("--level", pred.level, "confidence level");

    CvOptions cv;
    auto* cv_cmd = app.add_subcommand("cv", "select the basis by K-fold cross-validation");
    cv.model.add_to(cv_cmd);
    cv_cmd->add_option("--basis-set", cv.basis_set, "comma-separated basis families");
    cv_cmd->add_option("--degree-vec", cv.degree_vec, "comma-separated degrees");
    cv_cmd->add_option("--n-int-vec", cv.n_int_vec, "comma-separated interior knot counts");
    cv_cmd->add_option("--knot-scheme", cv.knot_scheme, "equidist or quantile");
    cv_cmd->add_option("--link-set", cv.link_set, "comma-separated links (default: --link)");
    cv_cmd->add_option("--time-range", cv.time_range, "a,b integration range (default 0 to the 0.9 quantile of U)");
    cv_cmd->add_option("--tau-grid", cv.tau_grid, "stacking times shared by all configurations");
    cv_cmd->add_option("--K", cv.K, "number of folds");
    cv_cmd->add_option("--T", cv.T, "integration grid size");
    cv_cmd->add_option("--out", cv.out, "configuration table CSV (default stdout)");
    cv_cmd->add_option("--selection", cv.selection, "selection JSON path (default <out>.selection.json)");

    SimulateOptions sim;
    auto* sim_cmd = app.add_subcommand("simulate", "run a replication study under a joint-frailty scenario");
    sim_cmd->add_option("--scenario", sim.scenario, "scenario label or JSON file")->required();
    sim_cmd->add_option("--replicates", sim.replicates, "number of replicates");
    sim_cmd->add_option("--n", sim.n, "override the per-replicate sample size");
    sim_cmd->add_option("--superpop", sim.superpop, "super-population size for the true-beta oracle");
    sim_cmd->add_option("--eval-times", sim.eval_times, "evaluation times (default: stacking grid)");
    sim_cmd->add_option("--out", sim.out, "metrics CSV path (default stdout)");
    sim_cmd->add_option("--emit-data", sim.emit_data, "directory for per-replicate raw CSVs");
    sim_cmd->add_flag("--dump-scenario", sim.dump_scenario, "print the resolved scenario JSON and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (*fit_cmd) {
        return guarded("fit", [&] {
            RunManifest m("fit");
            return cmd_fit(fit, m);
        });
    }
    if (*pred_cmd) {
        return guarded("predict", [&] {
            RunManifest m("predict");
            return cmd_predict(pred, m);
        });
    }
    if (*cv_cmd) {
        return guarded("cv", [&] {
            RunManifest m("cv");
            return cmd_cv(cv, seed, threads, m);
        });
    }
    return guarded("simulate", [&] {
        RunManifest m("simulate");
        return cmd_simulate(sim, seed, threads, m);
    });
}
