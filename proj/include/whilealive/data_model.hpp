#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace wa {

/** One row of the long-format input: an event, a censoring, or a death. */
struct EventRecord {
    std::string subject_id;
    std::optional<std::string> cluster_id;
    double time = 0.0;
    int status = 0;
    std::vector<double> covariates;
};

struct SubjectData {
    std::string id;
    std::optional<std::string> cluster;
    Eigen::VectorXd z;
    double U = 0.0;
    bool delta = false;
    // recurrent[k] holds the sorted type-(k+1) event times
    std::vector<std::vector<double>> recurrent;

    bool operator==(const SubjectData& other) const;
};

struct WeightScheme {
    std::vector<double> w_recur;
    double w_term = 1.0;

    void validate(int K) const;
};

struct EventDataset {
    std::vector<SubjectData> subjects;
    int K = 0;
    int p = 0;
    bool cluster_mode = false;
    std::vector<std::string> covariate_names;

    // Dense cluster index per subject, in order of first appearance.
    // Empty when cluster_mode is false.
    std::vector<int> cluster_index;
    int n_clusters = 0;

    std::size_t n() const { return subjects.size(); }
    /** Number of independent units: clusters in cluster mode, subjects otherwise. */
    std::size_t n_units() const { return cluster_mode ? static_cast<std::size_t>(n_clusters) : subjects.size(); }
    double max_time() const;
    bool any_censoring() const;

    bool operator==(const EventDataset& other) const;
};

enum class ValidationCode {
    empty_input,
    negative_time,
    non_finite_time,
    zero_follow_up,
    bad_status,
    duplicate_end_record,
    missing_end_record,
    recurrent_after_follow_up,
    inconsistent_covariates,
    inconsistent_cluster,
    missing_cluster,
    covariate_dimension,
};

class ValidationError : public std::runtime_error {
public:
    ValidationError(ValidationCode code, std::string subject_id, const std::string& message);
    ValidationCode code() const noexcept { return code_; }
    const std::string& subject_id() const noexcept { return subject_id_; }

private:
    ValidationCode code_;
    std::string subject_id_;
};

struct IngestOptions {
    // Number of recurrent types; inferred as (max status - 1) when absent.
    std::optional<int> K;
    std::vector<std::string> covariate_names;
};

EventDataset ingest_long(const std::vector<EventRecord>& records, const IngestOptions& options = {});

/** Inverse of ingest_long: recurrent rows by type then time, then the end record. */
std::vector<EventRecord> to_long_records(const EventDataset& data);

/** L̃(t) = Σ_k w_k #{type-k events ≤ U∧t} + w_D I(U ≤ t, Δ = 1). */
double cumulative_loss(const SubjectData& subject, const WeightScheme& weights, double t);

/** Build a copy whose covariate vectors are the named columns, optionally with a leading 1. */
EventDataset select_covariates(const EventDataset& data, const std::vector<std::string>& names, bool intercept);

/** Subjects at the given positions, in that order; cluster indices are rebuilt. */
EventDataset subset(const EventDataset& data, const std::vector<std::size_t>& positions);

/** Rebuild cluster indices; clears cluster mode when enable is false. */
void set_cluster_mode(EventDataset& data, bool enable);

// ===== CSV =====

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::string& path);

/** Parse `id,[cluster,]time,status,<covariates>`; all remaining columns are covariates. */
std::vector<EventRecord> records_from_csv(const CsvTable& table, std::vector<std::string>& covariate_names);

void write_long_csv(std::ostream& out, const EventDataset& data);

double parse_double(const std::string& field, const std::string& context);

}  // namespace wa
