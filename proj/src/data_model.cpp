#include "whilealive/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace wa {

bool SubjectData::operator==(const SubjectData& other) const {
    return id == other.id && cluster == other.cluster && z.size() == other.z.size() && z == other.z &&
           U == other.U && delta == other.delta && recurrent == other.recurrent;
}

bool EventDataset::operator==(const EventDataset& other) const {
    return subjects == other.subjects && K == other.K && p == other.p && cluster_mode == other.cluster_mode &&
           covariate_names == other.covariate_names;
}

double EventDataset::max_time() const {
    double m = 0.0;
    for (const auto& s : subjects) m = std::max(m, s.U);
    return m;
}

bool EventDataset::any_censoring() const {
    return std::any_of(subjects.begin(), subjects.end(), [](const SubjectData& s) { return !s.delta; });
}

void WeightScheme::validate(int K) const {
    if (static_cast<int>(w_recur.size()) != K)
        throw std::invalid_argument("weight scheme has " + std::to_string(w_recur.size()) +
                                    " recurrent weights but the data have K = " + std::to_string(K));
    bool positive = w_term > 0.0;
    if (w_term < 0.0 || !std::isfinite(w_term)) throw std::invalid_argument("terminal weight must be nonnegative");
    for (double w : w_recur) {
        if (w < 0.0 || !std::isfinite(w)) throw std::invalid_argument("recurrent weights must be nonnegative");
        positive = positive || w > 0.0;
    }
    if (!positive) throw std::invalid_argument("at least one weight must be strictly positive");
}

ValidationError::ValidationError(ValidationCode code, std::string subject_id, const std::string& message)
    : std::runtime_error("subject " + subject_id + ": " + message), code_(code), subject_id_(std::move(subject_id)) {}

EventDataset ingest_long(const std::vector<EventRecord>& records, const IngestOptions& options) {
    if (records.empty()) throw ValidationError(ValidationCode::empty_input, "", "no records supplied");

    const std::size_t p = records.front().covariates.size();
    int max_status = 0;
    for (const auto& r : records) {
        if (r.covariates.size() != p)
            throw ValidationError(ValidationCode::covariate_dimension, r.subject_id, "covariate dimension differs across records");
        if (!std::isfinite(r.time)) throw ValidationError(ValidationCode::non_finite_time, r.subject_id, "time is not finite");
        if (r.time < 0.0) throw ValidationError(ValidationCode::negative_time, r.subject_id, "negative time");
        if (r.status < 0) throw ValidationError(ValidationCode::bad_status, r.subject_id, "negative status code");
        max_status = std::max(max_status, r.status);
    }
    const int K = options.K ? *options.K : std::max(0, max_status - 1);
    if (K < 0) throw std::invalid_argument("K must be nonnegative");

    // Group rows by subject in order of first appearance.
    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<const EventRecord*>> groups;
    for (const auto& r : records) {
        auto [it, inserted] = groups.try_emplace(r.subject_id);
        if (inserted) order.push_back(r.subject_id);
        it->second.push_back(&r);
    }

    EventDataset data;
    data.K = K;
    data.p = static_cast<int>(p);
    data.covariate_names = options.covariate_names;
    if (data.covariate_names.empty())
        for (std::size_t j = 0; j < p; ++j) data.covariate_names.push_back("z" + std::to_string(j + 1));
    if (data.covariate_names.size() != p) throw std::invalid_argument("covariate name count does not match p");

    bool any_cluster = false;
    for (const auto& id : order) {
        const auto& rows = groups[id];
        SubjectData s;
        s.id = id;
        s.cluster = rows.front()->cluster_id;
        any_cluster = any_cluster || s.cluster.has_value();
        s.z = Eigen::Map<const Eigen::VectorXd>(rows.front()->covariates.data(), static_cast<Eigen::Index>(p));
        s.recurrent.assign(static_cast<std::size_t>(K), {});
        bool have_end = false;
        for (const EventRecord* r : rows) {
            if (r->cluster_id != s.cluster)
                throw ValidationError(ValidationCode::inconsistent_cluster, id, "cluster id differs across records");
            for (std::size_t j = 0; j < p; ++j)
                if (r->covariates[j] != s.z[static_cast<Eigen::Index>(j)])
                    throw ValidationError(ValidationCode::inconsistent_covariates, id, "covariates differ across records");
            if (r->status > K + 1)
                throw ValidationError(ValidationCode::bad_status, id, "status " + std::to_string(r->status) + " exceeds K+1");
            if (r->status == 0 || r->status == K + 1) {
                if (have_end) throw ValidationError(ValidationCode::duplicate_end_record, id, "duplicate end-of-follow-up rows");
                have_end = true;
                s.U = r->time;
                s.delta = r->status == K + 1;
            } else {
                s.recurrent[static_cast<std::size_t>(r->status - 1)].push_back(r->time);
            }
        }
        if (!have_end) throw ValidationError(ValidationCode::missing_end_record, id, "no end-of-follow-up row");
        if (s.U <= 0.0) throw ValidationError(ValidationCode::zero_follow_up, id, "follow-up time must be positive");
        for (auto& times : s.recurrent) {
            std::sort(times.begin(), times.end());
            if (!times.empty() && times.back() > s.U)
                throw ValidationError(ValidationCode::recurrent_after_follow_up, id, "recurrent time exceeds follow-up");
        }
        data.subjects.push_back(std::move(s));
    }
    if (any_cluster) {
        for (const auto& s : data.subjects)
            if (!s.cluster) throw ValidationError(ValidationCode::missing_cluster, s.id, "cluster id missing");
        set_cluster_mode(data, true);
    }
    return data;
}

void set_cluster_mode(EventDataset& data, bool enable) {
    data.cluster_index.clear();
    data.n_clusters = 0;
    data.cluster_mode = enable;
    if (!enable) return;
    std::unordered_map<std::string, int> index;
    for (const auto& s : data.subjects) {
        if (!s.cluster) throw ValidationError(ValidationCode::missing_cluster, s.id, "cluster id missing");
        auto [it, inserted] = index.try_emplace(*s.cluster, data.n_clusters);
        if (inserted) ++data.n_clusters;
        data.cluster_index.push_back(it->second);
    }
}

EventDataset subset(const EventDataset& data, const std::vector<std::size_t>& positions) {
    EventDataset out;
    out.K = data.K;
    out.p = data.p;
    out.covariate_names = data.covariate_names;
    out.subjects.reserve(positions.size());
    for (std::size_t i : positions) out.subjects.push_back(data.subjects.at(i));
    set_cluster_mode(out, data.cluster_mode);
    return out;
}

std::vector<EventRecord> to_long_records(const EventDataset& data) {
    std::vector<EventRecord> out;
    for (const auto& s : data.subjects) {
        std::vector<double> z(s.z.data(), s.z.data() + s.z.size());
        for (std::size_t k = 0; k < s.recurrent.size(); ++k)
            for (double t : s.recurrent[k]) out.push_back({s.id, s.cluster, t, static_cast<int>(k + 1), z});
        out.push_back({s.id, s.cluster, s.U, s.delta ? data.K + 1 : 0, z});
    }
    return out;
}

double cumulative_loss(const SubjectData& subject, const WeightScheme& weights, double t) {
    const double horizon = std::min(subject.U, t);
    double loss = 0.0;
    for (std::size_t k = 0; k < subject.recurrent.size(); ++k) {
        const auto& times = subject.recurrent[k];
        const auto count = std::upper_bound(times.begin(), times.end(), horizon) - times.begin();
        loss += weights.w_recur[k] * static_cast<double>(count);
    }
    if (subject.delta && subject.U <= t) loss += weights.w_term;
    return loss;
}

EventDataset select_covariates(const EventDataset& data, const std::vector<std::string>& names, bool intercept) {
    std::vector<int> columns;
    for (const auto& name : names) {
        auto it = std::find(data.covariate_names.begin(), data.covariate_names.end(), name);
        if (it == data.covariate_names.end()) throw std::invalid_argument("unknown covariate '" + name + "'");
        columns.push_back(static_cast<int>(it - data.covariate_names.begin()));
    }
    EventDataset out = data;
    const int offset = intercept ? 1 : 0;
    out.p = static_cast<int>(columns.size()) + offset;
    out.covariate_names.clear();
    if (intercept) out.covariate_names.push_back("(Intercept)");
    for (const auto& name : names) out.covariate_names.push_back(name);
    for (std::size_t i = 0; i < data.subjects.size(); ++i) {
        Eigen::VectorXd z(out.p);
        if (intercept) z[0] = 1.0;
        for (std::size_t j = 0; j < columns.size(); ++j) z[static_cast<Eigen::Index>(j) + offset] = data.subjects[i].z[columns[j]];
        out.subjects[i].z = std::move(z);
    }
    return out;
}

// ===== CSV =====

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) {
        auto b = field.find_first_not_of(" \t\r");
        auto e = field.find_last_not_of(" \t\r");
        fields.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

}  // namespace

double parse_double(const std::string& field, const std::string& context) {
    double value = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    if (!field.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || field.empty())
        throw IoError("cannot parse number '" + field + "' in " + context);
    return value;
}

CsvTable read_csv(std::istream& in) {
    CsvTable table;
    std::string line;
    bool header_done = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        auto fields = split_line(line);
        if (!header_done) {
            table.header = std::move(fields);
            header_done = true;
            continue;
        }
        if (fields.size() != table.header.size())
            throw IoError("row " + std::to_string(table.rows.size() + 2) + " has " + std::to_string(fields.size()) +
                          " fields, header has " + std::to_string(table.header.size()));
        table.rows.push_back(std::move(fields));
    }
    if (!header_done) throw IoError("CSV input has no header row");
    return table;
}

CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    return read_csv(in);
}

std::vector<EventRecord> records_from_csv(const CsvTable& table, std::vector<std::string>& covariate_names) {
    auto col = [&](const std::string& name) -> int {
        auto it = std::find(table.header.begin(), table.header.end(), name);
        return it == table.header.end() ? -1 : static_cast<int>(it - table.header.begin());
    };
    const int id_col = col("id"), cluster_col = col("cluster"), time_col = col("time"), status_col = col("status");
    if (id_col < 0 || time_col < 0 || status_col < 0) throw IoError("CSV header must contain id, time and status columns");
    std::vector<int> cov_cols;
    covariate_names.clear();
    for (int c = 0; c < static_cast<int>(table.header.size()); ++c) {
        if (c == id_col || c == cluster_col || c == time_col || c == status_col) continue;
        cov_cols.push_back(c);
        covariate_names.push_back(table.header[static_cast<std::size_t>(c)]);
    }
    std::vector<EventRecord> records;
    records.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string where = "row " + std::to_string(r + 2);
        EventRecord rec;
        rec.subject_id = row[static_cast<std::size_t>(id_col)];
        if (cluster_col >= 0) rec.cluster_id = row[static_cast<std::size_t>(cluster_col)];
        rec.time = parse_double(row[static_cast<std::size_t>(time_col)], where);
        const double status = parse_double(row[static_cast<std::size_t>(status_col)], where);
        if (status != std::floor(status)) throw IoError("non-integer status in " + where);
        rec.status = static_cast<int>(status);
        for (int c : cov_cols) rec.covariates.push_back(parse_double(row[static_cast<std::size_t>(c)], where));
        records.push_back(std::move(rec));
    }
    return records;
}

void write_long_csv(std::ostream& out, const EventDataset& data) {
    const bool clusters = std::any_of(data.subjects.begin(), data.subjects.end(), [](const SubjectData& s) { return s.cluster.has_value(); });
    out << "id";
    if (clusters) out << ",cluster";
    out << ",time,status";
    for (const auto& name : data.covariate_names) out << ',' << name;
    out << '\n';
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const auto& rec : to_long_records(data)) {
        out << rec.subject_id;
        if (clusters) out << ',' << rec.cluster_id.value_or("");
        out << ',' << rec.time << ',' << rec.status;
        for (double v : rec.covariates) out << ',' << v;
        out << '\n';
    }
}

}  // namespace wa
