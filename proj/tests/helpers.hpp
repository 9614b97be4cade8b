#pragma once

#include "whilealive/data_model.hpp"
#include "whilealive/simulator.hpp"

#include <initializer_list>
#include <string>
#include <vector>

namespace wa::test {

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index k = 0;
    for (double x : v) out[k++] = x;
    return out;
}

/** Subject with one recurrent type. */
inline SubjectData subject(const std::string& id, Eigen::VectorXd z, double U, bool delta, std::vector<double> events = {},
                           std::optional<std::string> cluster = std::nullopt) {
    SubjectData s;
    s.id = id;
    s.cluster = std::move(cluster);
    s.z = std::move(z);
    s.U = U;
    s.delta = delta;
    s.recurrent = {std::move(events)};
    return s;
}

inline EventDataset dataset(std::vector<SubjectData> subjects, std::vector<std::string> names, int K = 1) {
    EventDataset d;
    d.subjects = std::move(subjects);
    d.K = K;
    d.p = d.subjects.empty() ? 0 : static_cast<int>(d.subjects.front().z.size());
    d.covariate_names = std::move(names);
    return d;
}

/** Small simulated dataset from Scenario I(b) with an intercept-free two-covariate design. */
inline EventDataset small_simulated(int n, std::uint64_t seed, const std::string& label = "I(b)") {
    ScenarioConfig s = scenario_by_label(label);
    s.n = n;
    return simulate_dataset(s, seed);
}

}  // namespace wa::test
