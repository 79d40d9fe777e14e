#pragma once
#include <Eigen/Core>
#include <string>
#include <vector>

#include "calsurv/errors.hpp"

namespace calsurv {

/**
 * Discrete-time right-censored data with a binary treatment.
 * y is a grid index: 0 means censored at u_0, 1..K+1 are grid positions.
 */
struct SurvivalDataset {
    int n = 0;
    int p = 0;
    std::vector<int> y;
    std::vector<int> delta;
    std::vector<int> a;
    Eigen::MatrixXd x;
    // labels[g] is the display time of grid index g (labels[0] = 0).
    std::vector<double> labels;

    // Throws validation_error on the first violated invariant.
    void validate() const;
    int count_arm(int arm) const;
    int events_in_arm(int arm) const;
    int max_y() const;
    double label(int g) const;
};

SurvivalDataset make_dataset(std::vector<int> y, std::vector<int> delta, std::vector<int> a,
                             Eigen::MatrixXd x);

struct CsvSchema {
    std::string time = "time";
    std::string event = "event";
    std::string treat = "treat";
    std::string covariate_prefix = "x";
};

// Reads a CSV with a header row. Positive distinct times become grid indices 1, 2, ...
// in sorted order; times <= 0 map to index 0 and must be censored.
SurvivalDataset load_csv(const std::string& path, const CsvSchema& schema = {},
                         std::vector<std::string>* warnings = nullptr);
SurvivalDataset parse_csv(std::istream& in, const CsvSchema& schema = {},
                          std::vector<std::string>* warnings = nullptr);

struct TimeGrid {
    int K = 0;
    std::vector<double> u; // size K+1, u[0] = 0
};

// K = largest y with delta = 1 that is valid in every arm of scope (min over arms).
TimeGrid build_time_grid(const SurvivalDataset& ds, const std::vector<int>& scope);

/**
 * Risk and event sets on grid 0..K. Subjects with y > K+1 are truncated to K+1.
 * I[0] holds all subjects and J[0] is empty.
 */
struct RiskEventSets {
    int K = 0;
    int n = 0;
    std::vector<int> y;     // truncated grid index
    std::vector<int> delta; // event indicator after truncation
    std::vector<std::vector<int>> I;
    std::vector<std::vector<int>> J;
    int truncated = 0;

    bool at_risk(int i, int k) const { return y[i] >= k; }
    bool event_at(int i, int k) const { return k >= 1 && y[i] == k && delta[i] == 1; }
    // 1{Y >= u_k, (Y, Delta) != (u_k, 1)}; equals 1 for every subject at k = 0.
    bool event_free(int i, int k) const { return y[i] >= k && !event_at(i, k); }

    // R(k, i) = 1{Y_i >= u_k} for k = 0..K.
    Eigen::MatrixXd R() const;
    // Rbar(k, i) = prod_{j <= k} R(j, i), with Rbar(0, i) = 1.
    Eigen::MatrixXd Rbar() const;
};

RiskEventSets risk_event_sets(const SurvivalDataset& ds, const TimeGrid& grid);

struct BasisTerm {
    int j = -1; // -1 for the intercept
    int k = -1; // -1 for a main effect
};

struct BasisSpec {
    bool interactions = false;
    double support_threshold = 0.0; // minimum fraction of nonzero entries for interactions
};

struct CovariateBasis {
    Eigen::MatrixXd F;
    std::vector<BasisTerm> terms;
    std::vector<std::string> names;
    int m() const { return static_cast<int>(F.cols()); }
};

CovariateBasis design_matrix(const SurvivalDataset& ds, const BasisSpec& spec = {},
                             std::vector<std::string>* warnings = nullptr);

} // namespace calsurv
