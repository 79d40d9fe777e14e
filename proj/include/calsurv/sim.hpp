#pragma once
#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "calsurv/data.hpp"

namespace calsurv {

enum class CovCase { C1, C2 };
std::string to_string(CovCase c);
CovCase parse_cov_case(const std::string& s);

/**
 * Simulation scenario. Survival estimators are reported for `arm` at grid indices
 * `times`; grid index g corresponds to continuous time g / 100.
 *
 * Estimator names: survival  KM, wKM, wKM_RML, CAL, CAL_lin, RCAL, RCAL_lin
 *                  hazard    BP, wBP, wBP_RML, tCAL, tCAL_lin, RCw, RCa
 * lambda_policy is "cv" (cross-validated penalties) or a fixed nonnegative number.
 */
struct ScenarioConfig {
    int n = 1000;
    int p = 10;
    CovCase cov = CovCase::C1;
    std::uint64_t seed = 1;
    int reps = 200;
    int arm = 1;
    std::vector<int> times{60, 90, 120};
    std::vector<std::string> estimators{"KM", "wKM", "CAL", "CAL_lin", "BP", "wBP", "tCAL", "tCAL_lin"};
    std::string lambda_policy = "cv";
    int jobs = 1;

    void validate() const;
};

// Reads `key = value` lines (# starts a comment). Keys: case, n, p, reps, seed, arm, times,
// estimators, lambda_policy, jobs. Unknown keys are a validation_error.
ScenarioConfig parse_scenario(std::istream& in, ScenarioConfig base = {});
ScenarioConfig load_scenario(const std::string& path, ScenarioConfig base = {});

// Deterministic 64-bit generator for a (seed, rep, stream) triple.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t rep, std::uint64_t stream);

// Draws the first ten covariates for one subject of treatment group `a` (box-truncated AR(1)
// normal). Returns the number of rejected partial draws.
int draw_signal_covariates(std::mt19937_64& rng, CovCase cov, int a, double* x10);

SurvivalDataset generate_dataset(const ScenarioConfig& cfg, int rep);

struct OracleOptions {
    int draws = 100000;  // per treatment group per repeat
    int repeats = 20;
    int K = 399;         // grid used for the population hazard-ratio equation
    bool same_event_law = false; // test-only: both arms use the arm-1 event law
    int jobs = 1;
};

struct OracleResult {
    CovCase cov = CovCase::C1;
    std::vector<int> times;
    std::vector<double> S1, S0, S1_sd, S0_sd; // at `times`; sd across repeats
    std::vector<double> S1_curve, S0_curve;   // mean curves on 0..K
    std::vector<double> G1, G0;               // censoring survivor P(C >= u) at `times`
    double theta = 0.0, theta_sd = 0.0;
    int repeats = 0;
    double acceptance = 0.0;

    double S1_se(size_t j) const;
    double S0_se(size_t j) const;
    double theta_se() const;
};

// P(C >= u) for the arm-specific censoring law at continuous time u.
double censoring_survivor(int arm, double u);

OracleResult oracle_truth(CovCase cov, const std::vector<int>& times, std::uint64_t seed,
                          const OracleOptions& opt = {});

/**
 * Reference values used as the bias target: true values under C1 and limit values of each
 * estimator under C2 (p = 10 and p = 200), keyed by estimator name; survival entries hold
 * one value per time in {60, 90, 120}, hazard entries one value.
 */
struct ReferenceTable {
    std::map<std::string, std::vector<double>> values;
    const std::vector<double>* find(const std::string& key) const;
};
ReferenceTable load_reference_table(const std::string& path);
// Key: "<case>/p<p>/a<arm>/<estimator>" e.g. "C1/p10/a1/wKM"; "C1/p10/theta/wBP".
std::string reference_key(CovCase cov, int p, int arm, const std::string& estimator, bool theta);
std::string default_reference_path();

struct SummaryRow {
    std::string estimator;
    int time = -1;        // grid index; -1 for hazard-ratio rows
    double target = 0.0;  // truth or limit value
    int n_ok = 0;
    int n_failed = 0;
    double bias = 0.0, sd = 0.0, sqrt_evar = 0.0;
    double cov90 = 0.0, len90 = 0.0, cov95 = 0.0, len95 = 0.0;
};

struct RepEstimate {
    std::string estimator;
    std::vector<double> est, var; // one per time (survival) or single entry (hazard)
    bool ok = false;
    std::string error;
};

struct ReplicationSummary {
    ScenarioConfig cfg;
    int reps = 0;
    std::vector<SummaryRow> rows;
    std::vector<std::vector<RepEstimate>> per_rep;
    std::vector<std::string> notes;
    double seconds = 0.0;
};

// Fits every configured estimator on one generated dataset.
std::vector<RepEstimate> run_one_replication(const ScenarioConfig& cfg, int rep);

ReplicationSummary run_replications(const ScenarioConfig& cfg, const ReferenceTable& targets);

// Aggregates per-replication estimates against the given targets.
std::vector<SummaryRow> summarize(const std::vector<std::vector<RepEstimate>>& per_rep,
                                  const ScenarioConfig& cfg, const ReferenceTable& targets);

// Aligned text table in the layout Bias, sqrt(Var), sqrt(EVar), Cov90(L90), Cov95(L95).
std::string format_summary(const ReplicationSummary& s);

} // namespace calsurv
