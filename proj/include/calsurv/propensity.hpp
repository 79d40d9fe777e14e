#pragma once
#include <Eigen/Core>
#include <string>
#include <vector>

#include "calsurv/data.hpp"
#include "calsurv/optimize.hpp"

namespace calsurv {

enum class PsMethod { ML, CAL, RML, RCAL };
std::string to_string(PsMethod m);

/**
 * Logistic propensity score fit. pi always denotes P(A = 1 | X); `arm` records which
 * treatment the calibration targeted (ML and RML fits are arm-free and store arm = -1).
 */
struct FittedPS {
    PsMethod method = PsMethod::ML;
    int arm = -1;
    Eigen::VectorXd gamma;
    Eigen::VectorXd eta; // F * gamma
    Eigen::VectorXd pi;
    double lambda = 0.0;
    bool capped = false;
    std::vector<std::string> names;
    std::vector<std::string> flags;
    LassoPath path; // CV curve when lambda was selected by cross-validation

    // Inverse probability weights for treatment a: 1/pi (a = 1) or 1/(1 - pi) (a = 0).
    Eigen::VectorXd weights(int a) const;
};

struct PsOptions {
    double lambda = -1.0;  // < 0: choose by cross-validation
    LassoOptions lasso;
    double coef_cap = 30.0;
};

FittedPS fit_ps_ml(const SurvivalDataset& ds, const CovariateBasis& basis,
                   const PsOptions& opt = {});
FittedPS fit_ps_cal(const SurvivalDataset& ds, const CovariateBasis& basis, int arm,
                    const PsOptions& opt = {});
FittedPS fit_ps_rcal(const SurvivalDataset& ds, const CovariateBasis& basis, int arm,
                     const PsOptions& opt = {});
FittedPS fit_ps_rml(const SurvivalDataset& ds, const CovariateBasis& basis,
                    const PsOptions& opt = {});

// The arm-specific CAL/RCAL loss problem: arm 1 in gamma, arm 0 in -gamma.
GlmProblem cal_problem(const SurvivalDataset& ds, const CovariateBasis& basis, int arm);
GlmProblem ml_problem(const SurvivalDataset& ds, const CovariateBasis& basis);

// Per-column n^{-1} sum_i (T_i w_i - 1) f_j(X_i), T_i = 1{A_i = arm}.
Eigen::VectorXd calibration_residuals(const SurvivalDataset& ds, const CovariateBasis& basis,
                                      const FittedPS& ps, int arm);

struct BalanceReport {
    std::vector<std::string> names;
    std::vector<double> mean1, mean0, diff, sd, rel;
    std::vector<char> degenerate;
    int imbalanced = 0; // count of R_j > threshold
    double min_rel = 0.0, max_rel = 0.0;
};

// Relative differences for every non-intercept basis column. ps1 supplies the arm-1
// weights 1/pi and ps0 the arm-0 weights 1/(1 - pi); null pointers mean unit weights.
BalanceReport covariate_balance(const SurvivalDataset& ds, const CovariateBasis& basis,
                                const FittedPS* ps1 = nullptr, const FittedPS* ps0 = nullptr,
                                double threshold = 0.1);

} // namespace calsurv
