#pragma once
#include <Eigen/Core>
#include <string>
#include <vector>

#include "calsurv/data.hpp"
#include "calsurv/optimize.hpp"
#include "calsurv/propensity.hpp"

namespace calsurv {

enum class SurvEstimator { KM, wKM, IPW, ICE, AIPW, CAL, CAL_lin, RCAL, RCAL_lin, RCw };
std::string to_string(SurvEstimator e);

/**
 * Survival curve for one arm on grid 0..K (S[0] = 1, q[0] = 0).
 * phi holds per-subject influence values: for KM/wKM the centered, n-scaled terms of the
 * robust variance; for the augmented family the summands whose mean is S.
 * Variances are NaN where a variant does not apply or is undefined.
 */
struct SurvivalFit {
    int arm = 1;
    SurvEstimator tag = SurvEstimator::KM;
    int K = 0;
    std::vector<double> S, q;
    Eigen::MatrixXd phi;
    std::vector<double> Vb, Vb0, Vr;
    std::vector<char> missing;
    std::vector<Eigen::VectorXd> alpha; // outcome-model coefficients by k (empty at k = 0)
    double or_lambda = 0.0;
    double normalization_residual = 0.0; // n^{-1} sum T_i w_i - 1
    std::vector<std::string> flags;
};

// q_j = sum_{J_j, arm} w / sum_{I_j, arm} w for j = 1..K; q[0] = 0.
std::vector<double> hazard_estimates(const SurvivalDataset& ds, const RiskEventSets& sets,
                                     const Eigen::VectorXd& w, int arm,
                                     std::vector<std::string>* flags = nullptr);

// Product-limit curve with Vb, Vb0, Vr. weights == nullptr gives the classical KM.
SurvivalFit km(const SurvivalDataset& ds, const RiskEventSets& sets, int arm,
               const Eigen::VectorXd* weights = nullptr);

struct NuisanceCCPCSP {
    int arm = 1;
    std::vector<double> rho; // index 1..K; rho[0] = 1
    std::vector<double> eta; // index 1..K; eta[0] = 1
    std::vector<char> undefined;
};

// Closed-form calibrated constant non-censoring / survival probabilities.
NuisanceCCPCSP calibrated_ccp_csp(const SurvivalDataset& ds, const RiskEventSets& sets,
                                  const Eigen::VectorXd& w, int arm);
// Unweighted (maximum likelihood) counterparts; used as a comparator.
NuisanceCCPCSP ml_ccp_csp(const SurvivalDataset& ds, const RiskEventSets& sets, int arm);

/**
 * Augmented IPW curve with constant nuisance models. Computes phi both in the
 * propensity-weighted and the outcome-regression arrangement and records the largest
 * per-subject gap in form_gap; throws numerical_error if they disagree beyond tolerance.
 */
SurvivalFit aipw_survival(const SurvivalDataset& ds, const RiskEventSets& sets,
                          const Eigen::VectorXd& w, const NuisanceCCPCSP& nuis, int arm,
                          double* form_gap = nullptr);

// n^{-1} sum T w Rbar_k 1{U > u_k} / pibar_k, for k = 0..K.
std::vector<double> ipw_survival(const SurvivalDataset& ds, const RiskEventSets& sets,
                                 const Eigen::VectorXd& w, const NuisanceCCPCSP& nuis, int arm);
// prod_{j <= k} eta_j, for k = 0..K.
std::vector<double> ice_survival(const NuisanceCCPCSP& nuis);

struct ImputedOutcomes {
    int arm = 1;
    Eigen::MatrixXd U; // n x (K+1); rows outside the arm are 0
};

ImputedOutcomes imputed_outcomes(const SurvivalDataset& ds, const RiskEventSets& sets,
                                 const NuisanceCCPCSP& nuis);

enum class OrLink { Logistic, Linear };

struct OrOptions {
    OrLink link = OrLink::Logistic;
    bool regularized = false;
    double lambda = -1.0; // < 0: cross-validated once per arm at k = cv_k
    int cv_k = -1;        // < 1: K / 2
    int k_max = -1;       // < 1: K; outcome models are fitted for k <= k_max only
    LassoOptions lasso;
};

// Calibrated augmented IPW curve from a CAL or RCAL propensity fit for `arm`.
SurvivalFit s_cal_from_ps(const SurvivalDataset& ds, const CovariateBasis& basis,
                          const RiskEventSets& sets, const FittedPS& ps, int arm,
                          const OrOptions& opt = {});
// Full pipeline: grid for the arm, CAL or RCAL propensity fit, outcome fits.
SurvivalFit s_cal(const SurvivalDataset& ds, const CovariateBasis& basis, int arm,
                  const OrOptions& opt = {}, const PsOptions& ps_opt = {});

// Weighted-only curve n^{-1} sum (T / pi_a) U_k from an RCAL propensity fit.
SurvivalFit s_rcw_from_ps(const SurvivalDataset& ds, const RiskEventSets& sets,
                          const FittedPS& ps, int arm);
SurvivalFit s_rcw(const SurvivalDataset& ds, const CovariateBasis& basis, int arm,
                  const PsOptions& ps_opt = {});

} // namespace calsurv
