#pragma once
#include <Eigen/Core>
#include <string>
#include <vector>

#include "calsurv/data.hpp"
#include "calsurv/optimize.hpp"
#include "calsurv/propensity.hpp"
#include "calsurv/survival.hpp"

namespace calsurv {

enum class ThetaEstimator { BP, wBP, CAL, CAL_lin, RCw, RCa };
std::string to_string(ThetaEstimator e);

enum class RiskSetMethod { IPW, CAL, CAL_lin, RCw };
std::string to_string(RiskSetMethod m);

/**
 * Risk-set weights W_k = n^{-1} sum_i psi_ki for one arm on grid 0..K.
 * psi is n x (K+1); for the IPW and RCw tags it is T w 1{Y >= u_k}.
 */
struct RiskSetWeights {
    int arm = 1;
    RiskSetMethod tag = RiskSetMethod::IPW;
    std::vector<double> W;
    Eigen::MatrixXd psi;
    std::vector<Eigen::VectorXd> beta; // outcome coefficients by k for the augmented tags
    std::vector<std::string> flags;
};

RiskSetWeights riskset_weights(const SurvivalDataset& ds, const CovariateBasis& basis,
                               const RiskEventSets& sets, const FittedPS& ps, int arm,
                               RiskSetMethod method);

// Per-period inputs of the hazard-ratio estimating function (index 1..K; entry 0 unused).
struct ThetaTerms {
    int K = 0;
    std::vector<double> W1, W0, q1, q0;
    std::vector<char> used;
    int dropped = 0;
};

// sum_k W1 W0 / (W1 e^t + W0) (q1 - q0 e^t) over used terms.
double theta_estimating_function(const ThetaTerms& t, double theta);
// Minus the derivative of the estimating function in theta.
double theta_curvature(const ThetaTerms& t, double theta);

struct ThetaFit {
    ThetaEstimator tag = ThetaEstimator::wBP;
    double theta = 0.0;
    double estimating_value = 0.0; // estimating function at theta
    double H = 0.0;
    double G = 0.0;
    double Vb0 = 0.0; // model-based, BP/wBP only (NaN otherwise)
    double Vr = 0.0;
    Eigen::VectorXd contributions; // per-subject terms whose squares give G
    ThetaTerms terms;
    Eigen::VectorXd zeta1, zeta0; // augmentation coefficients (RCa)
    double zeta_lambda1 = 0.0, zeta_lambda0 = 0.0;
    std::vector<std::string> flags;

    double se() const;
};

// Weighted Breslow-Peto with arm weights w1 (for A = 1) and w0 (for A = 0).
ThetaFit theta_wbp(const SurvivalDataset& ds, const RiskEventSets& sets, const Eigen::VectorXd& w1,
                   const Eigen::VectorXd& w0, ThetaEstimator tag = ThetaEstimator::wBP);
// Unweighted Breslow-Peto.
ThetaFit theta_bp(const SurvivalDataset& ds, const RiskEventSets& sets);
// Weights from one propensity fit (ML/RML) or a pair of arm-specific calibrated fits.
ThetaFit theta_wbp(const SurvivalDataset& ds, const RiskEventSets& sets, const FittedPS& ps);
ThetaFit theta_wbp(const SurvivalDataset& ds, const RiskEventSets& sets, const FittedPS& ps1,
                   const FittedPS& ps0);

// Calibrated estimator from augmented survival curves and risk-set weights of both arms.
ThetaFit theta_cal_from_fits(const SurvivalDataset& ds, const SurvivalFit& s1, const SurvivalFit& s0,
                             const RiskSetWeights& r1, const RiskSetWeights& r0,
                             ThetaEstimator tag);
// Full pipeline: grid over both arms, CAL propensity fits, outcome fits with the given link.
ThetaFit theta_cal(const SurvivalDataset& ds, const CovariateBasis& basis, OrLink link,
                   const PsOptions& ps_opt = {});

struct BTerms {
    Eigen::VectorXd B1, B0; // meaningful on arm-1 and arm-0 rows respectively
};

// Linearization terms of the weighted-only estimating function at theta.
BTerms b_terms(double theta, const std::vector<double>& S1, const std::vector<double>& S0,
               const std::vector<double>& W1, const std::vector<double>& W0,
               const ImputedOutcomes& u1, const ImputedOutcomes& u0, const RiskEventSets& sets,
               const std::vector<char>* used = nullptr);

struct RegularizedThetaOptions {
    PsOptions ps;                // propensity penalty (lambda < 0: cross-validated)
    double zeta_lambda = -1.0;   // augmentation penalty (< 0: cross-validated per arm)
    LassoOptions zeta_lasso;
};

struct RegularizedTheta {
    ThetaFit rcw, rca;
};

// Weighted-only and augmented regularized calibrated estimators from given RCAL fits.
RegularizedTheta theta_rc_from_ps(const SurvivalDataset& ds, const CovariateBasis& basis,
                                  const RiskEventSets& sets, const FittedPS& ps1,
                                  const FittedPS& ps0, const RegularizedThetaOptions& opt = {});
RegularizedTheta theta_rc(const SurvivalDataset& ds, const CovariateBasis& basis,
                          const RegularizedThetaOptions& opt = {});
ThetaFit theta_rcw(const SurvivalDataset& ds, const CovariateBasis& basis,
                   const RegularizedThetaOptions& opt = {});
ThetaFit theta_rca(const SurvivalDataset& ds, const CovariateBasis& basis,
                   const RegularizedThetaOptions& opt = {});

} // namespace calsurv
