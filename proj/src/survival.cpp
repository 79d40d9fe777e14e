#include "calsurv/survival.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <memory>

namespace calsurv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Eigen::VectorXd arm_indicator(const SurvivalDataset& ds, int arm) {
    Eigen::VectorXd t(ds.n);
    for (int i = 0; i < ds.n; ++i) t[i] = (ds.a[i] == arm) ? 1.0 : 0.0;
    return t;
}

double weighted_count(const std::vector<int>& idx, const SurvivalDataset& ds,
                      const Eigen::VectorXd& w, int arm, int power = 1) {
    double s = 0.0;
    for (int i : idx)
        if (ds.a[i] == arm) s += (power == 1) ? w[i] : w[i] * w[i];
    return s;
}

void init_fit(SurvivalFit& fit, int arm, SurvEstimator tag, int K, int n) {
    fit.arm = arm;
    fit.tag = tag;
    fit.K = K;
    fit.S.assign(K + 1, kNaN);
    fit.q.assign(K + 1, kNaN);
    fit.Vb.assign(K + 1, kNaN);
    fit.Vb0.assign(K + 1, kNaN);
    fit.Vr.assign(K + 1, kNaN);
    fit.missing.assign(K + 1, 0);
    fit.phi = Eigen::MatrixXd::Zero(n, K + 1);
    fit.S[0] = 1.0;
    fit.q[0] = 0.0;
}

double normalization(const SurvivalDataset& ds, const Eigen::VectorXd& w, int arm) {
    double s = 0.0;
    for (int i = 0; i < ds.n; ++i)
        if (ds.a[i] == arm) s += w[i];
    return s / ds.n - 1.0;
}

void q_from_S(SurvivalFit& fit) {
    for (int k = 1; k <= fit.K; ++k) {
        const double prev = fit.S[k - 1];
        fit.q[k] = (std::isfinite(prev) && prev != 0.0) ? (prev - fit.S[k]) / prev : kNaN;
    }
}

// Sample variance n^{-2} sum (phi - S)^2 for every column with a finite S.
void sample_variance(SurvivalFit& fit) {
    const double n = static_cast<double>(fit.phi.rows());
    for (int k = 0; k <= fit.K; ++k) {
        if (!std::isfinite(fit.S[k])) continue;
        fit.Vr[k] = (fit.phi.col(k).array() - fit.S[k]).square().sum() / (n * n);
    }
}

} // namespace

std::string to_string(SurvEstimator e) {
    switch (e) {
    case SurvEstimator::KM: return "KM";
    case SurvEstimator::wKM: return "wKM";
    case SurvEstimator::IPW: return "IPW";
    case SurvEstimator::ICE: return "ICE";
    case SurvEstimator::AIPW: return "AIPW";
    case SurvEstimator::CAL: return "CAL";
    case SurvEstimator::CAL_lin: return "CAL_lin";
    case SurvEstimator::RCAL: return "RCAL";
    case SurvEstimator::RCAL_lin: return "RCAL_lin";
    case SurvEstimator::RCw: return "RCw";
    }
    return "?";
}

std::vector<double> hazard_estimates(const SurvivalDataset& ds, const RiskEventSets& sets,
                                     const Eigen::VectorXd& w, int arm,
                                     std::vector<std::string>* flags) {
    if ((w.array() < 0).any()) throw validation_error("weights must be nonnegative");
    std::vector<double> q(sets.K + 1, 0.0);
    for (int j = 1; j <= sets.K; ++j) {
        const double den = weighted_count(sets.I[j], ds, w, arm);
        if (!(den > 0)) {
            if (flags) flags->push_back("empty weighted risk set at k=" + std::to_string(j));
            continue;
        }
        q[j] = weighted_count(sets.J[j], ds, w, arm) / den;
    }
    return q;
}

SurvivalFit km(const SurvivalDataset& ds, const RiskEventSets& sets, int arm,
               const Eigen::VectorXd* weights) {
    const int n = ds.n, K = sets.K;
    const Eigen::VectorXd w = weights ? *weights : Eigen::VectorXd::Ones(n);
    SurvivalFit fit;
    init_fit(fit, arm, weights ? SurvEstimator::wKM : SurvEstimator::KM, K, n);
    fit.q = hazard_estimates(ds, sets, w, arm, &fit.flags);
    fit.normalization_residual = normalization(ds, w, arm);
    fit.Vb[0] = fit.Vb0[0] = fit.Vr[0] = 0.0;
    double sum_b = 0.0, sum_b0 = 0.0;
    bool missing = false, dead = false;
    for (int j = 1; j <= K; ++j) {
        const double den = weighted_count(sets.I[j], ds, w, arm);
        fit.phi.col(j) = fit.phi.col(j - 1);
        if (!(den > 0)) missing = true;
        if (missing) {
            fit.missing[j] = 1;
            fit.S[j] = kNaN;
            continue;
        }
        fit.S[j] = fit.S[j - 1] * (1.0 - fit.q[j]);
        const double qj = fit.q[j];
        const double surv = den - weighted_count(sets.J[j], ds, w, arm);
        if (!dead && surv > 0) {
            const double den2 = weighted_count(sets.I[j], ds, w, arm, 2);
            sum_b += den2 / (den * den) * qj / (1.0 - qj);
            sum_b0 += 1.0 / den * qj / (1.0 - qj);
            for (int i : sets.I[j]) {
                if (ds.a[i] != arm) continue;
                const double ind = sets.event_at(i, j) ? 1.0 : 0.0;
                fit.phi(i, j) += n * (-w[i] / surv) * (ind - qj);
            }
        } else {
            dead = true; // S = 0 from here on
        }
        const double s2 = fit.S[j] * fit.S[j];
        if (dead) {
            fit.Vb[j] = fit.Vb0[j] = fit.Vr[j] = 0.0;
        } else {
            fit.Vb[j] = s2 * sum_b;
            fit.Vb0[j] = s2 * sum_b0;
            fit.Vr[j] = s2 / (static_cast<double>(n) * n) * fit.phi.col(j).squaredNorm();
        }
    }
    if (dead) fit.flags.push_back("survival reaches 0; variances reported as 0 beyond that point");
    return fit;
}

NuisanceCCPCSP calibrated_ccp_csp(const SurvivalDataset& ds, const RiskEventSets& sets,
                                  const Eigen::VectorXd& w, int arm) {
    const int K = sets.K;
    NuisanceCCPCSP nu;
    nu.arm = arm;
    nu.rho.assign(K + 1, 1.0);
    nu.eta.assign(K + 1, 1.0);
    nu.undefined.assign(K + 1, 0);
    const std::vector<double> q = hazard_estimates(ds, sets, w, arm);
    for (int l = 0; l < K; ++l) {
        const double surv = weighted_count(sets.I[l], ds, w, arm) - weighted_count(sets.J[l], ds, w, arm);
        const double next = weighted_count(sets.I[l + 1], ds, w, arm);
        if (surv > 0 && next > 0) {
            nu.rho[l + 1] = next / surv;
        } else {
            nu.rho[l + 1] = kNaN;
            nu.undefined[l + 1] = 1;
        }
        nu.eta[l + 1] = 1.0 - q[l + 1];
    }
    return nu;
}

NuisanceCCPCSP ml_ccp_csp(const SurvivalDataset& ds, const RiskEventSets& sets, int arm) {
    return calibrated_ccp_csp(ds, sets, Eigen::VectorXd::Ones(ds.n), arm);
}

namespace {

void check_nuisance(const NuisanceCCPCSP& nuis, int K) {
    if (static_cast<int>(nuis.rho.size()) != K + 1 || static_cast<int>(nuis.eta.size()) != K + 1)
        throw validation_error("nuisance estimates do not match the grid");
    for (int k = 1; k <= K; ++k)
        if (!std::isfinite(nuis.rho[k]) || nuis.rho[k] <= 0)
            throw numerical_error("non-censoring probability undefined at k=" + std::to_string(k));
}

} // namespace

ImputedOutcomes imputed_outcomes(const SurvivalDataset& ds, const RiskEventSets& sets,
                                 const NuisanceCCPCSP& nuis) {
    const int n = ds.n, K = sets.K;
    check_nuisance(nuis, K);
    std::vector<double> pibar(K + 1, 1.0);
    for (int k = 1; k <= K; ++k) pibar[k] = pibar[k - 1] * nuis.rho[k];
    ImputedOutcomes out;
    out.arm = nuis.arm;
    out.U = Eigen::MatrixXd::Zero(n, K + 1);
    for (int i = 0; i < n; ++i) {
        if (ds.a[i] != nuis.arm) continue;
        // C_k = sum_{l < k} a_l * prod_{j = l+1..k} eta_j, built as C_k = eta_k (C_{k-1} + a_{k-1}).
        double C = 0.0;
        out.U(i, 0) = 1.0;
        for (int k = 1; k <= K; ++k) {
            const int l = k - 1;
            const double ef = sets.event_free(i, l) ? 1.0 : 0.0;
            const double Rn = sets.at_risk(i, k) ? 1.0 : 0.0;
            const double a_l = ef / pibar[l] * (Rn / nuis.rho[k] - 1.0);
            C = nuis.eta[k] * (C + a_l);
            const double efk = sets.event_free(i, k) ? 1.0 : 0.0;
            out.U(i, k) = efk / pibar[k] - C;
        }
    }
    return out;
}

SurvivalFit aipw_survival(const SurvivalDataset& ds, const RiskEventSets& sets,
                          const Eigen::VectorXd& w, const NuisanceCCPCSP& nuis, int arm,
                          double* form_gap) {
    const int n = ds.n, K = sets.K;
    check_nuisance(nuis, K);
    SurvivalFit fit;
    init_fit(fit, arm, SurvEstimator::AIPW, K, n);
    fit.normalization_residual = normalization(ds, w, arm);
    std::vector<double> pibar(K + 1, 1.0), M(K + 1, 1.0);
    for (int k = 1; k <= K; ++k) {
        pibar[k] = pibar[k - 1] * nuis.rho[k];
        M[k] = M[k - 1] * nuis.eta[k];
    }
    const ImputedOutcomes imp = imputed_outcomes(ds, sets, nuis);
    double gap = 0.0, scale = 1.0;
    for (int i = 0; i < n; ++i) {
        const double tw = (ds.a[i] == arm) ? w[i] : 0.0;
        // Outcome-regression arrangement: D_k = eta_k D_{k-1} + b_{k-1}.
        double D = 0.0;
        fit.phi(i, 0) = tw * imp.U(i, 0) - (tw - 1.0) * M[0];
        for (int k = 1; k <= K; ++k) {
            const double ps_form = tw * imp.U(i, k) - (tw - 1.0) * M[k];
            double or_form = M[k];
            if (tw != 0.0) {
                const double ef = sets.event_free(i, k) ? 1.0 : 0.0;
                const double r = sets.at_risk(i, k) ? 1.0 : 0.0;
                D = nuis.eta[k] * D + (ef - nuis.eta[k] * r) / pibar[k];
                or_form += tw * D;
            }
            fit.phi(i, k) = ps_form;
            gap = std::max(gap, std::abs(ps_form - or_form));
            scale = std::max(scale, std::abs(ps_form));
        }
    }
    if (form_gap) *form_gap = gap;
    if (gap > 1e-8 * scale)
        throw numerical_error("internal consistency: the two augmented IPW forms differ by " +
                              std::to_string(gap));
    for (int k = 0; k <= K; ++k) fit.S[k] = fit.phi.col(k).mean();
    q_from_S(fit);
    sample_variance(fit);
    return fit;
}

std::vector<double> ipw_survival(const SurvivalDataset& ds, const RiskEventSets& sets,
                                 const Eigen::VectorXd& w, const NuisanceCCPCSP& nuis, int arm) {
    const int K = sets.K;
    check_nuisance(nuis, K);
    std::vector<double> out(K + 1, 0.0);
    double pibar = 1.0;
    for (int k = 0; k <= K; ++k) {
        if (k > 0) pibar *= nuis.rho[k];
        double s = 0.0;
        for (int i : sets.I[k])
            if (ds.a[i] == arm && sets.event_free(i, k)) s += w[i];
        out[k] = s / pibar / ds.n;
    }
    return out;
}

std::vector<double> ice_survival(const NuisanceCCPCSP& nuis) {
    std::vector<double> out(nuis.eta.size(), 1.0);
    for (size_t k = 1; k < nuis.eta.size(); ++k) out[k] = out[k - 1] * nuis.eta[k];
    return out;
}

SurvivalFit s_cal_from_ps(const SurvivalDataset& ds, const CovariateBasis& basis,
                          const RiskEventSets& sets, const FittedPS& ps, int arm,
                          const OrOptions& opt) {
    const int n = ds.n, K = sets.K;
    const int kmax = (opt.k_max >= 1) ? std::min(opt.k_max, K) : K;
    const Eigen::VectorXd w = ps.weights(arm);
    const NuisanceCCPCSP nuis = calibrated_ccp_csp(ds, sets, w, arm);
    const ImputedOutcomes imp = imputed_outcomes(ds, sets, nuis);

    const bool linear = opt.link == OrLink::Linear;
    SurvivalFit fit;
    const SurvEstimator tag = opt.regularized ? (linear ? SurvEstimator::RCAL_lin : SurvEstimator::RCAL)
                                              : (linear ? SurvEstimator::CAL_lin : SurvEstimator::CAL);
    init_fit(fit, arm, tag, K, n);
    fit.normalization_residual = normalization(ds, w, arm);
    fit.alpha.assign(K + 1, Eigen::VectorXd());
    fit.phi.col(0).setOnes();
    fit.Vr[0] = 0.0;

    std::vector<int> rows;
    for (int i = 0; i < n; ++i)
        if (ds.a[i] == arm) rows.push_back(i);
    if (rows.empty()) throw validation_error("no subjects in arm " + std::to_string(arm));
    const int na = static_cast<int>(rows.size());
    auto Fa = std::make_shared<Eigen::MatrixXd>(na, basis.m());
    Eigen::VectorXd ow(na);
    for (int t = 0; t < na; ++t) {
        Fa->row(t) = basis.F.row(rows[t]);
        ow[t] = w[rows[t]] - 1.0; // (1 - pi_a) / pi_a
    }
    auto response = [&](int k) {
        Eigen::VectorXd r(na);
        for (int t = 0; t < na; ++t) r[t] = imp.U(rows[t], k);
        return r;
    };
    const Family fam = linear ? Family::Gaussian : Family::Logistic;
    const double scale = 1.0 / n;

    double lambda = 0.0;
    if (opt.regularized) {
        lambda = opt.lambda;
        if (lambda < 0) {
            const int kcv = (opt.cv_k >= 1) ? std::min(opt.cv_k, kmax) : std::max(1, kmax / 2);
            GlmProblem prob(fam, Fa, response(kcv), ow, scale);
            auto folds = make_folds(std::vector<int>(na, 0), opt.lasso.n_folds, opt.lasso.seed);
            lambda = cross_validate_lambda(prob, folds, opt.lasso).lambda;
        }
    }
    fit.or_lambda = lambda;

    // Exact weighted least squares shares one factorization across k.
    std::unique_ptr<Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>> cod;
    Eigen::VectorXd sw;
    if (linear && lambda == 0.0) {
        sw = ow.cwiseSqrt();
        cod = std::make_unique<Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>>(
            sw.asDiagonal() * *Fa);
        if (cod->rank() < basis.m()) fit.flags.push_back("outcome design rank deficient; minimum-norm fit");
    }

    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(basis.m());
    Eigen::VectorXd prev_r;
    int capped = 0;
    for (int k = 1; k <= K; ++k) {
        if (k > kmax) {
            fit.missing[k] = 1;
            continue;
        }
        const Eigen::VectorXd r = response(k);
        const bool same = prev_r.size() == r.size() && (prev_r.array() == r.array()).all();
        if (!same) {
            if (lambda == 0.0) {
                if (linear) {
                    alpha = cod->solve(sw.cwiseProduct(r));
                } else {
                    GlmProblem prob(fam, Fa, r, ow, scale);
                    SolverOptions so;
                    so.coef_cap = 30.0;
                    SolverResult res;
                    try {
                        res = minimize_glm(prob, alpha, so);
                    } catch (const numerical_error&) {
                        res = minimize_glm(prob, Eigen::VectorXd::Zero(basis.m()), so);
                    }
                    alpha = res.x;
                    capped += res.capped;
                }
            } else {
                GlmProblem prob(fam, Fa, r, ow, scale);
                LassoOptions lo = opt.lasso;
                lo.solver.coef_cap = 30.0;
                auto res = lasso_fit(prob, lambda, lo);
                alpha = res.x;
                capped += res.capped;
            }
            prev_r = r;
        }
        fit.alpha[k] = alpha;
        Eigen::VectorXd mu = basis.F * alpha;
        if (!linear) mu = mu.unaryExpr([](double e) { return expit(e); });
        for (int i = 0; i < n; ++i) {
            const double tw = (ds.a[i] == arm) ? w[i] : 0.0;
            fit.phi(i, k) = tw * imp.U(i, k) - (tw - 1.0) * mu[i];
        }
        fit.S[k] = fit.phi.col(k).mean();
    }
    if (capped) fit.flags.push_back("outcome model coefficients capped at " + std::to_string(capped) + " time points");
    q_from_S(fit);
    sample_variance(fit);
    return fit;
}

SurvivalFit s_cal(const SurvivalDataset& ds, const CovariateBasis& basis, int arm,
                  const OrOptions& opt, const PsOptions& ps_opt) {
    const TimeGrid grid = build_time_grid(ds, {arm});
    const RiskEventSets sets = risk_event_sets(ds, grid);
    const FittedPS ps = opt.regularized ? fit_ps_rcal(ds, basis, arm, ps_opt)
                                        : fit_ps_cal(ds, basis, arm, ps_opt);
    SurvivalFit fit = s_cal_from_ps(ds, basis, sets, ps, arm, opt);
    for (const auto& f : ps.flags) fit.flags.push_back(f);
    return fit;
}

SurvivalFit s_rcw_from_ps(const SurvivalDataset& ds, const RiskEventSets& sets,
                          const FittedPS& ps, int arm) {
    const int n = ds.n, K = sets.K;
    const Eigen::VectorXd w = ps.weights(arm);
    const NuisanceCCPCSP nuis = calibrated_ccp_csp(ds, sets, w, arm);
    const ImputedOutcomes imp = imputed_outcomes(ds, sets, nuis);
    SurvivalFit fit;
    init_fit(fit, arm, SurvEstimator::RCw, K, n);
    fit.normalization_residual = normalization(ds, w, arm);
    const Eigen::VectorXd tw = arm_indicator(ds, arm).cwiseProduct(w);
    for (int k = 0; k <= K; ++k) fit.phi.col(k) = tw.cwiseProduct(imp.U.col(k));
    for (int k = 1; k <= K; ++k) fit.S[k] = fit.phi.col(k).mean();
    q_from_S(fit);
    return fit;
}

SurvivalFit s_rcw(const SurvivalDataset& ds, const CovariateBasis& basis, int arm,
                  const PsOptions& ps_opt) {
    const TimeGrid grid = build_time_grid(ds, {arm});
    const RiskEventSets sets = risk_event_sets(ds, grid);
    const FittedPS ps = fit_ps_rcal(ds, basis, arm, ps_opt);
    return s_rcw_from_ps(ds, sets, ps, arm);
}

} // namespace calsurv
