#include "calsurv/hazard.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <memory>

namespace calsurv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

std::vector<int> arm_rows(const SurvivalDataset& ds, int arm) {
    std::vector<int> rows;
    for (int i = 0; i < ds.n; ++i)
        if (ds.a[i] == arm) rows.push_back(i);
    return rows;
}

std::shared_ptr<Eigen::MatrixXd> rows_of(const Eigen::MatrixXd& F, const std::vector<int>& rows) {
    auto out = std::make_shared<Eigen::MatrixXd>(static_cast<Eigen::Index>(rows.size()), F.cols());
    for (size_t t = 0; t < rows.size(); ++t) out->row(static_cast<Eigen::Index>(t)) = F.row(rows[t]);
    return out;
}

// Marks k as used when both arms give finite hazards with positive risk-set weights.
ThetaTerms make_terms(int K, std::vector<double> W1, std::vector<double> W0, std::vector<double> q1,
                      std::vector<double> q0, std::vector<std::string>& flags) {
    ThetaTerms t;
    t.K = K;
    t.used.assign(K + 1, 0);
    for (int k = 1; k <= K; ++k) {
        const bool ok = positive(W1[k]) && positive(W0[k]) && std::isfinite(q1[k]) && std::isfinite(q0[k]);
        t.used[k] = ok ? 1 : 0;
        if (!ok) ++t.dropped;
    }
    if (t.dropped)
        flags.push_back(std::to_string(t.dropped) + " period(s) dropped: undefined hazard or empty risk set");
    t.W1 = std::move(W1);
    t.W0 = std::move(W0);
    t.q1 = std::move(q1);
    t.q0 = std::move(q0);
    return t;
}

double solve_theta(const ThetaTerms& t, double offset = 0.0) {
    double ev1 = 0.0, ev0 = 0.0;
    for (int k = 1; k <= t.K; ++k) {
        if (!t.used[k]) continue;
        ev1 += t.W1[k] * std::max(t.q1[k], 0.0);
        ev0 += t.W0[k] * std::max(t.q0[k], 0.0);
    }
    if (!(ev1 > 0)) throw numerical_error("unbounded theta: no weighted events in arm 1");
    if (!(ev0 > 0)) throw numerical_error("unbounded theta: no weighted events in arm 0");
    return solve_scalar_root([&](double th) { return theta_estimating_function(t, th) - offset; },
                             [&](double th) { return -theta_curvature(t, th); });
}

void finish_variance(ThetaFit& fit, int n) {
    const double nn = static_cast<double>(n);
    fit.G = fit.contributions.squaredNorm() / (nn * nn);
    if (!(fit.H > 0)) throw numerical_error("undefined variance: curvature H is not positive");
    fit.Vr = fit.G / (fit.H * fit.H);
}

std::vector<double> q_from_curve(const std::vector<double>& S) {
    std::vector<double> q(S.size(), 0.0);
    for (size_t k = 1; k < S.size(); ++k)
        q[k] = (std::isfinite(S[k - 1]) && S[k - 1] > 0) ? (S[k - 1] - S[k]) / S[k - 1] : kNaN;
    return q;
}

} // namespace

std::string to_string(ThetaEstimator e) {
    switch (e) {
    case ThetaEstimator::BP: return "BP";
    case ThetaEstimator::wBP: return "wBP";
    case ThetaEstimator::CAL: return "CAL";
    case ThetaEstimator::CAL_lin: return "CAL_lin";
    case ThetaEstimator::RCw: return "RCw";
    case ThetaEstimator::RCa: return "RCa";
    }
    return "?";
}

std::string to_string(RiskSetMethod m) {
    switch (m) {
    case RiskSetMethod::IPW: return "IPW";
    case RiskSetMethod::CAL: return "CAL";
    case RiskSetMethod::CAL_lin: return "CAL_lin";
    case RiskSetMethod::RCw: return "RCw";
    }
    return "?";
}

double ThetaFit::se() const { return std::sqrt(Vr); }

double theta_estimating_function(const ThetaTerms& t, double theta) {
    const double e = std::exp(theta);
    double s = 0.0;
    for (int k = 1; k <= t.K; ++k) {
        if (!t.used[k]) continue;
        const double den = t.W1[k] * e + t.W0[k];
        s += t.W1[k] * t.W0[k] / den * (t.q1[k] - t.q0[k] * e);
    }
    return s;
}

double theta_curvature(const ThetaTerms& t, double theta) {
    const double e = std::exp(theta);
    double s = 0.0;
    for (int k = 1; k <= t.K; ++k) {
        if (!t.used[k]) continue;
        const double den = t.W1[k] * e + t.W0[k];
        s += t.W1[k] * t.W0[k] * e / (den * den) * (t.W1[k] * t.q1[k] + t.W0[k] * t.q0[k]);
    }
    return s;
}

RiskSetWeights riskset_weights(const SurvivalDataset& ds, const CovariateBasis& basis,
                               const RiskEventSets& sets, const FittedPS& ps, int arm,
                               RiskSetMethod method) {
    const int n = ds.n, K = sets.K;
    const Eigen::VectorXd w = ps.weights(arm);
    RiskSetWeights out;
    out.arm = arm;
    out.tag = method;
    out.W.assign(K + 1, 0.0);
    out.psi = Eigen::MatrixXd::Zero(n, K + 1);
    Eigen::VectorXd tw = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i)
        if (ds.a[i] == arm) tw[i] = w[i];

    if (method == RiskSetMethod::IPW || method == RiskSetMethod::RCw) {
        for (int k = 0; k <= K; ++k) {
            for (int i : sets.I[k]) out.psi(i, k) = tw[i];
            out.W[k] = out.psi.col(k).mean();
        }
        return out;
    }

    const bool linear = method == RiskSetMethod::CAL_lin;
    const std::vector<int> rows = arm_rows(ds, arm);
    if (rows.empty()) throw validation_error("no subjects in arm " + std::to_string(arm));
    const int na = static_cast<int>(rows.size());
    auto Fa = rows_of(basis.F, rows);
    Eigen::VectorXd ow(na);
    for (int t = 0; t < na; ++t) ow[t] = w[rows[t]] - 1.0;
    out.beta.assign(K + 1, Eigen::VectorXd());

    std::unique_ptr<Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>> cod;
    Eigen::VectorXd sw;
    if (linear) {
        sw = ow.cwiseSqrt();
        cod = std::make_unique<Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>>(sw.asDiagonal() * *Fa);
        if (cod->rank() < basis.m()) out.flags.push_back("risk-set design rank deficient; minimum-norm fit");
    }
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(basis.m());
    Eigen::VectorXd prev;
    Eigen::VectorXd nu(n);
    int capped = 0;
    for (int k = 0; k <= K; ++k) {
        Eigen::VectorXd r(na);
        for (int t = 0; t < na; ++t) r[t] = sets.at_risk(rows[t], k) ? 1.0 : 0.0;
        const bool same = prev.size() == na && (prev.array() == r.array()).all();
        if (!same) {
            const double lo = r.minCoeff(), hi = r.maxCoeff();
            if (linear) {
                beta = cod->solve(sw.cwiseProduct(r));
                nu = basis.F * beta;
            } else if (lo == hi) {
                // Degenerate response: the logistic fit has no finite minimizer; use the limit.
                beta = Eigen::VectorXd();
                nu.setConstant(lo);
            } else {
                GlmProblem prob(Family::Logistic, Fa, r, ow, 1.0 / n);
                SolverOptions so;
                so.coef_cap = 30.0;
                SolverResult res;
                const Eigen::VectorXd init = beta.size() ? beta : Eigen::VectorXd::Zero(basis.m());
                try {
                    res = minimize_glm(prob, init, so);
                } catch (const numerical_error&) {
                    res = minimize_glm(prob, Eigen::VectorXd::Zero(basis.m()), so);
                }
                beta = res.x;
                capped += res.capped;
                nu = (basis.F * beta).unaryExpr([](double e) { return expit(e); });
            }
            prev = r;
        }
        out.beta[k] = beta;
        for (int i = 0; i < n; ++i) {
            const double rk = sets.at_risk(i, k) ? 1.0 : 0.0;
            out.psi(i, k) = tw[i] * rk - (tw[i] - 1.0) * nu[i];
        }
        out.W[k] = out.psi.col(k).mean();
    }
    if (capped) out.flags.push_back("risk-set model coefficients capped at " + std::to_string(capped) + " time points");
    return out;
}

ThetaFit theta_wbp(const SurvivalDataset& ds, const RiskEventSets& sets, const Eigen::VectorXd& w1,
                   const Eigen::VectorXd& w0, ThetaEstimator tag) {
    const int n = ds.n, K = sets.K;
    if (w1.size() != n || w0.size() != n) throw validation_error("weight vector length must equal n");
    ThetaFit fit;
    fit.tag = tag;
    std::vector<double> W1(K + 1, 0.0), W0(K + 1, 0.0);
    for (int k = 0; k <= K; ++k) {
        for (int i : sets.I[k]) (ds.a[i] == 1 ? W1[k] : W0[k]) += (ds.a[i] == 1 ? w1[i] : w0[i]);
        W1[k] /= n;
        W0[k] /= n;
    }
    std::vector<double> q1 = hazard_estimates(ds, sets, w1, 1);
    std::vector<double> q0 = hazard_estimates(ds, sets, w0, 0);
    fit.terms = make_terms(K, W1, W0, q1, q0, fit.flags);
    fit.theta = solve_theta(fit.terms);
    fit.estimating_value = theta_estimating_function(fit.terms, fit.theta);
    fit.H = theta_curvature(fit.terms, fit.theta);

    // Per-subject influence terms: hazard parts on the risk set plus risk-set weight parts.
    const ThetaTerms& t = fit.terms;
    const double e = std::exp(fit.theta);
    fit.contributions = Eigen::VectorXd::Zero(n);
    double shift = 0.0;
    for (int k = 1; k <= K; ++k) {
        if (!t.used[k]) continue;
        const double den = t.W1[k] * e + t.W0[k];
        const double c1 = t.W0[k] / den, c0 = t.W1[k] * e / den;
        const double d = (t.q1[k] - t.q0[k] * e) / (den * den);
        const double a1 = d * t.W0[k] * t.W0[k], a0 = d * e * t.W1[k] * t.W1[k];
        shift -= a1 * t.W1[k] + a0 * t.W0[k];
        for (int i : sets.I[k]) {
            const double ev = sets.event_at(i, k) ? 1.0 : 0.0;
            if (ds.a[i] == 1)
                fit.contributions[i] += c1 * w1[i] * (ev - t.q1[k]) + a1 * w1[i];
            else
                fit.contributions[i] += -c0 * w0[i] * (ev - t.q0[k]) + a0 * w0[i];
        }
    }
    fit.contributions.array() += shift;
    finish_variance(fit, n);
    fit.Vb0 = 1.0 / (n * fit.H);
    return fit;
}

ThetaFit theta_bp(const SurvivalDataset& ds, const RiskEventSets& sets) {
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(ds.n);
    return theta_wbp(ds, sets, one, one, ThetaEstimator::BP);
}

ThetaFit theta_wbp(const SurvivalDataset& ds, const RiskEventSets& sets, const FittedPS& ps) {
    ThetaFit fit = theta_wbp(ds, sets, ps.weights(1), ps.weights(0));
    for (const auto& f : ps.flags) fit.flags.push_back(f);
    return fit;
}

ThetaFit theta_wbp(const SurvivalDataset& ds, const RiskEventSets& sets, const FittedPS& ps1,
                   const FittedPS& ps0) {
    return theta_wbp(ds, sets, ps1.weights(1), ps0.weights(0));
}

ThetaFit theta_cal_from_fits(const SurvivalDataset& ds, const SurvivalFit& s1, const SurvivalFit& s0,
                             const RiskSetWeights& r1, const RiskSetWeights& r0, ThetaEstimator tag) {
    const int n = ds.n, K = s1.K;
    if (s0.K != K || static_cast<int>(r1.W.size()) != K + 1 || static_cast<int>(r0.W.size()) != K + 1)
        throw validation_error("survival curves and risk-set weights must share one grid");
    ThetaFit fit;
    fit.tag = tag;
    std::vector<double> q1 = q_from_curve(s1.S), q0 = q_from_curve(s0.S);
    fit.terms = make_terms(K, r1.W, r0.W, q1, q0, fit.flags);
    fit.theta = solve_theta(fit.terms);
    fit.estimating_value = theta_estimating_function(fit.terms, fit.theta);
    fit.H = theta_curvature(fit.terms, fit.theta);
    fit.Vb0 = kNaN;

    const ThetaTerms& t = fit.terms;
    const double e = std::exp(fit.theta);
    fit.contributions = Eigen::VectorXd::Zero(n);
    for (int k = 1; k <= K; ++k) {
        if (!t.used[k]) continue;
        const double den = t.W1[k] * e + t.W0[k];
        const double c = t.W1[k] * t.W0[k] / den;
        const double d = (t.q1[k] - t.q0[k] * e) / (den * den);
        const double S1p = s1.S[k - 1], S0p = s0.S[k - 1];
        fit.contributions +=
            (c / S1p) * ((1.0 - t.q1[k]) * s1.phi.col(k - 1) - s1.phi.col(k)) -
            (c * e / S0p) * ((1.0 - t.q0[k]) * s0.phi.col(k - 1) - s0.phi.col(k)) +
            d * (t.W0[k] * t.W0[k] * (r1.psi.col(k).array() - t.W1[k]).matrix() +
                 e * t.W1[k] * t.W1[k] * (r0.psi.col(k).array() - t.W0[k]).matrix());
    }
    finish_variance(fit, n);
    for (const auto* f : {&s1.flags, &s0.flags, &r1.flags, &r0.flags})
        for (const auto& s : *f) fit.flags.push_back(s);
    return fit;
}

ThetaFit theta_cal(const SurvivalDataset& ds, const CovariateBasis& basis, OrLink link,
                   const PsOptions& ps_opt) {
    const TimeGrid grid = build_time_grid(ds, {0, 1});
    const RiskEventSets sets = risk_event_sets(ds, grid);
    const FittedPS ps1 = fit_ps_cal(ds, basis, 1, ps_opt);
    const FittedPS ps0 = fit_ps_cal(ds, basis, 0, ps_opt);
    OrOptions oo;
    oo.link = link;
    const SurvivalFit s1 = s_cal_from_ps(ds, basis, sets, ps1, 1, oo);
    const SurvivalFit s0 = s_cal_from_ps(ds, basis, sets, ps0, 0, oo);
    const RiskSetMethod m = link == OrLink::Linear ? RiskSetMethod::CAL_lin : RiskSetMethod::CAL;
    const RiskSetWeights r1 = riskset_weights(ds, basis, sets, ps1, 1, m);
    const RiskSetWeights r0 = riskset_weights(ds, basis, sets, ps0, 0, m);
    ThetaFit fit = theta_cal_from_fits(ds, s1, s0, r1, r0,
                                       link == OrLink::Linear ? ThetaEstimator::CAL_lin : ThetaEstimator::CAL);
    for (const auto* f : {&ps1.flags, &ps0.flags})
        for (const auto& s : *f) fit.flags.push_back(s);
    return fit;
}

BTerms b_terms(double theta, const std::vector<double>& S1, const std::vector<double>& S0,
               const std::vector<double>& W1, const std::vector<double>& W0,
               const ImputedOutcomes& u1, const ImputedOutcomes& u0, const RiskEventSets& sets,
               const std::vector<char>* used) {
    const int n = sets.n, K = sets.K;
    if (static_cast<int>(S1.size()) < K + 1 || static_cast<int>(S0.size()) < K + 1 ||
        static_cast<int>(W1.size()) < K + 1 || static_cast<int>(W0.size()) < K + 1)
        throw validation_error("b_terms: inputs shorter than the grid");
    if (u1.U.rows() != n || u0.U.rows() != n || u1.U.cols() < K + 1 || u0.U.cols() < K + 1)
        throw validation_error("b_terms: imputed outcomes do not match the grid");
    const double e = std::exp(theta);
    BTerms b;
    b.B1 = Eigen::VectorXd::Zero(n);
    b.B0 = Eigen::VectorXd::Zero(n);
    for (int k = 1; k <= K; ++k) {
        if (used && !(*used)[k]) continue;
        if (!positive(S1[k - 1]) || !positive(S0[k - 1]))
            throw numerical_error("b_terms: survival reaches 0 before k=" + std::to_string(k));
        const double q1 = (S1[k - 1] - S1[k]) / S1[k - 1];
        const double q0 = (S0[k - 1] - S0[k]) / S0[k - 1];
        const double den = W1[k] * e + W0[k];
        const double c = W1[k] * W0[k] / den;
        const double d = (q1 - q0 * e) / (den * den);
        b.B1 += (c / S1[k - 1]) * ((1.0 - q1) * u1.U.col(k - 1) - u1.U.col(k));
        b.B0 += (e * c / S0[k - 1]) * ((1.0 - q0) * u0.U.col(k - 1) - u0.U.col(k));
        const double r1 = d * W0[k] * W0[k], r0 = e * d * W1[k] * W1[k];
        for (int i : sets.I[k]) {
            b.B1[i] += r1;
            b.B0[i] -= r0;
        }
    }
    return b;
}

namespace {

struct ArmPieces {
    Eigen::VectorXd tw;  // T w for the arm (0 elsewhere)
    ImputedOutcomes imp;
    std::vector<double> S;
    RiskSetWeights rs;
};

ArmPieces arm_pieces(const SurvivalDataset& ds, const CovariateBasis& basis, const RiskEventSets& sets,
                     const FittedPS& ps, int arm) {
    ArmPieces p;
    const Eigen::VectorXd w = ps.weights(arm);
    p.tw = Eigen::VectorXd::Zero(ds.n);
    for (int i = 0; i < ds.n; ++i)
        if (ds.a[i] == arm) p.tw[i] = w[i];
    const NuisanceCCPCSP nuis = calibrated_ccp_csp(ds, sets, w, arm);
    p.imp = imputed_outcomes(ds, sets, nuis);
    p.S.assign(sets.K + 1, 1.0);
    for (int k = 1; k <= sets.K; ++k) p.S[k] = p.tw.dot(p.imp.U.col(k)) / ds.n;
    p.rs = riskset_weights(ds, basis, sets, ps, arm, RiskSetMethod::RCw);
    return p;
}

// Linear augmentation model fitted on one arm with weights tw - 1.
Eigen::VectorXd fit_zeta(const SurvivalDataset& ds, const CovariateBasis& basis, int arm,
                         const Eigen::VectorXd& tw, const Eigen::VectorXd& B, double lambda,
                         const LassoOptions& lasso, double* chosen, std::vector<std::string>& flags) {
    const std::vector<int> rows = arm_rows(ds, arm);
    const int na = static_cast<int>(rows.size());
    auto Fa = rows_of(basis.F, rows);
    Eigen::VectorXd r(na), ow(na);
    for (int t = 0; t < na; ++t) {
        r[t] = B[rows[t]];
        ow[t] = tw[rows[t]] - 1.0;
    }
    if (lambda == 0.0) {
        *chosen = 0.0;
        const Eigen::VectorXd sw = ow.cwiseSqrt();
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(sw.asDiagonal() * *Fa);
        if (cod.rank() < basis.m()) flags.push_back("augmentation design rank deficient; minimum-norm fit");
        return cod.solve(sw.cwiseProduct(r));
    }
    GlmProblem prob(Family::Gaussian, Fa, r, ow, 1.0 / ds.n);
    if (lambda < 0) {
        auto folds = make_folds(std::vector<int>(na, 0), lasso.n_folds, lasso.seed);
        CvResult cv = cross_validate_lambda(prob, folds, lasso);
        *chosen = cv.lambda;
        return cv.coef;
    }
    *chosen = lambda;
    return lasso_fit(prob, lambda, lasso).x;
}

} // namespace

RegularizedTheta theta_rc_from_ps(const SurvivalDataset& ds, const CovariateBasis& basis,
                                  const RiskEventSets& sets, const FittedPS& ps1,
                                  const FittedPS& ps0, const RegularizedThetaOptions& opt) {
    const int n = ds.n, K = sets.K;
    const ArmPieces p1 = arm_pieces(ds, basis, sets, ps1, 1);
    const ArmPieces p0 = arm_pieces(ds, basis, sets, ps0, 0);

    RegularizedTheta out;
    ThetaFit& rcw = out.rcw;
    rcw.tag = ThetaEstimator::RCw;
    rcw.terms = make_terms(K, p1.rs.W, p0.rs.W, q_from_curve(p1.S), q_from_curve(p0.S), rcw.flags);
    for (const auto* f : {&ps1.flags, &ps0.flags})
        for (const auto& s : *f) rcw.flags.push_back(s);
    rcw.theta = solve_theta(rcw.terms);
    rcw.estimating_value = theta_estimating_function(rcw.terms, rcw.theta);
    rcw.H = theta_curvature(rcw.terms, rcw.theta);
    rcw.Vb0 = kNaN;

    const BTerms b = b_terms(rcw.theta, p1.S, p0.S, p1.rs.W, p0.rs.W, p1.imp, p0.imp, sets, &rcw.terms.used);
    rcw.contributions = p1.tw.cwiseProduct(b.B1) - p0.tw.cwiseProduct(b.B0);
    finish_variance(rcw, n);

    ThetaFit& rca = out.rca;
    rca.tag = ThetaEstimator::RCa;
    rca.terms = rcw.terms;
    rca.flags = rcw.flags;
    rca.Vb0 = kNaN;
    rca.zeta1 = fit_zeta(ds, basis, 1, p1.tw, b.B1, opt.zeta_lambda, opt.zeta_lasso, &rca.zeta_lambda1, rca.flags);
    rca.zeta0 = fit_zeta(ds, basis, 0, p0.tw, b.B0, opt.zeta_lambda, opt.zeta_lasso, &rca.zeta_lambda0, rca.flags);
    const Eigen::VectorXd g1 = basis.F * rca.zeta1, g0 = basis.F * rca.zeta0;
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd aug = (p1.tw - one).cwiseProduct(g1) - (p0.tw - one).cwiseProduct(g0);
    const double offset = aug.mean();
    rca.theta = solve_theta(rca.terms, offset);
    rca.estimating_value = theta_estimating_function(rca.terms, rca.theta) - offset;
    rca.H = theta_curvature(rca.terms, rca.theta);
    const BTerms ba = b_terms(rca.theta, p1.S, p0.S, p1.rs.W, p0.rs.W, p1.imp, p0.imp, sets, &rca.terms.used);
    rca.contributions = p1.tw.cwiseProduct(ba.B1) - p0.tw.cwiseProduct(ba.B0) - aug;
    finish_variance(rca, n);
    return out;
}

RegularizedTheta theta_rc(const SurvivalDataset& ds, const CovariateBasis& basis,
                          const RegularizedThetaOptions& opt) {
    const TimeGrid grid = build_time_grid(ds, {0, 1});
    const RiskEventSets sets = risk_event_sets(ds, grid);
    const FittedPS ps1 = fit_ps_rcal(ds, basis, 1, opt.ps);
    const FittedPS ps0 = fit_ps_rcal(ds, basis, 0, opt.ps);
    return theta_rc_from_ps(ds, basis, sets, ps1, ps0, opt);
}

ThetaFit theta_rcw(const SurvivalDataset& ds, const CovariateBasis& basis,
                   const RegularizedThetaOptions& opt) {
    return theta_rc(ds, basis, opt).rcw;
}

ThetaFit theta_rca(const SurvivalDataset& ds, const CovariateBasis& basis,
                   const RegularizedThetaOptions& opt) {
    return theta_rc(ds, basis, opt).rca;
}

} // namespace calsurv
