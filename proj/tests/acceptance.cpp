// Acceptance runner: one PASS/FAIL line per criterion, details indented below it.
// Usage: calsurv_acceptance [criterion numbers...]   (default: all seven)
#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "calsurv/hazard.hpp"
#include "calsurv/sim.hpp"
#include "cli.hpp"
#include "support.hpp"

using namespace calsurv;
namespace ts = testsupport;

namespace {

// Collects named checks for one criterion; the criterion passes when all of them pass.
class Criterion {
public:
    explicit Criterion(std::string title) : title_(std::move(title)), start_(std::chrono::steady_clock::now()) {}

    void check(const std::string& what, bool ok, const std::string& detail = "") {
        if (!ok) ++failed_;
        lines_.push_back((ok ? "    ok    " : "    FAIL  ") + what + (detail.empty() ? "" : "  (" + detail + ")"));
    }
    void note(const std::string& s) { lines_.push_back("    note  " + s); }
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }
    bool report(const std::string& id) const {
        std::printf("%s %s: %s  [%.1f s]\n", id.c_str(), title_.c_str(), failed_ == 0 ? "PASS" : "FAIL", seconds());
        for (const auto& l : lines_) std::printf("%s\n", l.c_str());
        std::fflush(stdout);
        return failed_ == 0;
    }

private:
    std::string title_;
    std::chrono::steady_clock::time_point start_;
    std::vector<std::string> lines_;
    int failed_ = 0;
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

struct Prepared {
    SurvivalDataset ds;
    CovariateBasis basis;
    RiskEventSets sets;
};

// Dataset r of the identity suite: n in [20, 200], p in [1, 5].
Prepared prepared(int r, const std::vector<int>& scope) {
    const int n = 20 + (r * 61) % 181, p = 1 + r % 5;
    Prepared P{ts::random_dataset(9000 + r, n, p), {}, {}};
    P.basis = design_matrix(P.ds);
    P.sets = risk_event_sets(P.ds, build_time_grid(P.ds, scope));
    return P;
}

// ---------------------------------------------------------------- 1

bool criterion1() {
    Criterion c("algebraic identities on 20 random datasets (n 20..200, p 1..5)");
    const int R = 20;
    double prop1 = 0, prop1_ipw = 0, prop2 = 0, slin = 0, tlin = 0, slin0 = 0, t0 = 0, v0 = 0, roots = 0,
           forms = 0, k2 = 0;
    int nk2 = 0;
    int used = 0, skipped = 0, root_sets = 0;
    for (int r = 0; used < R; ++r) {
        const int arm = r % 2;
        const Prepared P = prepared(r, {arm});
        const Prepared H = prepared(r, {0, 1});
        // the identities presume solved calibration equations; separated samples give capped fits
        if (fit_ps_cal(P.ds, P.basis, arm).capped || fit_ps_cal(H.ds, H.basis, 1).capped ||
            fit_ps_cal(H.ds, H.basis, 0).capped) {
            ++skipped;
            continue;
        }
        ++used;
        const int K = P.sets.K;
        const double n = P.ds.n;

        // Prop 1 with ML and CAL propensity weights; the IPW clause needs the CAL normalization
        for (bool cal : {false, true}) {
            const FittedPS ps = cal ? fit_ps_cal(P.ds, P.basis, arm) : fit_ps_ml(P.ds, P.basis);
            const Eigen::VectorXd w = ps.weights(arm);
            const NuisanceCCPCSP nu = calibrated_ccp_csp(P.ds, P.sets, w, arm);
            const SurvivalFit a = aipw_survival(P.ds, P.sets, w, nu, arm);
            const std::vector<double> ice = ice_survival(nu), ipw = ipw_survival(P.ds, P.sets, w, nu, arm);
            const SurvivalFit wkm = km(P.ds, P.sets, arm, &w);
            for (int k = 1; k <= K; ++k) {
                if (nu.undefined[k]) break;
                prop1 = std::max({prop1, std::abs(a.S[k] - ice[k]), std::abs(a.S[k] - wkm.S[k])});
                if (cal) prop1_ipw = std::max(prop1_ipw, std::abs(ipw[k] - wkm.S[k]));
                // Prop 2: robust wKM variance against the augmented sample variance
                if (cal && wkm.S[k] > 0) {
                    const double sv = (a.phi.col(k).array() - a.S[k]).square().sum() / (n * n);
                    prop2 = std::max(prop2, ts::rel_diff(wkm.Vr[k], sv));
                }
            }
        }

        // phi in propensity form against outcome-regression form, with non-calibrated nuisances
        {
            const Eigen::VectorXd w = fit_ps_ml(P.ds, P.basis).weights(arm);
            NuisanceCCPCSP nu = ml_ccp_csp(P.ds, P.sets, arm);
            for (int k = 1; k <= K; ++k) {
                nu.rho[k] = std::min(1.0, nu.rho[k] * (0.96 + 0.02 * (k % 3)));
                nu.eta[k] = std::min(1.0, nu.eta[k] * (0.97 + 0.01 * (k % 2)));
            }
            ts::Nuisance lit;
            lit.rho = nu.rho;
            lit.eta = nu.eta;
            const SurvivalFit f = aipw_survival(P.ds, P.sets, w, nu, arm);
            const Eigen::MatrixXd ps = ts::phi_ps_literal(P.ds, arm, K, w, lit);
            const Eigen::MatrixXd orf = ts::phi_or_literal(P.ds, arm, K, w, lit);
            forms = std::max({forms, (ps - orf).cwiseAbs().maxCoeff(), (f.phi - ps).cwiseAbs().maxCoeff()});
            if (K >= 2) {
                const Eigen::VectorXd a2 = ts::phi_k2_a(P.ds, arm, w, lit), b2 = ts::phi_k2_b(P.ds, arm, w, lit);
                k2 = std::max({k2, (a2 - b2).cwiseAbs().maxCoeff(), (a2 - f.phi.col(2)).cwiseAbs().maxCoeff()});
                ++nk2;
            }
        }

        // linear calibrated curve against wKM with calibrated weights; lambda 0 regularized version
        {
            const FittedPS ps = fit_ps_cal(P.ds, P.basis, arm);
            OrOptions oo;
            oo.link = OrLink::Linear;
            const SurvivalFit cl = s_cal_from_ps(P.ds, P.basis, P.sets, ps, arm, oo);
            const Eigen::VectorXd w = ps.weights(arm);
            const SurvivalFit wkm = km(P.ds, P.sets, arm, &w);
            PsOptions z;
            z.lambda = 0.0;
            OrOptions ro = oo;
            ro.regularized = true;
            ro.lambda = 0.0;
            const SurvivalFit rc = s_cal_from_ps(P.ds, P.basis, P.sets, fit_ps_rcal(P.ds, P.basis, arm, z), arm, ro);
            for (int k = 1; k <= K; ++k) {
                if (cl.missing[k] || rc.missing[k] || !(wkm.S[k] > 0)) break;
                slin = std::max(slin, std::abs(cl.S[k] - wkm.S[k]));
                slin0 = std::max(slin0, std::abs(rc.S[k] - cl.S[k]));
            }
        }

        // hazard-ratio identities on the two-arm grid
        {
            const ThetaFit lin = theta_cal(H.ds, H.basis, OrLink::Linear);
            const FittedPS p1 = fit_ps_cal(H.ds, H.basis, 1), p0 = fit_ps_cal(H.ds, H.basis, 0);
            tlin = std::max(tlin, std::abs(lin.theta - theta_wbp(H.ds, H.sets, p1, p0).theta));

            RegularizedThetaOptions z;
            z.ps.lambda = 0.0;
            z.zeta_lambda = 0.0;
            const RegularizedTheta rt = theta_rc(H.ds, H.basis, z);
            t0 = std::max({t0, std::abs(rt.rcw.theta - lin.theta), std::abs(rt.rca.theta - lin.theta)});
            v0 = std::max(v0, ts::rel_diff(rt.rca.Vr, lin.Vr));

            // weighted-only estimating function rebuilt from per-subject linearization terms
            RegularizedThetaOptions ro;
            ro.ps.lambda = 0.01;
            ro.zeta_lambda = 0.01;
            ro.ps.lasso.solver.tol = 1e-10;
            const FittedPS q1 = fit_ps_rcal(H.ds, H.basis, 1, ro.ps), q0 = fit_ps_rcal(H.ds, H.basis, 0, ro.ps);
            if (q1.capped || q0.capped) continue;
            ++root_sets;
            const Eigen::VectorXd w1 = q1.weights(1), w0 = q0.weights(0);
            const ImputedOutcomes u1 = imputed_outcomes(H.ds, H.sets, calibrated_ccp_csp(H.ds, H.sets, w1, 1));
            const ImputedOutcomes u0 = imputed_outcomes(H.ds, H.sets, calibrated_ccp_csp(H.ds, H.sets, w0, 0));
            const SurvivalFit s1 = s_rcw_from_ps(H.ds, H.sets, q1, 1), s0 = s_rcw_from_ps(H.ds, H.sets, q0, 0);
            const RiskSetWeights r1 = riskset_weights(H.ds, H.basis, H.sets, q1, 1, RiskSetMethod::RCw);
            const RiskSetWeights r0 = riskset_weights(H.ds, H.basis, H.sets, q0, 0, RiskSetMethod::RCw);
            const RegularizedTheta rq = theta_rc_from_ps(H.ds, H.basis, H.sets, q1, q0, ro);
            auto recon = [&](double th) {
                const BTerms b = b_terms(th, s1.S, s0.S, r1.W, r0.W, u1, u0, H.sets, &rq.rcw.terms.used);
                double s = 0.0;
                for (int i = 0; i < H.ds.n; ++i) s += H.ds.a[i] == 1 ? w1[i] * b.B1[i] : -w0[i] * b.B0[i];
                return s / H.ds.n;
            };
            roots = std::max(roots, std::abs(solve_scalar_root(recon, nullptr, 1e-13) - rq.rcw.theta));
        }
    }
    c.note(std::to_string(used) + " datasets used, " + std::to_string(skipped) + " skipped for capped CAL fits");
    c.check("AIPW = ICE = wKM with calibrated nuisances (ML and CAL weights), 1e-8", prop1 <= 1e-8, "max gap " + fmt(prop1));
    c.check("IPW = wKM with CAL weights, 1e-8", prop1_ipw <= 1e-8, "max gap " + fmt(prop1_ipw));
    c.check("robust wKM variance = augmented sample variance, 1e-8 relative", prop2 <= 1e-8, "max rel " + fmt(prop2));
    c.check("S_CAL,lin = wKM with CAL weights, 1e-8", slin <= 1e-8, "max gap " + fmt(slin));
    c.check("theta_CAL,lin = theta_wBP with CAL weights, 1e-8", tlin <= 1e-8, "max gap " + fmt(tlin));
    c.check("lambda 0: S_RCAL,lin = S_CAL,lin, 1e-8", slin0 <= 1e-8, "max gap " + fmt(slin0));
    c.check("lambda 0: theta_RCw = theta_RCa = theta_CAL,lin, 1e-8", t0 <= 1e-8, "max gap " + fmt(t0));
    c.check("lambda 0: RCa robust variance = CAL,lin robust variance, 1e-8 relative", v0 <= 1e-8, "max rel " + fmt(v0));
    c.check("linearized and direct weighted-only roots agree, 1e-9", roots <= 1e-9 && root_sets >= R / 2,
            "max gap " + fmt(roots) + " over " + std::to_string(root_sets) + " datasets");
    c.check("phi propensity form = outcome-regression form per subject, 1e-10", forms <= 1e-10, "max gap " + fmt(forms));
    c.check("k = 2 expanded forms agree per subject, 1e-10", k2 <= 1e-10 && nk2 > 0,
            "max gap " + fmt(k2) + " over " + std::to_string(nk2) + " datasets");
    c.check("runtime under 1 minute", c.seconds() < 60.0, fmt(c.seconds(), 3) + " s");
    return c.report("AC1");
}

// ---------------------------------------------------------------- 2

bool criterion2() {
    Criterion c("optimization correctness");
    const Prepared P = prepared(3, {1});
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0.0, 1.0);

    // every loss used by the estimators, evaluated at 5 random coefficient vectors
    auto F = std::make_shared<Eigen::MatrixXd>(P.basis.F);
    Eigen::VectorXd gresp(P.ds.n);
    for (int i = 0; i < P.ds.n; ++i) gresp[i] = ud(rng);
    std::vector<std::pair<std::string, GlmProblem>> losses = {
        {"CAL arm 1", cal_problem(P.ds, P.basis, 1)},
        {"CAL arm 0", cal_problem(P.ds, P.basis, 0)},
        {"ML logistic", ml_problem(P.ds, P.basis)},
        {"weighted logistic outcome", GlmProblem(Family::Logistic, F, gresp, Eigen::VectorXd::Constant(P.ds.n, 1.7))},
        {"weighted least squares outcome", GlmProblem(Family::Gaussian, F, gresp, Eigen::VectorXd::Constant(P.ds.n, 0.6))},
    };
    for (const auto& [name, prob] : losses) {
        double worst = 0.0;
        for (int pt = 0; pt < 5; ++pt) {
            Eigen::VectorXd b(prob.dim());
            for (int j = 0; j < b.size(); ++j) b[j] = 0.4 * nd(rng);
            const Eigen::VectorXd fd = ts::fd_gradient([&](const Eigen::VectorXd& v) { return prob.loss(v); }, b);
            worst = std::max(worst, (prob.gradient(b) - fd).norm() / std::max(1e-8, fd.norm()));
        }
        c.check(name + " gradient vs central differences, rel < 1e-6 at 5 points", worst < 1e-6, "max rel " + fmt(worst));
    }

    // L1 stationarity for the penalized propensity and outcome losses
    double kkt = 0.0;
    const Prepared Q = prepared(11, {1});
    for (const GlmProblem& prob : {cal_problem(Q.ds, Q.basis, 1), cal_problem(Q.ds, Q.basis, 0), ml_problem(Q.ds, Q.basis)}) {
        const double lmax = lambda_max(prob);
        for (double frac : {0.5, 0.1, 0.02}) {
            const double lam = frac * lmax;
            const SolverResult r = coordinate_descent_l1(prob, lam, Eigen::VectorXd::Zero(prob.dim()));
            kkt = std::max(kkt, kkt_residual(prob.gradient(r.x), r.x, prob.penalized, lam));
            LassoOptions lo;
            lo.standardize = false;
            lo.solver.tol = 1e-9;
            const SolverResult lf = lasso_fit(prob, lam, lo);
            kkt = std::max(kkt, kkt_residual(prob.gradient(lf.x), lf.x, prob.penalized, lam));
        }
    }
    c.check("L1 KKT residuals <= 1e-7", kkt <= 1e-7, "max " + fmt(kkt));

    // weighted least squares against the SVD pseudo-inverse, including a duplicated column
    double wls = 0.0;
    for (int rep = 0; rep < 3; ++rep) {
        const int n = 80, m = 4;
        Eigen::MatrixXd X(n, m);
        Eigen::VectorXd y(n), w(n);
        for (int i = 0; i < n; ++i) {
            X(i, 0) = 1.0;
            for (int j = 1; j < m; ++j) X(i, j) = nd(rng);
            if (rep == 2) X(i, 3) = X(i, 1);
            y[i] = X.row(i).sum() + nd(rng);
            w[i] = 0.2 + ud(rng);
        }
        std::vector<int> all(n);
        for (int i = 0; i < n; ++i) all[i] = i;
        wls = std::max(wls, (weighted_least_squares(y, X, w, all).coef - ts::pinv_wls(X, y, w)).lpNorm<Eigen::Infinity>());
    }
    c.check("weighted least squares = pseudo-inverse, 1e-6", wls <= 1e-6, "max gap " + fmt(wls));

    // weighted logistic with fractional responses against an independent Newton iteration
    double logit = 0.0;
    for (int rep = 0; rep < 3; ++rep) {
        const int n = 120;
        Eigen::MatrixXd X(n, 3);
        Eigen::VectorXd y(n), w(n);
        for (int i = 0; i < n; ++i) {
            X(i, 0) = 1.0;
            X(i, 1) = nd(rng);
            X(i, 2) = nd(rng);
            const double p = ts::expit(0.2 - 0.6 * X(i, 1) + 0.4 * X(i, 2));
            y[i] = rep == 2 ? p : (ud(rng) < p ? 1.0 : 0.0);
            w[i] = 0.3 + ud(rng);
        }
        Eigen::VectorXd a = Eigen::VectorXd::Zero(3);
        for (int it = 0; it < 60; ++it) {
            Eigen::MatrixXd Hm = Eigen::MatrixXd::Zero(3, 3);
            Eigen::VectorXd g = Eigen::VectorXd::Zero(3);
            for (int i = 0; i < n; ++i) {
                const double p = ts::expit(X.row(i).dot(a));
                Hm += w[i] * p * (1 - p) * X.row(i).transpose() * X.row(i);
                g += w[i] * (y[i] - p) * X.row(i).transpose();
            }
            a += Hm.ldlt().solve(g);
        }
        std::vector<int> all(n);
        for (int i = 0; i < n; ++i) all[i] = i;
        logit = std::max(logit, (weighted_logistic_fit(y, X, w, all).coef - a).lpNorm<Eigen::Infinity>());
    }
    c.check("weighted logistic fit = Newton oracle, 1e-6", logit <= 1e-6, "max gap " + fmt(logit));
    c.check("runtime in seconds", c.seconds() < 60.0, fmt(c.seconds(), 3) + " s");
    return c.report("AC2");
}

// ---------------------------------------------------------------- 3

bool criterion3(std::uint64_t seed) {
    Criterion c("oracle truths by Monte Carlo (1e5 draws x 20 repeats)");
    OracleOptions o;
    o.draws = 100000;
    o.repeats = 20;
    const std::vector<int> times{60, 90, 120};
    const OracleResult c1 = oracle_truth(CovCase::C1, times, seed, o);
    const std::vector<double> s1{0.525, 0.405, 0.322}, s0{0.608, 0.441, 0.324};
    for (size_t j = 0; j < times.size(); ++j) {
        c.check("C1 S1(" + std::to_string(times[j]) + ") = " + fmt(s1[j], 3) + " +- 0.005",
                std::abs(c1.S1[j] - s1[j]) <= 0.005, "got " + fmt(c1.S1[j]) + ", se " + fmt(c1.S1_se(j), 2));
        c.check("C1 S0(" + std::to_string(times[j]) + ") = " + fmt(s0[j], 3) + " +- 0.005",
                std::abs(c1.S0[j] - s0[j]) <= 0.005, "got " + fmt(c1.S0[j]) + ", se " + fmt(c1.S0_se(j), 2));
    }
    c.check("C1 theta = 0.068 +- 0.005", std::abs(c1.theta - 0.068) <= 0.005,
            "got " + fmt(c1.theta) + ", se " + fmt(c1.theta_se(), 2));
    const OracleResult c2 = oracle_truth(CovCase::C2, times, seed + 1, o);
    c.check("C2 theta = 0.065 +- 0.005", std::abs(c2.theta - 0.065) <= 0.005,
            "got " + fmt(c2.theta) + ", se " + fmt(c2.theta_se(), 2));
    c.check("runtime under 5 minutes", c.seconds() < 300.0, fmt(c.seconds(), 3) + " s");
    return c.report("AC3");
}

// ---------------------------------------------------------------- 4 and 5

const SummaryRow* find_row(const ReplicationSummary& s, const std::string& est, int time) {
    for (const auto& r : s.rows)
        if (r.estimator == est && r.time == time) return &r;
    return nullptr;
}

std::string row_text(const SummaryRow& r) {
    return "bias " + fmt(r.bias, 3) + ", sqrtVar " + fmt(r.sd, 3) + ", sqrtEVar " + fmt(r.sqrt_evar, 3) + ", Cov95 " +
           fmt(r.cov95, 3) + ", L95 " + fmt(r.len95, 3) + ", failed " + std::to_string(r.n_failed);
}

bool in(double v, double lo, double hi) { return v >= lo && v <= hi; }

ReplicationSummary desk_run(std::uint64_t seed, double* seconds) {
    ScenarioConfig cfg;
    cfg.cov = CovCase::C1;
    cfg.p = 10;
    cfg.n = 1000;
    cfg.reps = 200;
    cfg.seed = seed;
    cfg.arm = 1;
    cfg.times = {60, 90, 120};
    cfg.estimators = {"KM", "wKM", "CAL", "CAL_lin", "BP", "wBP", "tCAL"};
    const auto t0 = std::chrono::steady_clock::now();
    ReplicationSummary s = run_replications(cfg, load_reference_table(default_reference_path()));
    *seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return s;
}

bool criterion4(const ReplicationSummary& s, double seconds) {
    Criterion c("survival replication (C1, p 10, n 1000, 200 reps)");
    const SummaryRow* km = find_row(s, "KM", 60);
    const SummaryRow* wkm = find_row(s, "wKM", 60);
    const SummaryRow* cal = find_row(s, "CAL", 60);
    const SummaryRow* lin = find_row(s, "CAL_lin", 60);
    if (!km || !wkm || !cal || !lin) {
        c.check("summary rows present", false);
        return c.report("AC4");
    }
    c.check("KM bias at 60 in [0.020, 0.040]", in(km->bias, 0.020, 0.040), row_text(*km));
    c.check("KM Cov95 at 60 < 0.85", km->cov95 < 0.85, "Cov95 " + fmt(km->cov95, 3));
    c.check("wKM bias at 60 in [-0.008, 0.008]", in(wkm->bias, -0.008, 0.008), row_text(*wkm));
    c.check("CAL bias at 60 in [-0.008, 0.008]", in(cal->bias, -0.008, 0.008), row_text(*cal));
    c.check("CAL_lin bias at 60 in [-0.008, 0.008]", in(lin->bias, -0.008, 0.008), row_text(*lin));
    c.check("CAL Cov95 at 60 in [0.91, 0.98]", in(cal->cov95, 0.91, 0.98), "Cov95 " + fmt(cal->cov95, 3));
    c.check("CAL L95 < wKM L95 at 60", cal->len95 < wkm->len95, fmt(cal->len95, 4) + " vs " + fmt(wkm->len95, 4));
    c.check("every replication succeeded", km->n_failed + wkm->n_failed + cal->n_failed + lin->n_failed == 0);
    c.check("runtime at most 10 minutes (shared with AC5)", seconds <= 600.0, fmt(seconds, 4) + " s");
    return c.report("AC4");
}

bool criterion5(const ReplicationSummary& s, double seconds) {
    Criterion c("hazard-ratio replication (C1, p 10, n 1000, 200 reps)");
    const SummaryRow* bp = find_row(s, "BP", -1);
    const SummaryRow* wbp = find_row(s, "wBP", -1);
    const SummaryRow* tcal = find_row(s, "tCAL", -1);
    if (!bp || !wbp || !tcal) {
        c.check("summary rows present", false);
        return c.report("AC5");
    }
    c.check("BP bias in [-0.22, -0.16]", in(bp->bias, -0.22, -0.16), row_text(*bp));
    c.check("wBP bias in [-0.02, 0.02]", in(wbp->bias, -0.02, 0.02), row_text(*wbp));
    c.check("wBP sqrtEVar - sqrtVar >= 0.008", wbp->sqrt_evar - wbp->sd >= 0.008, "gap " + fmt(wbp->sqrt_evar - wbp->sd, 3));
    c.check("CAL Cov95 in [0.90, 0.98]", in(tcal->cov95, 0.90, 0.98), row_text(*tcal));
    c.check("CAL sqrtEVar within 0.006 of sqrtVar", std::abs(tcal->sqrt_evar - tcal->sd) <= 0.006,
            "gap " + fmt(tcal->sqrt_evar - tcal->sd, 3));
    c.check("every replication succeeded", bp->n_failed + wbp->n_failed + tcal->n_failed == 0);
    c.check("runtime at most 10 minutes (shared with AC4)", seconds <= 600.0, fmt(seconds, 4) + " s");
    return c.report("AC5");
}

// ---------------------------------------------------------------- 6

bool criterion6(std::uint64_t seed) {
    Criterion c("high-dimensional spot check (C1, p 200, n 1000, 50 reps, CV penalties) [slow]");
    ScenarioConfig cfg;
    cfg.cov = CovCase::C1;
    cfg.p = 200;
    cfg.n = 1000;
    cfg.reps = 50;
    cfg.seed = seed;
    cfg.arm = 1;
    cfg.times = {60};
    cfg.lambda_policy = "cv";
    cfg.estimators = {"wKM_RML", "RCAL", "RCw", "RCa"};
    const ReplicationSummary s = run_replications(cfg, load_reference_table(default_reference_path()));
    const SummaryRow* rca = find_row(s, "RCa", -1);
    const SummaryRow* rcw = find_row(s, "RCw", -1);
    const SummaryRow* rcal = find_row(s, "RCAL", 60);
    const SummaryRow* rml = find_row(s, "wKM_RML", 60);
    if (!rca || !rcw || !rcal || !rml) {
        c.check("summary rows present", false);
        return c.report("AC6");
    }
    c.note("RCa " + row_text(*rca));
    c.note("RCw " + row_text(*rcw));
    c.note("RCAL(60) " + row_text(*rcal));
    c.note("wKM_RML(60) " + row_text(*rml));
    c.check("|bias RCa| < |bias RCw|", std::abs(rca->bias) < std::abs(rcw->bias));
    c.check("|bias RCAL(60)| < |bias wKM_RML(60)|", std::abs(rcal->bias) < std::abs(rml->bias));
    c.check("RCa bias within 0.04 of -0.042", std::abs(rca->bias + 0.042) <= 0.04, "bias " + fmt(rca->bias, 3));
    c.check("every replication succeeded", rca->n_failed + rcw->n_failed + rcal->n_failed + rml->n_failed == 0);
    c.check("runtime at most 60 minutes", c.seconds() <= 3600.0, fmt(c.seconds(), 4) + " s");
    return c.report("AC6");
}

// ---------------------------------------------------------------- 7

struct CliRun {
    int code;
    std::string out, err;
};

CliRun cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

// Runs f and reports whether it returned normally or raised one of the library's errors.
bool no_panic(const std::function<void()>& f, std::string* how) {
    try {
        f();
        *how = "returned";
    } catch (const validation_error& e) {
        *how = std::string("validation_error: ") + e.what();
    } catch (const numerical_error& e) {
        *how = std::string("numerical_error: ") + e.what();
    } catch (const std::exception& e) {
        *how = std::string("unexpected exception: ") + e.what();
        return false;
    }
    return true;
}

bool criterion7() {
    Criterion c("property suite");
    bool mono = true, inv = true, swap = true;
    double inv_gap = 0.0, swap_gap = 0.0;
    for (int r = 0; r < 20; ++r) {
        const Prepared P = prepared(r + 100, {1});
        const Eigen::VectorXd w = fit_ps_ml(P.ds, P.basis).weights(1);
        const SurvivalFit f = km(P.ds, P.sets, 1, &w);
        for (int k = 1; k <= P.sets.K; ++k) mono = mono && f.S[k] <= f.S[k - 1];
        const Eigen::VectorXd w5 = 5.5 * w;
        const SurvivalFit g = km(P.ds, P.sets, 1, &w5);
        inv_gap = std::max({inv_gap, ts::max_abs_diff(f.S, g.S), ts::max_abs_diff(f.q, g.q)});

        const Prepared H = prepared(r + 100, {0, 1});
        std::vector<int> a(H.ds.n);
        for (int i = 0; i < H.ds.n; ++i) a[i] = 1 - H.ds.a[i];
        const SurvivalDataset sw = make_dataset(H.ds.y, H.ds.delta, a, H.ds.x);
        const CovariateBasis sb = design_matrix(sw);
        const RiskEventSets ss = risk_event_sets(sw, build_time_grid(sw, {0, 1}));
        const FittedPS p = fit_ps_ml(H.ds, H.basis), q = fit_ps_ml(sw, sb);
        swap_gap = std::max(swap_gap, std::abs(theta_wbp(H.ds, H.sets, p).theta + theta_wbp(sw, ss, q).theta));
    }
    inv = inv_gap <= 1e-12;
    swap = swap_gap <= 1e-8;
    c.check("weighted KM is non-increasing in k (20 datasets)", mono);
    c.check("q and weighted KM invariant to weight rescaling", inv, "max gap " + fmt(inv_gap));
    c.check("swapping arms negates theta_wBP", swap, "max |sum| " + fmt(swap_gap));

    // determinism of every command under a fixed seed, byte for byte
    const std::filesystem::path dir = std::filesystem::temp_directory_path() / "calsurv_acceptance";
    std::filesystem::create_directories(dir);
    const std::string csv = (dir / "data.csv").string();
    {
        const SurvivalDataset ds = ts::random_dataset(77, 180, 3);
        std::ofstream f(csv);
        f.precision(17);
        f << "time,event,treat,x1,x2,x3\n";
        for (int i = 0; i < ds.n; ++i)
            f << ds.y[i] << "," << ds.delta[i] << "," << ds.a[i] << "," << ds.x(i, 0) << "," << ds.x(i, 1) << ","
              << ds.x(i, 2) << "\n";
    }
    const std::vector<std::vector<std::string>> commands = {
        {"survival", "--data", csv, "--estimator", "rcal"},
        {"survival", "--data", csv, "--estimator", "wkm", "--ps", "rml", "--arm", "0"},
        {"hazard", "--data", csv, "--estimator", "rca"},
        {"hazard", "--data", csv, "--estimator", "cal"},
        {"balance", "--data", csv, "--ps", "rcal"},
        {"simulate", "--seed", "9", "--n", "200", "--reps", "2", "--p", "12", "--estimators", "RCAL,RCa,wBP"},
        {"oracle", "--seed", "9", "--draws", "2000", "--repeats", "2"},
    };
    for (const auto& cmd : commands) {
        const CliRun a = cli(cmd), b = cli(cmd);
        c.check("deterministic: " + cmd[0] + " " + cmd[cmd.size() - 1], a.code == 0 && a.out == b.out && !a.out.empty(),
                "exit " + std::to_string(a.code));
    }

    // degenerate inputs: flagged results or typed errors, never a crash
    std::string how;
    {
        const SurvivalDataset ds = make_dataset({1, 3, 4, 1, 2}, {1, 1, 1, 0, 1}, {1, 1, 1, 0, 0}, Eigen::MatrixXd::Zero(5, 1));
        const RiskEventSets s = risk_event_sets(ds, build_time_grid(ds, {1}));
        SurvivalFit f;
        const bool ok = no_panic([&] { f = km(ds, s, 0); }, &how);
        c.check("empty risk set in a KM curve is flagged", ok && !f.flags.empty() && f.missing.back(), how);
    }
    {
        const SurvivalDataset ds = make_dataset({1, 2, 3, 1, 1}, {1, 1, 1, 1, 0}, {1, 1, 1, 0, 0}, Eigen::MatrixXd::Zero(5, 1));
        const RiskEventSets s = risk_event_sets(ds, build_time_grid(ds, {1}));
        ThetaFit f;
        const bool ok = no_panic([&] { f = theta_bp(ds, s); }, &how);
        c.check("hazard ratio with an emptied comparison risk set drops and flags periods", ok && f.terms.dropped > 0 && !f.flags.empty(), how);
    }
    {
        const SurvivalDataset ds = make_dataset({1, 2, 1, 2}, {1, 1, 0, 0}, {1, 1, 0, 0}, Eigen::MatrixXd::Zero(4, 1));
        const bool ok = no_panic([&] { build_time_grid(ds, {0}); }, &how);
        c.check("arm without events raises a typed error", ok && how != "returned", how);
    }
    {
        const std::string p = (dir / "noevents.csv").string();
        std::ofstream(p) << "time,event,treat,x1\n1,0,1,0.1\n2,0,1,0.5\n3,0,0,0.2\n2,0,0,0.9\n";
        for (const std::string cmd : {"survival", "hazard", "balance"}) {
            const CliRun r = cli({cmd, "--data", p});
            c.check("CLI " + cmd + " on data without events exits cleanly with a message",
                    (r.code == cli::kExitValidation || r.code == cli::kExitNumerical || r.code == 0) && (r.code == 0 || !r.err.empty()),
                    "exit " + std::to_string(r.code));
        }
    }
    {
        Eigen::MatrixXd x(6, 1);
        x << 0, 0, 0, 1, 1, 1;
        // treatment perfectly separated by the covariate
        const SurvivalDataset ds = make_dataset({1, 2, 3, 1, 2, 3}, {1, 1, 0, 1, 0, 1}, {1, 1, 1, 0, 0, 0}, x);
        const CovariateBasis b = design_matrix(ds);
        FittedPS ps;
        const bool ok = no_panic([&] { ps = fit_ps_ml(ds, b); }, &how);
        c.check("separated treatment assignment is capped and flagged or rejected", ok && (how != "returned" || !ps.flags.empty()), how);
    }
    return c.report("AC7");
}

} // namespace

int main(int argc, char** argv) {
    std::set<int> which;
    for (int i = 1; i < argc; ++i) which.insert(std::atoi(argv[i]));
    if (which.empty()) which = {1, 2, 3, 4, 5, 6, 7};
    const std::uint64_t seed = 20240601;
    bool all = true;
    if (which.count(1)) all &= criterion1();
    if (which.count(2)) all &= criterion2();
    if (which.count(3)) all &= criterion3(seed);
    if (which.count(4) || which.count(5)) {
        double seconds = 0.0;
        const ReplicationSummary s = desk_run(seed, &seconds);
        if (which.count(4)) all &= criterion4(s, seconds);
        if (which.count(5)) all &= criterion5(s, seconds);
    }
    if (which.count(6)) all &= criterion6(seed);
    if (which.count(7)) all &= criterion7();
    std::printf("%s\n", all ? "ACCEPTANCE: all selected criteria PASS" : "ACCEPTANCE: at least one criterion FAILED");
    return all ? 0 : 1;
}
