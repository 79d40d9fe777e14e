#include "calsurv/propensity.hpp"

#include <cmath>
#include <memory>

namespace calsurv {

std::string to_string(PsMethod m) {
    switch (m) {
    case PsMethod::ML: return "ML";
    case PsMethod::CAL: return "CAL";
    case PsMethod::RML: return "RML";
    case PsMethod::RCAL: return "RCAL";
    }
    return "?";
}

Eigen::VectorXd FittedPS::weights(int a) const {
    // 1/pi = 1 + exp(-eta) and 1/(1 - pi) = 1 + exp(eta), without cancellation.
    if (a == 1) return (1.0 + (-eta.array()).exp()).matrix();
    return (1.0 + eta.array().exp()).matrix();
}

namespace {

void check_arms(const SurvivalDataset& ds) {
    if (ds.count_arm(0) == 0 || ds.count_arm(1) == 0)
        throw validation_error("propensity fit needs subjects in both arms");
}

std::shared_ptr<const Eigen::MatrixXd> share(const CovariateBasis& basis) {
    return std::make_shared<const Eigen::MatrixXd>(basis.F);
}

FittedPS finish(const CovariateBasis& basis, PsMethod method, int arm, Eigen::VectorXd gamma,
                double lambda, bool capped) {
    FittedPS ps;
    ps.method = method;
    ps.arm = arm;
    ps.gamma = std::move(gamma);
    ps.eta = basis.F * ps.gamma;
    ps.pi = ps.eta.unaryExpr([](double e) { return expit(e); });
    ps.lambda = lambda;
    ps.capped = capped;
    ps.names = basis.names;
    if (capped) {
        int jmax = 0;
        ps.gamma.cwiseAbs().maxCoeff(&jmax);
        ps.flags.push_back("separation: coefficients capped at 30, largest on column " +
                           basis.names[jmax]);
    }
    return ps;
}

} // namespace

GlmProblem ml_problem(const SurvivalDataset& ds, const CovariateBasis& basis) {
    Eigen::VectorXd r(ds.n);
    for (int i = 0; i < ds.n; ++i) r[i] = ds.a[i];
    return GlmProblem(Family::Logistic, share(basis), r, Eigen::VectorXd::Ones(ds.n));
}

GlmProblem cal_problem(const SurvivalDataset& ds, const CovariateBasis& basis, int arm) {
    Eigen::VectorXd t(ds.n);
    for (int i = 0; i < ds.n; ++i) t[i] = (ds.a[i] == arm) ? 1.0 : 0.0;
    return GlmProblem(Family::CalExp, share(basis), t, Eigen::VectorXd::Ones(ds.n));
}

FittedPS fit_ps_ml(const SurvivalDataset& ds, const CovariateBasis& basis, const PsOptions& opt) {
    check_arms(ds);
    SolverOptions so;
    so.coef_cap = opt.coef_cap;
    auto fit = minimize_convex(ml_problem(ds, basis).as_problem("logistic likelihood"),
                               Eigen::VectorXd::Zero(basis.m()), so);
    return finish(basis, PsMethod::ML, -1, fit.x, 0.0, fit.capped);
}

FittedPS fit_ps_cal(const SurvivalDataset& ds, const CovariateBasis& basis, int arm,
                    const PsOptions& opt) {
    check_arms(ds);
    const FittedPS ml = fit_ps_ml(ds, basis, opt);
    // Arm 0 is the arm-1 loss with A -> 1 - A, solved in the flipped parametrization.
    const double sign = (arm == 1) ? 1.0 : -1.0;
    SolverOptions so;
    so.coef_cap = opt.coef_cap;
    so.tol = 1e-12; // calibration equations are used as exact identities downstream
    const std::string name = "calibration loss (arm " + std::to_string(arm) + ")";
    SolverResult fit;
    try {
        fit = minimize_convex(cal_problem(ds, basis, arm).as_problem(name), sign * ml.gamma, so);
    } catch (const numerical_error&) {
        fit = minimize_convex(cal_problem(ds, basis, arm).as_problem(name),
                              Eigen::VectorXd::Zero(basis.m()), so);
    }
    return finish(basis, PsMethod::CAL, arm, sign * fit.x, 0.0, fit.capped);
}

FittedPS fit_ps_rcal(const SurvivalDataset& ds, const CovariateBasis& basis, int arm,
                     const PsOptions& opt) {
    check_arms(ds);
    if (opt.lambda == 0.0) {
        // No penalty: the exact calibration solution, so downstream identities hold to rounding.
        FittedPS ps = fit_ps_cal(ds, basis, arm, opt);
        ps.method = PsMethod::RCAL;
        ps.lambda = 0.0;
        return ps;
    }
    const double sign = (arm == 1) ? 1.0 : -1.0;
    GlmProblem prob = cal_problem(ds, basis, arm);
    LassoOptions lo = opt.lasso;
    lo.solver.coef_cap = opt.coef_cap;
    FittedPS ps;
    if (opt.lambda < 0) {
        auto folds = make_folds(ds.a, lo.n_folds, lo.seed);
        CvResult cv = cross_validate_lambda(prob, folds, lo);
        ps = finish(basis, PsMethod::RCAL, arm, sign * cv.coef, cv.lambda, false);
        ps.path = std::move(cv.path);
    } else {
        auto fit = lasso_fit(prob, opt.lambda, lo);
        ps = finish(basis, PsMethod::RCAL, arm, sign * fit.x, opt.lambda, fit.capped);
    }
    return ps;
}

FittedPS fit_ps_rml(const SurvivalDataset& ds, const CovariateBasis& basis, const PsOptions& opt) {
    check_arms(ds);
    GlmProblem prob = ml_problem(ds, basis);
    LassoOptions lo = opt.lasso;
    lo.solver.coef_cap = opt.coef_cap;
    FittedPS ps;
    if (opt.lambda < 0) {
        auto folds = make_folds(ds.a, lo.n_folds, lo.seed);
        CvResult cv = cross_validate_lambda(prob, folds, lo);
        ps = finish(basis, PsMethod::RML, -1, cv.coef, cv.lambda, false);
        ps.path = std::move(cv.path);
    } else {
        auto fit = lasso_fit(prob, opt.lambda, lo);
        ps = finish(basis, PsMethod::RML, -1, fit.x, opt.lambda, fit.capped);
    }
    return ps;
}

Eigen::VectorXd calibration_residuals(const SurvivalDataset& ds, const CovariateBasis& basis,
                                      const FittedPS& ps, int arm) {
    const Eigen::VectorXd w = ps.weights(arm);
    Eigen::VectorXd c(ds.n);
    for (int i = 0; i < ds.n; ++i) c[i] = (ds.a[i] == arm ? w[i] : 0.0) - 1.0;
    return basis.F.transpose() * c / static_cast<double>(ds.n);
}

BalanceReport covariate_balance(const SurvivalDataset& ds, const CovariateBasis& basis,
                                const FittedPS* ps1, const FittedPS* ps0, double threshold) {
    const int n = ds.n;
    const Eigen::VectorXd w1 = ps1 ? ps1->weights(1) : Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd w0 = ps0 ? ps0->weights(0) : Eigen::VectorXd::Ones(n);
    BalanceReport rep;
    bool first = true;
    for (int j = 0; j < basis.m(); ++j) {
        if (basis.terms[j].j < 0) continue;
        const Eigen::VectorXd x = basis.F.col(j);
        double s1 = 0, s0 = 0, q1 = 0, q0 = 0, m1 = 0, m0 = 0;
        for (int i = 0; i < n; ++i) {
            if (ds.a[i] == 1) {
                s1 += w1[i];
                q1 += w1[i] * w1[i];
                m1 += w1[i] * x[i];
            } else {
                s0 += w0[i];
                q0 += w0[i] * w0[i];
                m0 += w0[i] * x[i];
            }
        }
        m1 /= s1;
        m0 /= s0;
        double v1 = 0, v0 = 0;
        for (int i = 0; i < n; ++i) {
            if (ds.a[i] == 1)
                v1 += w1[i] * (x[i] - m1) * (x[i] - m1);
            else
                v0 += w0[i] * (x[i] - m0) * (x[i] - m0);
        }
        v1 /= (s1 - q1 / s1);
        v0 /= (s0 - q0 / s0);
        const double sd = std::sqrt(0.5 * (v1 + v0));
        const double d = std::abs(m1 - m0);
        const bool degenerate = !(sd > 0) || !std::isfinite(sd);
        const double r = degenerate ? 0.0 : d / sd;
        rep.names.push_back(basis.names[j]);
        rep.mean1.push_back(m1);
        rep.mean0.push_back(m0);
        rep.diff.push_back(d);
        rep.sd.push_back(sd);
        rep.rel.push_back(r);
        rep.degenerate.push_back(degenerate);
        if (r > threshold) ++rep.imbalanced;
        rep.min_rel = first ? r : std::min(rep.min_rel, r);
        rep.max_rel = first ? r : std::max(rep.max_rel, r);
        first = false;
    }
    return rep;
}

} // namespace calsurv
