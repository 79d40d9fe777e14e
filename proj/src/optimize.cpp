#include "calsurv/optimize.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace calsurv {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 60;

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

double sup_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double soft_threshold(double u, double t) {
    if (u > t) return u - t;
    if (u < -t) return u + t;
    return 0.0;
}

double penalty(const Eigen::VectorXd& x, const std::vector<char>& pen) {
    double s = 0.0;
    for (int j = 0; j < x.size(); ++j)
        if (pen[j]) s += std::abs(x[j]);
    return s;
}

bool clamp_to_cap(Eigen::VectorXd& x, double cap) {
    if (cap <= 0.0 || sup_norm(x) <= cap) return false;
    x = x.cwiseMax(-cap).cwiseMin(cap);
    return true;
}

std::vector<char> default_penalized(int m) {
    std::vector<char> pen(m, 1);
    if (m > 0) pen[0] = 0;
    return pen;
}

} // namespace

double expit(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

SolverResult minimize_convex(const ConvexProblem& prob, const Eigen::VectorXd& init,
                             const SolverOptions& opt) {
    SolverResult res;
    Eigen::VectorXd x = init;
    if (!all_finite(x)) throw numerical_error(prob.name + ": non-finite starting point");
    double f = prob.loss(x);
    if (!std::isfinite(f)) throw numerical_error(prob.name + ": loss not finite at starting point");
    for (int it = 0; it < opt.max_iter; ++it) {
        const Eigen::VectorXd g = prob.gradient(x);
        const double gn = sup_norm(g);
        res.iterations = it;
        res.residual = gn;
        if (gn <= opt.tol) {
            res.x = x;
            return res;
        }
        Eigen::VectorXd d = -g;
        if (prob.hessian) {
            Eigen::MatrixXd H = prob.hessian(x);
            const double scale = std::max(H.diagonal().cwiseAbs().maxCoeff(), 1e-300);
            double ridge = 0.0;
            for (int attempt = 0; attempt < 8; ++attempt) {
                Eigen::MatrixXd Hr = H;
                if (ridge > 0) Hr.diagonal().array() += ridge;
                Eigen::LDLT<Eigen::MatrixXd> ldlt(Hr);
                if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
                    Eigen::VectorXd nd = ldlt.solve(-g);
                    if (all_finite(nd) && nd.dot(g) < 0) {
                        d = nd;
                        break;
                    }
                }
                ridge = (ridge == 0.0) ? 1e-12 * scale : ridge * 100.0;
            }
        }
        const double slope = g.dot(d);
        double t = 1.0;
        bool accepted = false;
        Eigen::VectorXd xn;
        double fn = f;
        for (int h = 0; h < kMaxHalvings; ++h, t *= 0.5) {
            if (f + kArmijo * t * slope == f) break; // predicted decrease below rounding
            xn = x + t * d;
            fn = prob.loss(xn);
            if (std::isfinite(fn) && fn <= f + kArmijo * t * slope) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            // Near the optimum the loss change drowns in rounding; accept the full step
            // when it still clearly reduces the gradient.
            xn = x + d;
            fn = prob.loss(xn);
            if (!std::isfinite(fn) || sup_norm(prob.gradient(xn)) > 0.5 * gn) {
                if (gn <= 1e4 * opt.tol) {
                    res.x = x;
                    return res;
                }
                throw numerical_error(prob.name + ": line search failed with gradient norm " +
                                      std::to_string(gn));
            }
        }
        if (clamp_to_cap(xn, opt.coef_cap)) {
            res.x = xn;
            res.capped = true;
            res.residual = sup_norm(prob.gradient(xn));
            return res;
        }
        if (opt.coef_cap <= 0.0 && sup_norm(xn) > 1e8)
            throw numerical_error(prob.name + ": coefficients diverging, loss unbounded below");
        x = xn;
        f = fn;
    }
    throw numerical_error(prob.name + ": iteration cap reached with gradient norm " +
                          std::to_string(sup_norm(prob.gradient(x))));
}

double kkt_residual(const Eigen::VectorXd& grad, const Eigen::VectorXd& x,
                    const std::vector<char>& penalized, double lambda) {
    double r = 0.0;
    for (int j = 0; j < x.size(); ++j) {
        double v;
        if (!penalized[j]) {
            v = std::abs(grad[j]);
        } else if (x[j] != 0.0) {
            v = std::abs(grad[j] + lambda * (x[j] > 0 ? 1.0 : -1.0));
        } else {
            v = std::max(0.0, std::abs(grad[j]) - lambda);
        }
        r = std::max(r, v);
    }
    return r;
}

SolverResult coordinate_descent_l1(const ConvexProblem& prob, double lambda,
                                   const Eigen::VectorXd& init, SolverOptions opt) {
    if (lambda < 0) throw validation_error("penalty must be nonnegative");
    if (!prob.hessian) throw validation_error(prob.name + ": L1 solver needs a Hessian");
    const int m = prob.dim;
    std::vector<char> pen = prob.penalized.empty() ? default_penalized(m) : prob.penalized;
    auto objective = [&](const Eigen::VectorXd& b) { return prob.loss(b) + lambda * penalty(b, pen); };
    SolverResult res;
    Eigen::VectorXd x = init;
    double P = objective(x);
    if (!std::isfinite(P)) throw numerical_error(prob.name + ": loss not finite at starting point");
    for (int it = 0; it < opt.max_iter; ++it) {
        const Eigen::VectorXd g = prob.gradient(x);
        const double kkt = kkt_residual(g, x, pen, lambda);
        res.iterations = it;
        res.residual = kkt;
        if (kkt <= opt.tol) {
            res.x = x;
            return res;
        }
        const Eigen::MatrixXd H = prob.hessian(x);
        Eigen::VectorXd z = x;
        Eigen::VectorXd Hd = Eigen::VectorXd::Zero(m);
        for (int sweep = 0; sweep < 10000; ++sweep) {
            double maxd = 0.0;
            for (int j = 0; j < m; ++j) {
                const double h = H(j, j);
                if (h <= 0) continue;
                const double gj = g[j] + Hd[j];
                const double u = z[j] - gj / h;
                const double nz = pen[j] ? soft_threshold(u, lambda / h) : u;
                const double dz = nz - z[j];
                if (dz != 0.0) {
                    Hd += dz * H.col(j);
                    z[j] = nz;
                    maxd = std::max(maxd, std::abs(dz) * std::sqrt(h));
                }
            }
            if (maxd < 1e-15) break;
        }
        const Eigen::VectorXd dir = z - x;
        const double decrease = g.dot(dir) + lambda * (penalty(z, pen) - penalty(x, pen));
        double t = 1.0;
        bool accepted = false;
        Eigen::VectorXd xn;
        double Pn = P;
        for (int h = 0; h < kMaxHalvings; ++h, t *= 0.5) {
            if (P + kArmijo * t * decrease == P) break;
            xn = x + t * dir;
            Pn = objective(xn);
            if (std::isfinite(Pn) && Pn <= P + kArmijo * t * decrease) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            xn = z;
            Pn = objective(xn);
            if (!std::isfinite(Pn) || kkt_residual(prob.gradient(xn), xn, pen, lambda) >= kkt) {
                if (kkt <= 1e4 * opt.tol) {
                    res.x = x;
                    return res;
                }
                throw numerical_error(prob.name + ": L1 line search failed with KKT residual " +
                                      std::to_string(kkt));
            }
        }
        if (clamp_to_cap(xn, opt.coef_cap)) {
            res.x = xn;
            res.capped = true;
            return res;
        }
        x = xn;
        P = Pn;
    }
    throw numerical_error(prob.name + ": iteration cap reached in L1 solver");
}

GlmProblem::GlmProblem(Family family, std::shared_ptr<const Eigen::MatrixXd> F,
                       Eigen::VectorXd response, Eigen::VectorXd weights, double scale)
    : family_(family), F_(std::move(F)), r_(std::move(response)), c_(std::move(weights)),
      scale_(scale) {
    if (!F_) throw validation_error("design matrix missing");
    if (r_.size() != F_->rows() || c_.size() != F_->rows())
        throw validation_error("response/weight length does not match design rows");
    if (F_->rows() == 0) throw validation_error("problem has no rows");
    if ((c_.array() < 0).any() || !c_.allFinite())
        throw validation_error("observation weights must be finite and nonnegative");
    if (scale_ <= 0) scale_ = 1.0 / static_cast<double>(F_->rows());
    penalized = default_penalized(static_cast<int>(F_->cols()));
}

double GlmProblem::eval_eta(const Eigen::VectorXd& eta, Eigen::VectorXd* d1,
                            Eigen::VectorXd* d2) const {
    const int n = rows();
    if (d1) d1->resize(n);
    if (d2) d2->resize(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double c = c_[i];
        const double e = eta[i];
        const double r = r_[i];
        double l = 0, g = 0, h = 0;
        if (c != 0.0) {
            switch (family_) {
            case Family::CalExp: {
                const double ex = (r != 0.0) ? std::exp(-e) : 0.0;
                l = c * (r * ex + (1.0 - r) * e);
                g = c * (-r * ex + (1.0 - r));
                h = c * r * ex;
                break;
            }
            case Family::Logistic: {
                const double pr = expit(e);
                l = c * (softplus(e) - r * e);
                g = c * (pr - r);
                h = c * pr * (1.0 - pr);
                break;
            }
            case Family::Gaussian: {
                const double res = r - e;
                l = 0.5 * c * res * res;
                g = -c * res;
                h = c;
                break;
            }
            }
        }
        total += l;
        if (d1) (*d1)[i] = scale_ * g;
        if (d2) (*d2)[i] = scale_ * h;
    }
    return scale_ * total;
}

double GlmProblem::loss(const Eigen::VectorXd& coef) const {
    return eval_eta(*F_ * coef, nullptr, nullptr);
}

Eigen::VectorXd GlmProblem::gradient(const Eigen::VectorXd& coef) const {
    Eigen::VectorXd d1;
    eval_eta(*F_ * coef, &d1, nullptr);
    return F_->transpose() * d1;
}

Eigen::MatrixXd GlmProblem::hessian(const Eigen::VectorXd& coef) const {
    Eigen::VectorXd d2;
    eval_eta(*F_ * coef, nullptr, &d2);
    return F_->transpose() * d2.asDiagonal() * *F_;
}

ConvexProblem GlmProblem::as_problem(const std::string& name) const {
    ConvexProblem p;
    p.dim = dim();
    p.name = name;
    auto self = std::make_shared<GlmProblem>(*this);
    p.loss = [self](const Eigen::VectorXd& b) { return self->loss(b); };
    p.gradient = [self](const Eigen::VectorXd& b) { return self->gradient(b); };
    p.hessian = [self](const Eigen::VectorXd& b) { return self->hessian(b); };
    p.penalized = penalized;
    return p;
}

GlmProblem GlmProblem::subset(const std::vector<int>& rows) const {
    auto F = std::make_shared<Eigen::MatrixXd>(rows.size(), F_->cols());
    Eigen::VectorXd r(rows.size()), c(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        F->row(i) = F_->row(rows[i]);
        r[i] = r_[rows[i]];
        c[i] = c_[rows[i]];
    }
    const double s = scale_ * static_cast<double>(F_->rows()) / static_cast<double>(rows.size());
    GlmProblem out(family_, F, std::move(r), std::move(c), s);
    out.penalized = penalized;
    return out;
}

namespace {

bool has_intercept(const Eigen::MatrixXd& F, const std::vector<char>& pen) {
    return F.cols() > 0 && !pen[0] && (F.col(0).array() == 1.0).all();
}

Eigen::VectorXd from_standard(const Eigen::VectorXd& s, const Eigen::VectorXd& center,
                              const Eigen::VectorXd& sd) {
    Eigen::VectorXd b = s.cwiseQuotient(sd);
    if (b.size()) b[0] -= center.dot(b);
    return b;
}

} // namespace

GlmProblem GlmProblem::standardized(Eigen::VectorXd* center, Eigen::VectorXd* sd) const {
    const int m = dim(), n = rows();
    Eigen::VectorXd ctr = Eigen::VectorXd::Zero(m), s = Eigen::VectorXd::Ones(m);
    auto F = std::make_shared<Eigen::MatrixXd>(*F_);
    const bool icpt = has_intercept(*F_, penalized);
    for (int j = 0; j < m; ++j) {
        if (!penalized[j]) continue;
        const double mu = icpt ? F_->col(j).mean() : 0.0;
        const double var = (F_->col(j).array() - mu).square().sum() / n;
        const double sdv = std::sqrt(var);
        if (!(sdv > 1e-12)) continue;
        ctr[j] = mu;
        s[j] = sdv;
        F->col(j) = (F_->col(j).array() - mu) / sdv;
    }
    // Keep center[0] = 0 so the intercept is adjusted, not shifted.
    if (center) *center = ctr;
    if (sd) *sd = s;
    GlmProblem out(family_, F, r_, c_, scale_);
    out.penalized = penalized;
    return out;
}

SolverResult minimize_glm(const GlmProblem& prob, const Eigen::VectorXd& init,
                          const SolverOptions& opt) {
    return minimize_convex(prob.as_problem(), init, opt);
}

SolverResult coordinate_descent_l1(const GlmProblem& prob, double lambda,
                                   const Eigen::VectorXd& init, SolverOptions opt) {
    if (lambda < 0) throw validation_error("penalty must be nonnegative");
    const Eigen::MatrixXd& F = prob.design();
    const int m = prob.dim(), n = prob.rows();
    const auto& pen = prob.penalized;
    SolverResult res;
    Eigen::VectorXd beta = init;
    Eigen::VectorXd eta = F * beta;
    Eigen::VectorXd d1, d2;
    double f = prob.eval_eta(eta, &d1, &d2);
    if (!std::isfinite(f)) throw numerical_error("L1 fit: loss not finite at starting point");
    double P = f + lambda * penalty(beta, pen);
    Eigen::VectorXd h(m);
    Eigen::VectorXd r(n), work(n);
    const double inner_tol = std::max(1e-15, 1e-3 * opt.tol);
    for (int it = 0; it < opt.max_iter; ++it) {
        const Eigen::VectorXd g = F.transpose() * d1;
        const double kkt = kkt_residual(g, beta, pen, lambda);
        res.iterations = it;
        res.residual = kkt;
        if (kkt <= opt.tol) {
            res.x = beta;
            return res;
        }
        for (int j = 0; j < m; ++j) h[j] = F.col(j).array().square().cwiseProduct(d2.array()).sum();
        Eigen::VectorXd z = beta;
        r.setZero();
        auto update = [&](int j) {
            if (!(h[j] > 0)) return 0.0;
            work = d1 + d2.cwiseProduct(r);
            const double gj = F.col(j).dot(work);
            const double u = z[j] - gj / h[j];
            const double nz = pen[j] ? soft_threshold(u, lambda / h[j]) : u;
            const double dz = nz - z[j];
            if (dz == 0.0) return 0.0;
            r += dz * F.col(j);
            z[j] = nz;
            return std::abs(dz) * std::sqrt(h[j]);
        };
        std::vector<int> active;
        for (int outer = 0; outer < 1000; ++outer) {
            double maxd = 0.0;
            for (int j = 0; j < m; ++j) maxd = std::max(maxd, update(j));
            if (maxd < inner_tol) break;
            active.clear();
            for (int j = 0; j < m; ++j)
                if (!pen[j] || z[j] != 0.0) active.push_back(j);
            for (int inner = 0; inner < 10000; ++inner) {
                double md = 0.0;
                for (int j : active) md = std::max(md, update(j));
                if (md < inner_tol) break;
            }
        }
        const Eigen::VectorXd dir = z - beta;
        const double decrease = g.dot(dir) + lambda * (penalty(z, pen) - penalty(beta, pen));
        double t = 1.0;
        bool accepted = false;
        Eigen::VectorXd bn, en, nd1, nd2;
        double fn = f, Pn = P;
        for (int hh = 0; hh < kMaxHalvings; ++hh, t *= 0.5) {
            if (P + kArmijo * t * decrease == P) break;
            bn = beta + t * dir;
            en = eta + t * r;
            fn = prob.eval_eta(en, &nd1, &nd2);
            Pn = fn + lambda * penalty(bn, pen);
            if (std::isfinite(Pn) && Pn <= P + kArmijo * t * decrease) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            bn = z;
            en = F * z;
            fn = prob.eval_eta(en, &nd1, &nd2);
            Pn = fn + lambda * penalty(bn, pen);
            if (!std::isfinite(Pn) ||
                kkt_residual(F.transpose() * nd1, bn, pen, lambda) >= kkt) {
                if (kkt <= 1e4 * opt.tol) {
                    res.x = beta;
                    return res;
                }
                throw numerical_error("L1 fit: line search failed with KKT residual " +
                                      std::to_string(kkt));
            }
        }
        if (clamp_to_cap(bn, opt.coef_cap)) {
            res.x = bn;
            res.capped = true;
            return res;
        }
        if (opt.coef_cap <= 0.0 && sup_norm(bn) > 1e8)
            throw numerical_error("L1 fit: coefficients diverging, loss unbounded below");
        beta = bn;
        eta = (it % 16 == 15) ? Eigen::VectorXd(F * beta) : en;
        f = prob.eval_eta(eta, &d1, &d2);
        P = f + lambda * penalty(beta, pen);
    }
    throw numerical_error("L1 fit: iteration cap reached");
}

double lambda_max(const GlmProblem& prob, Eigen::VectorXd* null_fit) {
    const int m = prob.dim();
    std::vector<int> free_cols;
    for (int j = 0; j < m; ++j)
        if (!prob.penalized[j]) free_cols.push_back(j);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(m);
    if (!free_cols.empty()) {
        auto Fs = std::make_shared<Eigen::MatrixXd>(prob.rows(), free_cols.size());
        for (size_t c = 0; c < free_cols.size(); ++c) Fs->col(c) = prob.design().col(free_cols[c]);
        GlmProblem sub(prob.family(), Fs, prob.response(), prob.weights(), prob.scale());
        sub.penalized.assign(free_cols.size(), 0);
        SolverOptions o;
        o.coef_cap = 30.0;
        auto fit = minimize_glm(sub, Eigen::VectorXd::Zero(free_cols.size()), o);
        for (size_t c = 0; c < free_cols.size(); ++c) beta[free_cols[c]] = fit.x[c];
    }
    const Eigen::VectorXd g = prob.gradient(beta);
    double lm = 0.0;
    for (int j = 0; j < m; ++j)
        if (prob.penalized[j]) lm = std::max(lm, std::abs(g[j]));
    if (null_fit) *null_fit = beta;
    return lm;
}

std::vector<double> lambda_grid(double lmax, int count, double min_ratio) {
    std::vector<double> out;
    if (count <= 0 || !(lmax > 0)) return out;
    if (count == 1) return {lmax};
    const double step = std::log(min_ratio) / (count - 1);
    for (int i = 0; i < count; ++i) out.push_back(lmax * std::exp(step * i));
    return out;
}

namespace {

int penalized_count(const GlmProblem& prob) {
    return static_cast<int>(std::count(prob.penalized.begin(), prob.penalized.end(), 1));
}

double resolve_ratio(const GlmProblem& prob, const LassoOptions& opt) {
    if (opt.min_ratio > 0) return opt.min_ratio;
    return penalized_count(prob) > prob.rows() ? 0.01 : 1e-4;
}

} // namespace

LassoPath lasso_path(const GlmProblem& prob, const std::vector<double>& lambdas,
                     const LassoOptions& opt) {
    Eigen::VectorXd center = Eigen::VectorXd::Zero(prob.dim());
    Eigen::VectorXd sd = Eigen::VectorXd::Ones(prob.dim());
    const GlmProblem sp = opt.standardize ? prob.standardized(&center, &sd) : prob;
    Eigen::VectorXd warm;
    lambda_max(sp, &warm);
    LassoPath path;
    for (double lam : lambdas) {
        auto fit = coordinate_descent_l1(sp, lam, warm, opt.solver);
        warm = fit.x;
        path.lambdas.push_back(lam);
        path.coefs.push_back(from_standard(fit.x, center, sd));
    }
    return path;
}

SolverResult lasso_fit(const GlmProblem& prob, double lambda, const LassoOptions& opt) {
    Eigen::VectorXd center = Eigen::VectorXd::Zero(prob.dim());
    Eigen::VectorXd sd = Eigen::VectorXd::Ones(prob.dim());
    const GlmProblem sp = opt.standardize ? prob.standardized(&center, &sd) : prob;
    Eigen::VectorXd warm;
    const double lmax = lambda_max(sp, &warm);
    SolverResult fit;
    fit.x = warm;
    if (lambda < lmax) {
        // Approach the target along a short geometric path for stable warm starts.
        const int steps = 10;
        for (int s = 1; s <= steps; ++s) {
            const double lam = lmax * std::pow(lambda / lmax, static_cast<double>(s) / steps);
            fit = coordinate_descent_l1(sp, s == steps ? lambda : lam, fit.x, opt.solver);
        }
    } else {
        fit = coordinate_descent_l1(sp, lambda, warm, opt.solver);
    }
    fit.x = from_standard(fit.x, center, sd);
    return fit;
}

std::vector<int> make_folds(const std::vector<int>& strata, int n_folds, std::uint64_t seed) {
    if (n_folds < 2) throw validation_error("cross-validation needs at least 2 folds");
    std::vector<int> fold(strata.size(), 0);
    std::vector<int> levels = strata;
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    std::mt19937_64 rng(seed);
    int offset = 0;
    for (int lev : levels) {
        std::vector<int> idx;
        for (size_t i = 0; i < strata.size(); ++i)
            if (strata[i] == lev) idx.push_back(static_cast<int>(i));
        // Fisher-Yates with an explicit draw so results do not depend on the library's shuffle.
        for (size_t i = idx.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(rng() % i);
            std::swap(idx[i - 1], idx[j]);
        }
        for (size_t t = 0; t < idx.size(); ++t) fold[idx[t]] = static_cast<int>((t + offset) % n_folds);
        offset += static_cast<int>(idx.size());
    }
    return fold;
}

CvResult cross_validate_lambda(const GlmProblem& prob, const std::vector<int>& fold_of_row,
                               const LassoOptions& opt) {
    if (static_cast<int>(fold_of_row.size()) != prob.rows())
        throw validation_error("fold labels do not match problem rows");
    const int nf = fold_of_row.empty() ? 0 : *std::max_element(fold_of_row.begin(), fold_of_row.end()) + 1;
    if (nf < 2) throw validation_error("cross-validation needs at least 2 folds");

    Eigen::VectorXd center, sd;
    const GlmProblem sp = opt.standardize ? prob.standardized(&center, &sd) : prob;
    const double lmax = lambda_max(sp);
    std::vector<double> grid = lambda_grid(lmax, opt.n_lambda, resolve_ratio(prob, opt));
    if (grid.empty()) grid = {0.0};
    const int L = static_cast<int>(grid.size());
    const double inf = std::numeric_limits<double>::infinity();

    struct Fold {
        GlmProblem train, test;
        Eigen::VectorXd center, sd, warm;
        bool alive = false;
    };
    std::vector<Fold> folds;
    for (int f = 0; f < nf; ++f) {
        std::vector<int> train, test;
        for (int i = 0; i < prob.rows(); ++i) (fold_of_row[i] == f ? test : train).push_back(i);
        if (train.empty() || test.empty()) continue;
        const GlmProblem tr = prob.subset(train);
        Eigen::VectorXd c2 = Eigen::VectorXd::Zero(prob.dim()), s2 = Eigen::VectorXd::Ones(prob.dim());
        Fold fold{opt.standardize ? tr.standardized(&c2, &s2) : tr, prob.subset(test), c2, s2, {}, true};
        try {
            lambda_max(fold.train, &fold.warm);
        } catch (const numerical_error&) {
            fold.alive = false;
        }
        folds.push_back(std::move(fold));
    }

    CvResult out;
    out.path.lambdas = grid;
    out.path.cv_mean.assign(L, inf);
    out.path.cv_se.assign(L, inf);
    int best = -1, stale = 0;
    for (int l = 0; l < L; ++l) {
        double s = 0, s2 = 0;
        int cnt = 0;
        for (auto& fold : folds) {
            double v = inf;
            if (fold.alive) {
                try {
                    auto fit = coordinate_descent_l1(fold.train, grid[l], fold.warm, opt.solver);
                    fold.warm = fit.x;
                    v = fold.test.loss(from_standard(fit.x, fold.center, fold.sd)) /
                        (fold.test.scale() * fold.test.rows());
                } catch (const numerical_error&) {
                    fold.alive = false; // smaller penalties on this fold are treated as failed
                }
            }
            if (!std::isfinite(v)) {
                cnt = 0;
                break;
            }
            s += v;
            s2 += v * v;
            ++cnt;
        }
        if (cnt > 0) {
            const double mean = s / cnt;
            out.path.cv_mean[l] = mean;
            out.path.cv_se[l] = cnt > 1 ? std::sqrt(std::max(0.0, (s2 / cnt - mean * mean)) / (cnt - 1)) : 0.0;
            if (best < 0 || mean < out.path.cv_mean[best]) {
                best = l;
                stale = 0;
                continue;
            }
        }
        if (best >= 0 && opt.cv_patience > 0 && ++stale >= opt.cv_patience) break;
    }
    if (best < 0)
        throw numerical_error("cross-validation: held-out loss not finite for any penalty; "
                              "use a larger minimum penalty");
    out.path.best = best;
    std::vector<double> sub(grid.begin(), grid.begin() + best + 1);
    LassoPath full = lasso_path(prob, sub, opt);
    out.path.coefs = full.coefs;
    out.lambda = grid[best];
    out.coef = full.coefs.back();
    return out;
}

namespace {

void gather(const Eigen::VectorXd& response, const Eigen::MatrixXd& F, const Eigen::VectorXd& weights,
            const std::vector<int>& subset, std::shared_ptr<Eigen::MatrixXd>& Fs,
            Eigen::VectorXd& rs, Eigen::VectorXd& ws) {
    if (subset.empty()) throw validation_error("fit subset is empty");
    Fs = std::make_shared<Eigen::MatrixXd>(subset.size(), F.cols());
    rs.resize(subset.size());
    ws.resize(subset.size());
    for (size_t t = 0; t < subset.size(); ++t) {
        Fs->row(t) = F.row(subset[t]);
        rs[t] = response[subset[t]];
        ws[t] = weights[subset[t]];
    }
    if (!ws.allFinite() || (ws.array() < 0).any())
        throw validation_error("fit weights must be finite and nonnegative");
}

} // namespace

GlmFit weighted_logistic_fit(const Eigen::VectorXd& response, const Eigen::MatrixXd& F,
                             const Eigen::VectorXd& weights, const std::vector<int>& subset,
                             const SolverOptions& opt) {
    std::shared_ptr<Eigen::MatrixXd> Fs;
    Eigen::VectorXd rs, ws;
    gather(response, F, weights, subset, Fs, rs, ws);
    const double total = ws.sum();
    if (!(total > 0)) throw validation_error("fit weights sum to zero");
    GlmProblem prob(Family::Logistic, Fs, rs, ws, 1.0 / total);
    auto fit = minimize_glm(prob, Eigen::VectorXd::Zero(F.cols()), opt);
    return {fit.x, fit.capped, false};
}

GlmFit weighted_least_squares(const Eigen::VectorXd& response, const Eigen::MatrixXd& F,
                              const Eigen::VectorXd& weights, const std::vector<int>& subset) {
    std::shared_ptr<Eigen::MatrixXd> Fs;
    Eigen::VectorXd rs, ws;
    gather(response, F, weights, subset, Fs, rs, ws);
    const Eigen::VectorXd sw = ws.cwiseSqrt();
    const Eigen::MatrixXd A = sw.asDiagonal() * *Fs;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
    GlmFit out;
    out.coef = cod.solve(sw.cwiseProduct(rs));
    out.rank_deficient = cod.rank() < F.cols();
    return out;
}

double solve_scalar_root(const std::function<double(double)>& f,
                         const std::function<double(double)>& df, double tol) {
    double b = 5.0;
    double flo = f(-b), fhi = f(b);
    auto same_sign = [](double u, double v) { return (u > 0 && v > 0) || (u < 0 && v < 0); };
    while (!(std::isfinite(flo) && std::isfinite(fhi)) || same_sign(flo, fhi)) {
        if (b >= 50.0)
            throw numerical_error("root not bracketed in [-50, 50]; estimating function has no "
                                  "sign change (an arm may have zero weighted events)");
        b = std::min(2.0 * b, 50.0);
        flo = f(-b);
        fhi = f(b);
    }
    if (flo == 0.0) return -b;
    if (fhi == 0.0) return b;
    double lo = -b, hi = b;
    double x = 0.0;
    double best = x, fbest = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 400; ++it) {
        const double fx = f(x);
        if (std::isfinite(fx) && std::abs(fx) < fbest) {
            fbest = std::abs(fx);
            best = x;
        }
        if (fx == 0.0) return x;
        if (same_sign(fx, flo)) {
            lo = x;
            flo = fx;
        } else {
            hi = x;
            fhi = fx;
        }
        double xn = 0.5 * (lo + hi);
        if (df) {
            const double d = df(x);
            if (std::isfinite(d) && d != 0.0) {
                const double cand = x - fx / d;
                if (cand > std::min(lo, hi) && cand < std::max(lo, hi)) xn = cand;
            }
        }
        const double width = std::abs(hi - lo);
        const double step = std::abs(xn - x);
        if (width <= 4e-16 * std::max(1.0, std::abs(x)) ||
            (step <= 1e-15 * std::max(1.0, std::abs(x)) && std::abs(fx) <= tol))
            break;
        x = xn;
    }
    if (fbest > tol)
        throw numerical_error("scalar root: residual " + std::to_string(fbest) +
                              " above tolerance");
    return best;
}

} // namespace calsurv
