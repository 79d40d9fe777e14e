#pragma once
#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "calsurv/errors.hpp"

namespace calsurv {

/**
 * Smooth convex objective in m coefficients. The Hessian is optional;
 * without it minimize_convex falls back to gradient steps.
 */
struct ConvexProblem {
    int dim = 0;
    std::string name = "loss";
    std::function<double(const Eigen::VectorXd&)> loss;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> hessian;
    std::vector<char> penalized; // coordinates subject to the L1 penalty
};

struct SolverOptions {
    double tol = 1e-9;      // gradient sup-norm (smooth) or KKT residual (L1)
    int max_iter = 500;
    double coef_cap = 0.0;  // > 0: clamp coefficients at this sup-norm and flag
};

struct SolverResult {
    Eigen::VectorXd x;
    int iterations = 0;
    double residual = 0.0; // final gradient sup-norm or KKT residual
    bool capped = false;
};

// Damped Newton with backtracking; non-finite trial points are rejected.
SolverResult minimize_convex(const ConvexProblem& prob, const Eigen::VectorXd& init,
                             const SolverOptions& opt = {});

// Proximal Newton with coordinate descent on the quadratic model (dense Hessian).
SolverResult coordinate_descent_l1(const ConvexProblem& prob, double lambda,
                                   const Eigen::VectorXd& init, SolverOptions opt = {});

// Largest violation of the stationarity conditions of loss + lambda * sum_{penalized} |x_j|.
double kkt_residual(const Eigen::VectorXd& grad, const Eigen::VectorXd& x,
                    const std::vector<char>& penalized, double lambda);

/**
 * Losses that depend on the coefficients only through eta = F * coef:
 *   CalExp:   c_i * { r_i exp(-eta_i) + (1 - r_i) eta_i }
 *   Logistic: c_i * { log(1 + exp(eta_i)) - r_i eta_i }
 *   Gaussian: c_i * (r_i - eta_i)^2 / 2
 * summed over rows and multiplied by `scale` (default 1 / rows).
 */
enum class Family { CalExp, Logistic, Gaussian };

class GlmProblem {
public:
    GlmProblem(Family family, std::shared_ptr<const Eigen::MatrixXd> F, Eigen::VectorXd response,
               Eigen::VectorXd weights, double scale = -1.0);

    Family family() const { return family_; }
    const Eigen::MatrixXd& design() const { return *F_; }
    const Eigen::VectorXd& response() const { return r_; }
    const Eigen::VectorXd& weights() const { return c_; }
    double scale() const { return scale_; }
    int rows() const { return static_cast<int>(F_->rows()); }
    int dim() const { return static_cast<int>(F_->cols()); }

    std::vector<char> penalized; // defaults to every column except column 0

    double loss(const Eigen::VectorXd& coef) const;
    Eigen::VectorXd gradient(const Eigen::VectorXd& coef) const;
    Eigen::MatrixXd hessian(const Eigen::VectorXd& coef) const;
    // Loss value plus first and second derivatives with respect to eta (scale included).
    double eval_eta(const Eigen::VectorXd& eta, Eigen::VectorXd* d1, Eigen::VectorXd* d2) const;

    ConvexProblem as_problem(const std::string& name = "glm") const;
    // Problem on a subset of rows; the scale keeps the same per-row normalization.
    GlmProblem subset(const std::vector<int>& rows) const;
    // Problem with non-intercept penalized columns centered and scaled to unit SD.
    GlmProblem standardized(Eigen::VectorXd* center, Eigen::VectorXd* sd) const;

private:
    Family family_;
    std::shared_ptr<const Eigen::MatrixXd> F_;
    Eigen::VectorXd r_;
    Eigen::VectorXd c_;
    double scale_;
};

SolverResult minimize_glm(const GlmProblem& prob, const Eigen::VectorXd& init,
                          const SolverOptions& opt = {});
SolverResult coordinate_descent_l1(const GlmProblem& prob, double lambda,
                                   const Eigen::VectorXd& init, SolverOptions opt = {});

// Smallest lambda with all penalized coefficients at zero; null_fit receives that solution.
double lambda_max(const GlmProblem& prob, Eigen::VectorXd* null_fit = nullptr);
std::vector<double> lambda_grid(double lmax, int count, double min_ratio);

struct LassoOptions {
    int n_lambda = 50;
    double min_ratio = -1.0; // < 0: 0.01 when penalized columns exceed rows, else 1e-4
    int n_folds = 5;
    std::uint64_t seed = 1;
    bool standardize = true;
    SolverOptions solver = {1e-7, 500, 0.0};
    // Cross-validation stops walking down the grid after this many consecutive penalties
    // without a lower mean held-out loss (<= 0: always fit the whole grid).
    int cv_patience = 5;
};

struct LassoPath {
    std::vector<double> lambdas;
    std::vector<Eigen::VectorXd> coefs;
    std::vector<double> cv_mean;
    std::vector<double> cv_se;
    int best = -1;
};

// Warm-started fits along `lambdas` (decreasing); coefficients on the original scale.
LassoPath lasso_path(const GlmProblem& prob, const std::vector<double>& lambdas,
                     const LassoOptions& opt = {});
// Single fit at lambda, reached by a short warm-start path from lambda_max.
SolverResult lasso_fit(const GlmProblem& prob, double lambda, const LassoOptions& opt = {});

// Fold labels 0..n_folds-1, shuffled within each stratum by seed.
std::vector<int> make_folds(const std::vector<int>& strata, int n_folds, std::uint64_t seed);

struct CvResult {
    LassoPath path; // fits on the full problem with CV curve attached
    double lambda = 0.0;
    Eigen::VectorXd coef;
};

// Held-out criterion: the same loss (unpenalized) averaged over held-out rows.
CvResult cross_validate_lambda(const GlmProblem& prob, const std::vector<int>& fold_of_row,
                               const LassoOptions& opt = {});

struct GlmFit {
    Eigen::VectorXd coef;
    bool capped = false;
    bool rank_deficient = false;
};

// Solves sum_{i in subset} w_i (r_i - expit(f_i' a)) f_i = 0; r may be fractional.
GlmFit weighted_logistic_fit(const Eigen::VectorXd& response, const Eigen::MatrixXd& F,
                             const Eigen::VectorXd& weights, const std::vector<int>& subset,
                             const SolverOptions& opt = {1e-9, 500, 30.0});
// Normal equations; minimum-norm solution when rank deficient.
GlmFit weighted_least_squares(const Eigen::VectorXd& response, const Eigen::MatrixXd& F,
                              const Eigen::VectorXd& weights, const std::vector<int>& subset);

// Root of a continuous function with a sign change inside [-50, 50]. The bracket grows
// from [-5, 5]; Newton steps are used when df is given and stay inside the bracket.
double solve_scalar_root(const std::function<double(double)>& f,
                         const std::function<double(double)>& df = nullptr, double tol = 1e-10);

double expit(double x);

} // namespace calsurv
