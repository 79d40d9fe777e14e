#pragma once
// Test helpers: random small datasets and literal re-implementations of the estimator
// formulas, written directly from their definitions and independent of the library code.
#include <Eigen/Core>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "calsurv/data.hpp"

namespace testsupport {

using calsurv::SurvivalDataset;

// Survival data on integer times 1..tmax with covariate-dependent treatment and hazards.
// Re-draws until both arms have events at two or more distinct times.
inline SurvivalDataset random_dataset(std::uint64_t seed, int n, int p, int tmax = 8) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int attempt = 0; attempt < 100; ++attempt) {
        Eigen::MatrixXd x(n, p);
        std::vector<int> y(n), d(n), a(n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < p; ++j) x(i, j) = nd(rng);
            const double lin = 0.6 * x(i, 0) - (p > 1 ? 0.4 * x(i, 1) : 0.0);
            a[i] = ud(rng) < 1.0 / (1.0 + std::exp(-lin)) ? 1 : 0;
            const double haz = 1.0 / (1.0 + std::exp(1.2 - 0.5 * x(i, 0) + 0.3 * a[i]));
            int t = 1;
            while (t < tmax + 2 && ud(rng) > haz) ++t;
            const int c = static_cast<int>(ud(rng) * (tmax + 1.5));
            if (t <= c) {
                y[i] = t;
                d[i] = 1;
            } else {
                y[i] = c;
                d[i] = 0;
            }
        }
        std::vector<int> ev1, ev0;
        for (int i = 0; i < n; ++i)
            if (d[i]) (a[i] ? ev1 : ev0).push_back(y[i]);
        auto distinct = [](std::vector<int> v) {
            std::sort(v.begin(), v.end());
            return std::unique(v.begin(), v.end()) - v.begin();
        };
        if (distinct(ev1) >= 2 && distinct(ev0) >= 2) return calsurv::make_dataset(y, d, a, x);
    }
    throw std::runtime_error("random_dataset: could not draw usable data");
}

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Bisection on a monotone continuous function with f(lo), f(hi) of opposite signs.
inline double bisect(const std::function<double(double)>& f, double lo, double hi) {
    double flo = f(lo);
    for (int it = 0; it < 400; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        const double fm = f(mid);
        if (fm == 0.0) return mid;
        if ((fm < 0) == (flo < 0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

// Observed-data indicators written from their definitions.
inline bool at_risk(const SurvivalDataset& ds, int i, int k) { return ds.y[i] >= k; }
inline bool event_at(const SurvivalDataset& ds, int i, int k) {
    return k >= 1 && ds.y[i] == k && ds.delta[i] == 1;
}
// 1{Y >= u_k, (Y, Delta) != (u_k, 1)}
inline bool event_free(const SurvivalDataset& ds, int i, int k) {
    return ds.y[i] >= k && !event_at(ds, i, k);
}

struct KmLiteral {
    std::vector<double> S, q, Vb, Vb0, Vr;
};

// Weighted product-limit curve and its three variance estimators, O(n K^2).
inline KmLiteral km_literal(const SurvivalDataset& ds, int arm, int K, const Eigen::VectorXd& w) {
    const int n = ds.n;
    KmLiteral o;
    o.S.assign(K + 1, 1.0);
    o.q.assign(K + 1, 0.0);
    o.Vb.assign(K + 1, 0.0);
    o.Vb0.assign(K + 1, 0.0);
    o.Vr.assign(K + 1, 0.0);
    std::vector<double> sI(K + 1), sI2(K + 1), sJ(K + 1);
    for (int j = 1; j <= K; ++j) {
        for (int i = 0; i < n; ++i) {
            if (ds.a[i] != arm || !at_risk(ds, i, j)) continue;
            sI[j] += w[i];
            sI2[j] += w[i] * w[i];
            if (event_at(ds, i, j)) sJ[j] += w[i];
        }
        o.q[j] = sJ[j] / sI[j];
        o.S[j] = o.S[j - 1] * (1.0 - o.q[j]);
    }
    for (int k = 1; k <= K; ++k) {
        double b = 0.0, b0 = 0.0;
        for (int j = 1; j <= k; ++j) {
            b += sI2[j] / (sI[j] * sI[j]) * o.q[j] / (1.0 - o.q[j]);
            b0 += 1.0 / sI[j] * o.q[j] / (1.0 - o.q[j]);
        }
        o.Vb[k] = o.S[k] * o.S[k] * b;
        o.Vb0[k] = o.S[k] * o.S[k] * b0;
        double ss = 0.0;
        for (int i = 0; i < n; ++i) {
            double phi = 0.0;
            if (ds.a[i] == arm) {
                for (int j = 1; j <= k; ++j) {
                    if (!at_risk(ds, i, j)) continue;
                    const double ev = event_at(ds, i, j) ? 1.0 : 0.0;
                    phi += n * (-w[i] / (sI[j] - sJ[j])) * (ev - o.q[j]);
                }
            }
            ss += phi * phi;
        }
        o.Vr[k] = o.S[k] * o.S[k] / (double(n) * n) * ss;
    }
    return o;
}

struct Nuisance {
    std::vector<double> rho, eta; // index 1..K
};

// Calibrated constant non-censoring and survival probabilities, each found by bisection on
// its own estimating equation.
inline Nuisance cal_nuisance_literal(const SurvivalDataset& ds, int arm, int K, const Eigen::VectorXd& w) {
    Nuisance o;
    o.rho.assign(K + 1, 1.0);
    o.eta.assign(K + 1, 1.0);
    for (int l = 0; l < K; ++l) {
        // sum T w Rbar_l (R_{l+1}/rho - 1) 1{U > u_l}
        auto frho = [&](double rho) {
            double s = 0.0;
            for (int i = 0; i < ds.n; ++i) {
                if (ds.a[i] != arm || !event_free(ds, i, l)) continue;
                const double R = at_risk(ds, i, l + 1) ? 1.0 : 0.0;
                s += w[i] * (R / rho - 1.0);
            }
            return s;
        };
        // sum T w Rbar_{l+1} 1{U > u_l} (1{U > u_{l+1}} - eta)
        auto feta = [&](double eta) {
            double s = 0.0;
            for (int i = 0; i < ds.n; ++i) {
                if (ds.a[i] != arm || !at_risk(ds, i, l + 1)) continue;
                s += w[i] * ((event_free(ds, i, l + 1) ? 1.0 : 0.0) - eta);
            }
            return s;
        };
        o.rho[l + 1] = bisect(frho, 1e-9, 1.0 + 1e-9);
        o.eta[l + 1] = bisect(feta, -1e-9, 1.0 + 1e-9);
    }
    return o;
}

// prod_{j=from}^{k} eta_j (1 when from > k)
inline double mprod(const std::vector<double>& eta, int from, int k) {
    double m = 1.0;
    for (int j = from; j <= k; ++j) m *= eta[j];
    return m;
}
// prod_{j=1}^{l} rho_j
inline double pibar(const std::vector<double>& rho, int l) { return mprod(rho, 1, l); }

// Propensity-weighted arrangement of the augmented IPW summand, columns k = 0..K.
inline Eigen::MatrixXd phi_ps_literal(const SurvivalDataset& ds, int arm, int K, const Eigen::VectorXd& w,
                                      const Nuisance& nu) {
    Eigen::MatrixXd phi(ds.n, K + 1);
    for (int i = 0; i < ds.n; ++i) {
        const double tw = ds.a[i] == arm ? w[i] : 0.0;
        for (int k = 0; k <= K; ++k) {
            double v = tw * (event_free(ds, i, k) ? 1.0 : 0.0) / pibar(nu.rho, k);
            for (int l = 0; l < k; ++l) {
                // Rbar_l R_{l+1} 1{U > u_l} = 1{Y >= u_{l+1}};  Rbar_l 1{U > u_l} = event-free at l
                const double rr = at_risk(ds, i, l + 1) ? 1.0 : 0.0;
                const double ef = event_free(ds, i, l) ? 1.0 : 0.0;
                v -= tw / pibar(nu.rho, l) * (rr / nu.rho[l + 1] - ef) * mprod(nu.eta, l + 1, k);
            }
            v -= (tw - 1.0) * mprod(nu.eta, 1, k);
            phi(i, k) = v;
        }
    }
    return phi;
}

// Outcome-regression arrangement of the same summand.
inline Eigen::MatrixXd phi_or_literal(const SurvivalDataset& ds, int arm, int K, const Eigen::VectorXd& w,
                                      const Nuisance& nu) {
    Eigen::MatrixXd phi(ds.n, K + 1);
    for (int i = 0; i < ds.n; ++i) {
        const double tw = ds.a[i] == arm ? w[i] : 0.0;
        for (int k = 0; k <= K; ++k) {
            double v = mprod(nu.eta, 1, k);
            for (int l = 0; l < k; ++l) {
                // Rbar_{l+1} 1{U > u_l} 1{U > u_{l+1}} = event-free at l+1
                const double ef1 = event_free(ds, i, l + 1) ? 1.0 : 0.0;
                const double rr = at_risk(ds, i, l + 1) ? 1.0 : 0.0;
                v += tw / pibar(nu.rho, l + 1) * mprod(nu.eta, l + 2, k) * (ef1 - rr * nu.eta[l + 1]);
            }
            phi(i, k) = v;
        }
    }
    return phi;
}

// The two displayed two-period expressions, term by term.
inline Eigen::VectorXd phi_k2_a(const SurvivalDataset& ds, int arm, const Eigen::VectorXd& w, const Nuisance& nu) {
    Eigen::VectorXd v(ds.n);
    const double p1 = nu.rho[1], p2 = nu.rho[2], m1 = nu.eta[1], m2 = nu.eta[2];
    for (int i = 0; i < ds.n; ++i) {
        const double Aw = ds.a[i] == arm ? w[i] : 0.0;
        const double R1 = at_risk(ds, i, 1), R2 = at_risk(ds, i, 2);
        const double U1 = event_free(ds, i, 1), U2 = event_free(ds, i, 2);
        v[i] = Aw * R1 * R2 / (p1 * p2) * U2 - Aw * R1 / p1 * (R2 / p2 - 1.0) * m2 * U1 -
               Aw * (R1 / p1 - 1.0) * m2 * m1 - (Aw - 1.0) * m2 * m1;
    }
    return v;
}

inline Eigen::VectorXd phi_k2_b(const SurvivalDataset& ds, int arm, const Eigen::VectorXd& w, const Nuisance& nu) {
    Eigen::VectorXd v(ds.n);
    const double p1 = nu.rho[1], p2 = nu.rho[2], m1 = nu.eta[1], m2 = nu.eta[2];
    for (int i = 0; i < ds.n; ++i) {
        const double Aw = ds.a[i] == arm ? w[i] : 0.0;
        const double R1 = at_risk(ds, i, 1), R2 = at_risk(ds, i, 2);
        const double U1 = event_free(ds, i, 1), U2 = event_free(ds, i, 2);
        v[i] = Aw * R1 * R2 / (p1 * p2) * U1 * (U2 - m2) + Aw * R1 / p1 * m2 * (U1 - m1) + m2 * m1;
    }
    return v;
}

struct WbpLiteral {
    double theta = 0.0, H = 0.0, G = 0.0, Vr = 0.0, Vb0 = 0.0;
    std::vector<double> W1, W0, q1, q0;
};

inline double wbp_ef(const WbpLiteral& o, int K, double theta) {
    double s = 0.0;
    for (int k = 1; k <= K; ++k) {
        if (o.W1[k] <= 0 || o.W0[k] <= 0) continue;
        const double den = o.W1[k] * std::exp(theta) + o.W0[k];
        s += o.W1[k] * o.W0[k] / den * (o.q1[k] - o.q0[k] * std::exp(theta));
    }
    return s;
}

// Weighted Breslow-Peto estimate with its model-based and robust variances; `freq` are
// per-subject frequency multipliers (1 for the plain estimator).
inline WbpLiteral wbp_literal(const SurvivalDataset& ds, int K, const Eigen::VectorXd& w1,
                              const Eigen::VectorXd& w0, const Eigen::VectorXd* freq = nullptr,
                              bool variance = true) {
    const int n = ds.n;
    WbpLiteral o;
    o.W1.assign(K + 1, 0.0);
    o.W0.assign(K + 1, 0.0);
    o.q1.assign(K + 1, 0.0);
    o.q0.assign(K + 1, 0.0);
    for (int k = 1; k <= K; ++k) {
        double e1 = 0, e0 = 0;
        for (int i = 0; i < n; ++i) {
            if (!at_risk(ds, i, k)) continue;
            const double f = freq ? (*freq)[i] : 1.0;
            if (ds.a[i] == 1) {
                o.W1[k] += f * w1[i];
                if (event_at(ds, i, k)) e1 += f * w1[i];
            } else {
                o.W0[k] += f * w0[i];
                if (event_at(ds, i, k)) e0 += f * w0[i];
            }
        }
        o.q1[k] = o.W1[k] > 0 ? e1 / o.W1[k] : 0.0;
        o.q0[k] = o.W0[k] > 0 ? e0 / o.W0[k] : 0.0;
        o.W1[k] /= n;
        o.W0[k] /= n;
    }
    o.theta = bisect([&](double t) { return wbp_ef(o, K, t); }, -20.0, 20.0);
    if (!variance) return o;
    const double e = std::exp(o.theta);
    for (int k = 1; k <= K; ++k) {
        if (o.W1[k] <= 0 || o.W0[k] <= 0) continue;
        const double den = o.W1[k] * e + o.W0[k];
        o.H += o.W1[k] * o.W0[k] * e / (den * den) * (o.W1[k] * o.q1[k] + o.W0[k] * o.q0[k]);
    }
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
        double phi = 0.0;
        for (int k = 1; k <= K; ++k) {
            if (o.W1[k] <= 0 || o.W0[k] <= 0) continue;
            const double den = o.W1[k] * e + o.W0[k];
            const double I = at_risk(ds, i, k), J = event_at(ds, i, k);
            const double A = ds.a[i];
            phi += o.W0[k] / den * A * w1[i] * (J - o.q1[k] * I);
            phi -= o.W1[k] * e / den * (1 - A) * w0[i] * (J - o.q0[k] * I);
            phi += (o.q1[k] - o.q0[k] * e) / (den * den) *
                   (o.W0[k] * o.W0[k] * (A * w1[i] * I - o.W1[k]) +
                    e * o.W1[k] * o.W1[k] * ((1 - A) * w0[i] * I - o.W0[k]));
        }
        ss += phi * phi;
    }
    o.G = ss / (double(n) * n);
    o.Vr = o.G / (o.H * o.H);
    o.Vb0 = 1.0 / (n * o.H);
    return o;
}

// Infinitesimal-jackknife variance: sum_i (d theta / d f_i)^2 with f_i the frequency of
// subject i, by central differences.
inline double wbp_ij_variance(const SurvivalDataset& ds, int K, const Eigen::VectorXd& w1,
                              const Eigen::VectorXd& w0, double h = 1e-5) {
    Eigen::VectorXd f = Eigen::VectorXd::Ones(ds.n);
    double v = 0.0;
    for (int i = 0; i < ds.n; ++i) {
        f[i] = 1.0 + h;
        const double tp = wbp_literal(ds, K, w1, w0, &f, false).theta;
        f[i] = 1.0 - h;
        const double tm = wbp_literal(ds, K, w1, w0, &f, false).theta;
        f[i] = 1.0;
        const double g = (tp - tm) / (2 * h);
        v += g * g;
    }
    return v;
}

// Moore-Penrose solution of the weighted least-squares problem.
inline Eigen::VectorXd pinv_wls(const Eigen::MatrixXd& F, const Eigen::VectorXd& r, const Eigen::VectorXd& w) {
    const Eigen::VectorXd sw = w.cwiseSqrt();
    const Eigen::MatrixXd X = sw.asDiagonal() * F;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    Eigen::VectorXd sinv = Eigen::VectorXd::Zero(s.size());
    for (int j = 0; j < s.size(); ++j)
        if (s[j] > 1e-12 * s[0]) sinv[j] = 1.0 / s[j];
    return svd.matrixV() * sinv.asDiagonal() * svd.matrixU().transpose() * sw.cwiseProduct(r);
}

// Central finite-difference gradient.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-5) {
    Eigen::VectorXd g(x.size());
    for (int j = 0; j < x.size(); ++j) {
        Eigen::VectorXd xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        g[j] = (f(xp) - f(xm)) / (2 * h);
    }
    return g;
}

// Relative error with a floor so that near-zero components do not dominate.
inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (a - b).lpNorm<Eigen::Infinity>() / std::max(1e-3, b.lpNorm<Eigen::Infinity>());
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1e-300, std::abs(b)); }

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b, size_t from = 0) {
    double m = 0.0;
    for (size_t k = from; k < std::min(a.size(), b.size()); ++k) m = std::max(m, std::abs(a[k] - b[k]));
    return m;
}

} // namespace testsupport
