#include "calsurv/sim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <memory>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "calsurv/hazard.hpp"
#include "calsurv/optimize.hpp"
#include "calsurv/propensity.hpp"
#include "calsurv/survival.hpp"

#ifndef CALSURV_DATA_DIR
#define CALSURV_DATA_DIR "data"
#endif

namespace calsurv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
const double kBound = 2.5 / std::sqrt(10.0);
const std::vector<int> kTableTimes{60, 90, 120};

const std::vector<std::string> kSurvivalNames{"KM", "wKM", "wKM_RML", "CAL", "CAL_lin", "RCAL", "RCAL_lin"};
const std::vector<std::string> kThetaNames{"BP", "wBP", "wBP_RML", "tCAL", "tCAL_lin", "RCw", "RCa"};

bool is_survival(const std::string& e) {
    return std::find(kSurvivalNames.begin(), kSurvivalNames.end(), e) != kSurvivalNames.end();
}
bool is_theta(const std::string& e) {
    return std::find(kThetaNames.begin(), kThetaNames.end(), e) != kThetaNames.end();
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(s);
    while (std::getline(ss, cur, ',')) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<int>(x);
    } catch (const std::exception&) {
        throw validation_error("scenario key '" + key + "': expected an integer, got '" + v + "'");
    }
}

// Runs body(i) for i in [0, count) on `jobs` threads; results are stored by index by the caller.
template <class Body>
void parallel_for(int count, int jobs, Body body) {
    jobs = std::max(1, std::min(jobs, count));
    if (jobs == 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex m;
    for (int t = 0; t < jobs; ++t)
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= count) break;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(m);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

} // namespace

std::string to_string(CovCase c) { return c == CovCase::C1 ? "C1" : "C2"; }

CovCase parse_cov_case(const std::string& s) {
    if (s == "C1" || s == "c1") return CovCase::C1;
    if (s == "C2" || s == "c2") return CovCase::C2;
    throw validation_error("unknown covariance case '" + s + "' (expected C1 or C2)");
}

void ScenarioConfig::validate() const {
    if (n < 2) throw validation_error("scenario: n must be at least 2");
    if (p < 10) throw validation_error("scenario: p must be at least 10 (first 10 covariates carry the signal)");
    if (reps < 0) throw validation_error("scenario: reps must be nonnegative");
    if (arm != 0 && arm != 1) throw validation_error("scenario: arm must be 0 or 1");
    if (jobs < 1) throw validation_error("scenario: jobs must be at least 1");
    for (int t : times)
        if (t < 1) throw validation_error("scenario: evaluation times must be positive grid indices");
    for (const auto& e : estimators)
        if (!is_survival(e) && !is_theta(e)) throw validation_error("scenario: unknown estimator '" + e + "'");
    if (lambda_policy != "cv") {
        char* end = nullptr;
        const double v = std::strtod(lambda_policy.c_str(), &end);
        if (end == lambda_policy.c_str() || *end != '\0' || !(v >= 0))
            throw validation_error("scenario: lambda_policy must be 'cv' or a nonnegative number");
    }
}

ScenarioConfig parse_scenario(std::istream& in, ScenarioConfig cfg) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw validation_error("scenario line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
        if (key == "case") cfg.cov = parse_cov_case(val);
        else if (key == "n") cfg.n = to_int(key, val);
        else if (key == "p") cfg.p = to_int(key, val);
        else if (key == "reps") cfg.reps = to_int(key, val);
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(key, val));
        else if (key == "arm") cfg.arm = to_int(key, val);
        else if (key == "jobs") cfg.jobs = to_int(key, val);
        else if (key == "lambda_policy") cfg.lambda_policy = val;
        else if (key == "estimators") cfg.estimators = split_list(val);
        else if (key == "times") {
            cfg.times.clear();
            for (const auto& t : split_list(val)) cfg.times.push_back(to_int(key, t));
        } else {
            throw validation_error("scenario line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

ScenarioConfig load_scenario(const std::string& path, ScenarioConfig base) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open scenario file '" + path + "'");
    return parse_scenario(in, std::move(base));
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t rep, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(rep), static_cast<std::uint32_t>(rep >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

int draw_signal_covariates(std::mt19937_64& rng, CovCase cov, int a, double* x10) {
    std::normal_distribution<double> normal(0.0, 1.0);
    // Per-component arm shift of 0.25; with 0.025 the arms are nearly unconfounded and
    // unadjusted KM and BP lose the bias the design is meant to produce.
    const double mu = (a == 1) ? 0.25 : -0.25;
    const double c = (cov == CovCase::C1) ? 1.0 : (a == 0 ? 4.0 / 3.0 : 2.0 / 3.0);
    const double s1 = std::sqrt(c), s = std::sqrt(0.75 * c);
    int rejected = 0;
    for (;;) {
        // Stationary AR(1) chain with correlation 0.5^|i-j| and variance c; reject at the
        // first coordinate outside the box, which leaves the accepted law unchanged.
        double z = s1 * normal(rng);
        bool inside = true;
        for (int j = 0; j < 10; ++j) {
            if (j > 0) z = 0.5 * z + s * normal(rng);
            x10[j] = mu + z;
            if (std::abs(x10[j]) >= kBound) {
                inside = false;
                break;
            }
        }
        if (inside) return rejected;
        ++rejected;
    }
}

SurvivalDataset generate_dataset(const ScenarioConfig& cfg, int rep) {
    cfg.validate();
    std::mt19937_64 rng = make_rng(cfg.seed, static_cast<std::uint64_t>(rep), 0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int n = cfg.n, p = cfg.p;
    std::vector<int> y(n), delta(n), a(n);
    Eigen::MatrixXd x(n, p);
    double x10[10];
    for (int i = 0; i < n; ++i) {
        a[i] = unif(rng) < 0.5 ? 1 : 0;
        draw_signal_covariates(rng, cfg.cov, a[i], x10);
        double lin = 0.0;
        for (int j = 0; j < 10; ++j) {
            x(i, j) = x10[j];
            lin += 0.5 * x10[j];
        }
        for (int j = 10; j < p; ++j) x(i, j) = normal(rng);
        // Weibull with survivor exp(-(t/scale)^shape).
        const double scale = std::exp(lin);
        const double shape = a[i] == 1 ? 1.0 : 2.0;
        const double e = -std::log(1.0 - unif(rng));
        const double u = scale * std::pow(e, 1.0 / shape);
        double c;
        if (a[i] == 1) {
            c = 4.0 * unif(rng);
        } else {
            // Beta(2, 2) is the median of three independent uniforms.
            double v[3] = {unif(rng), unif(rng), unif(rng)};
            std::sort(v, v + 3);
            c = 4.0 * v[1];
        }
        const double t = std::min(u, c);
        y[i] = std::max(1, static_cast<int>(std::ceil(t * 100.0)));
        delta[i] = (u <= c) ? 1 : 0;
    }
    return make_dataset(std::move(y), std::move(delta), std::move(a), std::move(x));
}

double censoring_survivor(int arm, double u) {
    if (u <= 0) return 1.0;
    if (u >= 4.0) return 0.0;
    const double v = u / 4.0;
    if (arm == 1) return 1.0 - v;
    return 1.0 - (3.0 * v * v - 2.0 * v * v * v);
}

double OracleResult::S1_se(size_t j) const { return S1_sd[j] / std::sqrt(std::max(1, repeats)); }
double OracleResult::S0_se(size_t j) const { return S0_sd[j] / std::sqrt(std::max(1, repeats)); }
double OracleResult::theta_se() const { return theta_sd / std::sqrt(std::max(1, repeats)); }

OracleResult oracle_truth(CovCase cov, const std::vector<int>& times, std::uint64_t seed,
                          const OracleOptions& opt) {
    if (opt.draws < 1 || opt.repeats < 1 || opt.K < 1) throw validation_error("oracle: draws, repeats and K must be positive");
    for (int t : times)
        if (t < 0 || t > opt.K) throw validation_error("oracle: time outside 0..K");
    const int K = opt.K, R = opt.repeats;
    std::vector<std::vector<double>> s1(R), s0(R);
    std::vector<double> thetas(R, kNaN);
    std::vector<long long> rejected(R, 0);

    parallel_for(R, opt.jobs, [&](int r) {
        std::vector<double> acc1(K + 1, 0.0), acc0(K + 1, 0.0);
        double x10[10];
        for (int g = 0; g <= 1; ++g) {
            std::mt19937_64 rng = make_rng(seed, static_cast<std::uint64_t>(r), 1 + g);
            std::vector<double> part1(K + 1, 0.0), part0(K + 1, 0.0);
            for (int d = 0; d < opt.draws; ++d) {
                rejected[r] += draw_signal_covariates(rng, cov, g, x10);
                double lin = 0.0;
                for (double v : x10) lin += 0.5 * v;
                const double rate = std::exp(-lin) / 100.0; // (u_k / scale) = k * rate
                // Shape 1: exp(-k rate); shape 2: exp(-(k rate)^2) with ratio exp(-(2k-1) rate^2).
                const double m1 = std::exp(-rate);
                const double c2 = rate * rate;
                const double step = std::exp(-2.0 * c2);
                double v1 = 1.0, v2 = 1.0, ratio = std::exp(-c2);
                for (int k = 0; k <= K; ++k) {
                    if (k > 0) {
                        v1 *= m1;
                        v2 *= ratio;
                        ratio *= step;
                    }
                    part1[k] += v1;
                    part0[k] += opt.same_event_law ? v1 : v2;
                }
            }
            for (int k = 0; k <= K; ++k) {
                acc1[k] += 0.5 * part1[k] / opt.draws;
                acc0[k] += 0.5 * part0[k] / opt.draws;
            }
        }
        ThetaTerms t;
        t.K = K;
        t.W1.assign(K + 1, 0.0);
        t.W0.assign(K + 1, 0.0);
        t.q1.assign(K + 1, 0.0);
        t.q0.assign(K + 1, 0.0);
        t.used.assign(K + 1, 0);
        for (int k = 1; k <= K; ++k) {
            const double u = k / 100.0;
            t.W1[k] = acc1[k] * censoring_survivor(1, u);
            t.W0[k] = acc0[k] * censoring_survivor(0, u);
            if (!(t.W1[k] > 0 && t.W0[k] > 0 && acc1[k - 1] > 0 && acc0[k - 1] > 0)) continue;
            t.q1[k] = (acc1[k - 1] - acc1[k]) / acc1[k - 1];
            t.q0[k] = (acc0[k - 1] - acc0[k]) / acc0[k - 1];
            t.used[k] = 1;
        }
        thetas[r] = solve_scalar_root([&](double th) { return theta_estimating_function(t, th); },
                                      [&](double th) { return -theta_curvature(t, th); });
        s1[r] = std::move(acc1);
        s0[r] = std::move(acc0);
    });

    long long rej = 0;
    for (auto v : rejected) rej += v;
    const double accepted = 2.0 * R * opt.draws;
    OracleResult out;
    out.cov = cov;
    out.times = times;
    out.repeats = R;
    out.acceptance = accepted / (accepted + static_cast<double>(rej));
    if (out.acceptance < 1e-4)
        throw numerical_error("oracle: truncated normal acceptance below 0.01%");

    auto mean_sd = [R](const std::vector<double>& v, double* sd) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= R;
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        *sd = R > 1 ? std::sqrt(ss / (R - 1)) : 0.0;
        return m;
    };
    out.S1_curve.assign(K + 1, 0.0);
    out.S0_curve.assign(K + 1, 0.0);
    for (int k = 0; k <= K; ++k) {
        for (int r = 0; r < R; ++r) {
            out.S1_curve[k] += s1[r][k] / R;
            out.S0_curve[k] += s0[r][k] / R;
        }
    }
    for (int t : times) {
        std::vector<double> v1(R), v0(R);
        for (int r = 0; r < R; ++r) {
            v1[r] = s1[r][t];
            v0[r] = s0[r][t];
        }
        double sd1, sd0;
        out.S1.push_back(mean_sd(v1, &sd1));
        out.S0.push_back(mean_sd(v0, &sd0));
        out.S1_sd.push_back(sd1);
        out.S0_sd.push_back(sd0);
        out.G1.push_back(censoring_survivor(1, t / 100.0));
        out.G0.push_back(censoring_survivor(0, t / 100.0));
    }
    out.theta = mean_sd(thetas, &out.theta_sd);
    return out;
}

const std::vector<double>* ReferenceTable::find(const std::string& key) const {
    auto it = values.find(key);
    return it == values.end() ? nullptr : &it->second;
}

ReferenceTable load_reference_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open reference table '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw validation_error("reference table '" + path + "': " + e.what());
    }
    ReferenceTable t;
    if (!j.contains("values") || !j["values"].is_object())
        throw validation_error("reference table '" + path + "': missing 'values' object");
    for (auto it = j["values"].begin(); it != j["values"].end(); ++it)
        t.values[it.key()] = it.value().get<std::vector<double>>();
    return t;
}

std::string reference_key(CovCase cov, int p, int arm, const std::string& estimator, bool theta) {
    return to_string(cov) + "/p" + std::to_string(p) + "/" + (theta ? std::string("theta") : "a" + std::to_string(arm)) +
           "/" + estimator;
}

std::string default_reference_path() { return std::string(CALSURV_DATA_DIR) + "/reference_values.json"; }

std::vector<RepEstimate> run_one_replication(const ScenarioConfig& cfg, int rep) {
    const SurvivalDataset ds = generate_dataset(cfg, rep);
    const CovariateBasis basis = design_matrix(ds);
    const bool cv = cfg.lambda_policy == "cv";
    const double lam = cv ? -1.0 : std::stod(cfg.lambda_policy);
    PsOptions pso;
    pso.lambda = lam;
    const int arm = cfg.arm;
    const int tmax = cfg.times.empty() ? 1 : *std::max_element(cfg.times.begin(), cfg.times.end());

    // Lazily computed shared pieces.
    std::unique_ptr<RiskEventSets> sets_a, sets_t;
    std::unique_ptr<FittedPS> ml, rml, cal[2], rcal[2];
    auto arm_sets = [&]() -> const RiskEventSets& {
        if (!sets_a) sets_a = std::make_unique<RiskEventSets>(risk_event_sets(ds, build_time_grid(ds, {arm})));
        return *sets_a;
    };
    auto theta_sets = [&]() -> const RiskEventSets& {
        if (!sets_t) sets_t = std::make_unique<RiskEventSets>(risk_event_sets(ds, build_time_grid(ds, {0, 1})));
        return *sets_t;
    };
    auto get_ml = [&]() -> const FittedPS& {
        if (!ml) ml = std::make_unique<FittedPS>(fit_ps_ml(ds, basis));
        return *ml;
    };
    auto get_rml = [&]() -> const FittedPS& {
        if (!rml) rml = std::make_unique<FittedPS>(fit_ps_rml(ds, basis, pso));
        return *rml;
    };
    auto get_cal = [&](int a) -> const FittedPS& {
        if (!cal[a]) cal[a] = std::make_unique<FittedPS>(fit_ps_cal(ds, basis, a, pso));
        return *cal[a];
    };
    auto get_rcal = [&](int a) -> const FittedPS& {
        if (!rcal[a]) rcal[a] = std::make_unique<FittedPS>(fit_ps_rcal(ds, basis, a, pso));
        return *rcal[a];
    };
    auto survival_record = [&](RepEstimate& r, const SurvivalFit& f, const std::vector<double>& var) {
        for (int t : cfg.times) {
            if (t > f.K || !std::isfinite(f.S[t]) || !std::isfinite(var[t]))
                throw numerical_error("estimate unavailable at grid index " + std::to_string(t));
            r.est.push_back(f.S[t]);
            r.var.push_back(var[t]);
        }
    };

    std::vector<RepEstimate> out;
    std::unique_ptr<RegularizedTheta> rc;
    for (const auto& name : cfg.estimators) {
        RepEstimate r;
        r.estimator = name;
        try {
            if (name == "KM") {
                const SurvivalFit f = km(ds, arm_sets(), arm);
                survival_record(r, f, f.Vb);
            } else if (name == "wKM" || name == "wKM_RML") {
                const Eigen::VectorXd w = (name == "wKM" ? get_ml() : get_rml()).weights(arm);
                const SurvivalFit f = km(ds, arm_sets(), arm, &w);
                survival_record(r, f, f.Vr);
            } else if (name == "CAL" || name == "CAL_lin" || name == "RCAL" || name == "RCAL_lin") {
                const bool reg = name[0] == 'R';
                OrOptions oo;
                oo.link = (name.size() > 4 && name.substr(name.size() - 4) == "_lin") ? OrLink::Linear : OrLink::Logistic;
                oo.regularized = reg;
                oo.lambda = lam;
                oo.cv_k = cfg.times.empty() ? -1 : cfg.times.front();
                oo.k_max = tmax;
                const SurvivalFit f = s_cal_from_ps(ds, basis, arm_sets(), reg ? get_rcal(arm) : get_cal(arm), arm, oo);
                survival_record(r, f, f.Vr);
            } else if (name == "BP") {
                const ThetaFit f = theta_bp(ds, theta_sets());
                r.est = {f.theta};
                r.var = {f.Vr};
            } else if (name == "wBP" || name == "wBP_RML") {
                const ThetaFit f = theta_wbp(ds, theta_sets(), name == "wBP" ? get_ml() : get_rml());
                r.est = {f.theta};
                r.var = {f.Vr};
            } else if (name == "tCAL" || name == "tCAL_lin") {
                const bool lin = name == "tCAL_lin";
                OrOptions oo;
                oo.link = lin ? OrLink::Linear : OrLink::Logistic;
                const RiskEventSets& st = theta_sets();
                const SurvivalFit s1 = s_cal_from_ps(ds, basis, st, get_cal(1), 1, oo);
                const SurvivalFit s0 = s_cal_from_ps(ds, basis, st, get_cal(0), 0, oo);
                const RiskSetMethod m = lin ? RiskSetMethod::CAL_lin : RiskSetMethod::CAL;
                const RiskSetWeights r1 = riskset_weights(ds, basis, st, get_cal(1), 1, m);
                const RiskSetWeights r0 = riskset_weights(ds, basis, st, get_cal(0), 0, m);
                const ThetaFit f = theta_cal_from_fits(ds, s1, s0, r1, r0, lin ? ThetaEstimator::CAL_lin : ThetaEstimator::CAL);
                r.est = {f.theta};
                r.var = {f.Vr};
            } else if (name == "RCw" || name == "RCa") {
                if (!rc) {
                    RegularizedThetaOptions ro;
                    ro.ps = pso;
                    ro.zeta_lambda = lam;
                    rc = std::make_unique<RegularizedTheta>(
                        theta_rc_from_ps(ds, basis, theta_sets(), get_rcal(1), get_rcal(0), ro));
                }
                const ThetaFit& f = name == "RCw" ? rc->rcw : rc->rca;
                r.est = {f.theta};
                r.var = {f.Vr};
            }
            r.ok = true;
            for (size_t j = 0; j < r.est.size(); ++j)
                if (!std::isfinite(r.est[j]) || !std::isfinite(r.var[j])) r.ok = false;
            if (!r.ok) r.error = "non-finite estimate or variance";
        } catch (const std::exception& e) {
            r.ok = false;
            r.error = e.what();
            r.est.clear();
            r.var.clear();
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<SummaryRow> summarize(const std::vector<std::vector<RepEstimate>>& per_rep,
                                  const ScenarioConfig& cfg, const ReferenceTable& targets) {
    const double z90 = 1.6448536269514722, z95 = 1.959963984540054;
    std::vector<SummaryRow> rows;
    for (size_t e = 0; e < cfg.estimators.size(); ++e) {
        const std::string& name = cfg.estimators[e];
        const bool theta = is_theta(name);
        const int slots = theta ? 1 : static_cast<int>(cfg.times.size());
        const std::vector<double>* ref = targets.find(reference_key(cfg.cov, cfg.p, cfg.arm, name, theta));
        if (!ref) ref = targets.find(reference_key(cfg.cov, cfg.p, cfg.arm, "truth", theta));
        for (int j = 0; j < slots; ++j) {
            SummaryRow row;
            row.estimator = name;
            row.time = theta ? -1 : cfg.times[j];
            row.target = kNaN;
            if (ref) {
                if (theta) {
                    row.target = ref->at(0);
                } else {
                    auto it = std::find(kTableTimes.begin(), kTableTimes.end(), cfg.times[j]);
                    if (it != kTableTimes.end() && ref->size() == kTableTimes.size())
                        row.target = (*ref)[it - kTableTimes.begin()];
                }
            }
            double sum = 0.0, sumsq = 0.0, sumv = 0.0, c90 = 0.0, c95 = 0.0, l90 = 0.0, l95 = 0.0;
            std::vector<double> ests;
            for (const auto& rep : per_rep) {
                const RepEstimate& r = rep.at(e);
                if (!r.ok) {
                    ++row.n_failed;
                    continue;
                }
                const double x = r.est[j], v = r.var[j], se = std::sqrt(v);
                ests.push_back(x);
                sumv += v;
                c90 += std::abs(x - row.target) <= z90 * se;
                c95 += std::abs(x - row.target) <= z95 * se;
                l90 += 2 * z90 * se;
                l95 += 2 * z95 * se;
            }
            row.n_ok = static_cast<int>(ests.size());
            if (row.n_ok > 0) {
                for (double x : ests) sum += x;
                const double mean = sum / row.n_ok;
                for (double x : ests) sumsq += (x - mean) * (x - mean);
                row.bias = mean - row.target;
                row.sd = row.n_ok > 1 ? std::sqrt(sumsq / (row.n_ok - 1)) : 0.0;
                row.sqrt_evar = std::sqrt(sumv / row.n_ok);
                row.cov90 = c90 / row.n_ok;
                row.cov95 = c95 / row.n_ok;
                row.len90 = l90 / row.n_ok;
                row.len95 = l95 / row.n_ok;
            } else {
                row.bias = row.sd = row.sqrt_evar = row.cov90 = row.cov95 = row.len90 = row.len95 = kNaN;
            }
            rows.push_back(row);
        }
    }
    return rows;
}

ReplicationSummary run_replications(const ScenarioConfig& cfg, const ReferenceTable& targets) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    ReplicationSummary s;
    s.cfg = cfg;
    s.reps = cfg.reps;
    s.per_rep.assign(cfg.reps, {});
    parallel_for(cfg.reps, cfg.jobs, [&](int rep) { s.per_rep[rep] = run_one_replication(cfg, rep); });
    if (cfg.reps > 0) s.rows = summarize(s.per_rep, cfg, targets);
    for (const auto& row : s.rows) {
        if (row.n_failed > 0 && (row.time == -1 || row.time == cfg.times.front()))
            s.notes.push_back(row.estimator + ": " + std::to_string(row.n_failed) + " replication(s) excluded after failure");
        if (std::isnan(row.target))
            s.notes.push_back(row.estimator + (row.time >= 0 ? " at " + std::to_string(row.time) : std::string()) +
                              ": no reference value; bias and coverage undefined");
    }
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return s;
}

std::string format_summary(const ReplicationSummary& s) {
    std::ostringstream os;
    os << "case " << to_string(s.cfg.cov) << ", n = " << s.cfg.n << ", p = " << s.cfg.p << ", reps = " << s.reps
       << ", seed = " << s.cfg.seed << "\n";
    os << std::left << std::setw(10) << "estimator" << std::right << std::setw(6) << "time" << std::setw(9)
       << "target" << std::setw(9) << "Bias" << std::setw(9) << "sqrtVar" << std::setw(10) << "sqrtEVar"
       << std::setw(17) << "Cov90(L90)" << std::setw(17) << "Cov95(L95)" << std::setw(6) << "ok" << "\n";
    os << std::fixed << std::setprecision(3);
    for (const auto& r : s.rows) {
        std::ostringstream c90, c95;
        c90 << std::fixed << std::setprecision(3) << r.cov90 << " (" << r.len90 << ")";
        c95 << std::fixed << std::setprecision(3) << r.cov95 << " (" << r.len95 << ")";
        os << std::left << std::setw(10) << r.estimator << std::right << std::setw(6)
           << (r.time >= 0 ? std::to_string(r.time) : std::string("-")) << std::setw(9) << r.target
           << std::setw(9) << r.bias << std::setw(9) << r.sd << std::setw(10) << r.sqrt_evar << std::setw(17)
           << c90.str() << std::setw(17) << c95.str() << std::setw(6) << r.n_ok << "\n";
    }
    for (const auto& note : s.notes) os << "note: " << note << "\n";
    return os.str();
}

} // namespace calsurv
