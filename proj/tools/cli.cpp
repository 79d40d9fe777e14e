#include "cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "calsurv/data.hpp"
#include "calsurv/errors.hpp"
#include "calsurv/hazard.hpp"
#include "calsurv/propensity.hpp"
#include "calsurv/sim.hpp"
#include "calsurv/survival.hpp"
#include "json.hpp"

namespace calsurv::cli {
namespace {

using nlohmann::json;

enum class LogLevel { Quiet, Warn, Info, Debug };

// CALSURV_LOG: quiet | warn (default) | info | debug.
LogLevel log_level_from_env() {
    const char* v = std::getenv("CALSURV_LOG");
    if (!v) return LogLevel::Warn;
    const std::string s(v);
    if (s == "quiet" || s == "error") return LogLevel::Quiet;
    if (s == "info") return LogLevel::Info;
    if (s == "debug") return LogLevel::Debug;
    return LogLevel::Warn;
}

struct Logger {
    std::ostream& err;
    LogLevel level;
    void warn(const std::string& msg) const {
        if (level >= LogLevel::Warn) err << "warning: " << msg << "\n";
    }
    void info(const std::string& msg) const {
        if (level >= LogLevel::Info) err << "info: " << msg << "\n";
    }
};

json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json to_json(const std::vector<char>& v) {
    std::vector<bool> b(v.begin(), v.end());
    return b;
}

std::vector<double> sqrt_all(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = std::sqrt(v[i]);
    return out;
}

struct OutputOptions {
    std::string path;
    bool timing = false;
    std::string format = "json";
};

struct DataOptions {
    std::string path;
    CsvSchema schema;
    bool interactions = false;
    double support = 0.0;
};

struct Loaded {
    SurvivalDataset ds;
    CovariateBasis basis;
    std::vector<std::string> warnings;
};

void add_output_options(CLI::App* sub, OutputOptions& o) {
    sub->add_option("--out", o.path, "Write output to this file instead of stdout");
    sub->add_flag("--timing", o.timing, "Record wall-clock seconds in the manifest (output no longer byte-stable)");
}

void add_data_options(CLI::App* sub, DataOptions& d) {
    sub->add_option("--data", d.path, "CSV file with time, event, treatment and covariate columns")->required();
    sub->add_option("--time-col", d.schema.time, "Time column name")->capture_default_str();
    sub->add_option("--event-col", d.schema.event, "Event indicator column name")->capture_default_str();
    sub->add_option("--treat-col", d.schema.treat, "Treatment column name")->capture_default_str();
    sub->add_option("--covariate-prefix", d.schema.covariate_prefix, "Covariate columns are <prefix>1, <prefix>2, ...")
        ->capture_default_str();
    sub->add_flag("--interactions", d.interactions, "Add pairwise interactions to the covariate basis");
    sub->add_option("--support", d.support, "Minimum nonzero fraction for an interaction column")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
}

json data_config(const DataOptions& d) {
    return {{"data", d.path},
            {"time_col", d.schema.time},
            {"event_col", d.schema.event},
            {"treat_col", d.schema.treat},
            {"covariate_prefix", d.schema.covariate_prefix},
            {"interactions", d.interactions},
            {"support", d.support}};
}

Loaded load(const DataOptions& d) {
    Loaded l;
    l.ds = load_csv(d.path, d.schema, &l.warnings);
    BasisSpec spec;
    spec.interactions = d.interactions;
    spec.support_threshold = d.support;
    l.basis = design_matrix(l.ds, spec, &l.warnings);
    return l;
}

json input_record(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    const auto bytes = in ? static_cast<long long>(in.tellg()) : -1LL;
    return {{"path", path}, {"sha256", file_digest(path)}, {"bytes", bytes}};
}

json make_manifest(const std::string& command, json config, json inputs, const json& seed,
                   const OutputOptions& o, std::chrono::steady_clock::time_point start) {
    json m = {{"schema_version", kSchemaVersion},
              {"artifact_version", kArtifactVersion},
              {"command", command},
              {"config", std::move(config)},
              {"inputs", std::move(inputs)},
              {"seed", seed}};
    if (o.timing)
        m["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return m;
}

void emit_text(const std::string& text, const OutputOptions& o, std::ostream& out) {
    if (o.path.empty()) {
        out << text;
        return;
    }
    std::ofstream f(o.path, std::ios::binary);
    if (!f) throw validation_error("cannot write output file '" + o.path + "'");
    f << text;
}

void emit(const json& doc, const OutputOptions& o, std::ostream& out) { emit_text(doc.dump(2) + "\n", o, out); }

double parse_lambda(const std::string& s, const std::string& what) {
    if (s == "cv") return -1.0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || !(v >= 0))
        throw validation_error(what + " must be 'cv' or a nonnegative number, got '" + s + "'");
    return v;
}

json ps_json(const FittedPS& ps) {
    return {{"method", to_string(ps.method)},
            {"arm", ps.arm},
            {"lambda", ps.lambda},
            {"names", ps.names},
            {"gamma", to_json(ps.gamma)},
            {"capped", ps.capped},
            {"flags", ps.flags}};
}

// Propensity fit by name; `arm` selects the calibration target for cal/rcal.
FittedPS fit_named_ps(const std::string& name, const Loaded& l, int arm, const PsOptions& pso) {
    if (name == "ml") return fit_ps_ml(l.ds, l.basis, pso);
    if (name == "rml") return fit_ps_rml(l.ds, l.basis, pso);
    if (name == "cal") return fit_ps_cal(l.ds, l.basis, arm, pso);
    if (name == "rcal") return fit_ps_rcal(l.ds, l.basis, arm, pso);
    throw validation_error("unknown propensity method '" + name + "'");
}

json survival_json(const SurvivalFit& f, const SurvivalDataset& ds, bool influence) {
    std::vector<int> grid(f.K + 1);
    std::vector<double> times(f.K + 1);
    for (int g = 0; g <= f.K; ++g) {
        grid[g] = g;
        times[g] = ds.label(g);
    }
    json j = {{"estimator", to_string(f.tag)},
              {"arm", f.arm},
              {"K", f.K},
              {"grid", grid},
              {"times", times},
              {"S", f.S},
              {"q", f.q},
              {"Vb", f.Vb},
              {"Vb0", f.Vb0},
              {"Vr", f.Vr},
              {"se_b", sqrt_all(f.Vb)},
              {"se_r", sqrt_all(f.Vr)},
              {"missing", to_json(f.missing)},
              {"or_lambda", f.or_lambda},
              {"normalization_residual", f.normalization_residual},
              {"flags", f.flags}};
    if (influence) {
        json rows = json::array();
        for (int i = 0; i < f.phi.rows(); ++i) rows.push_back(to_json(Eigen::VectorXd(f.phi.row(i).transpose())));
        j["phi"] = rows;
    }
    return j;
}

json theta_json(const ThetaFit& f, bool contributions) {
    int used = 0;
    for (char u : f.terms.used) used += u ? 1 : 0;
    json j = {{"estimator", to_string(f.tag)},
              {"theta", f.theta},
              {"hazard_ratio", std::exp(f.theta)},
              {"se", f.se()},
              {"Vr", f.Vr},
              {"Vb0", f.Vb0},
              {"H", f.H},
              {"G", f.G},
              {"estimating_value", f.estimating_value},
              {"K", f.terms.K},
              {"terms_used", used},
              {"terms_dropped", f.terms.dropped},
              {"flags", f.flags}};
    if (f.zeta1.size() > 0 || f.zeta0.size() > 0) {
        j["zeta1"] = to_json(f.zeta1);
        j["zeta0"] = to_json(f.zeta0);
        j["zeta_lambda1"] = f.zeta_lambda1;
        j["zeta_lambda0"] = f.zeta_lambda0;
    }
    if (contributions) j["contributions"] = to_json(f.contributions);
    return j;
}

void log_flags(const Logger& log, const std::vector<std::string>& flags) {
    for (const auto& f : flags) log.warn(f);
}

// ---------------------------------------------------------------- survival

struct SurvivalArgs {
    DataOptions data;
    OutputOptions out;
    int arm = 1;
    std::string estimator = "wkm";
    std::string ps = "ml";
    std::string lambda = "cv";
    std::string or_lambda = "cv";
    int k_max = -1;
    int cv_k = -1;
    bool influence = false;
};

CLI::App* add_survival(CLI::App& app, SurvivalArgs& a) {
    auto* sub = app.add_subcommand("survival", "Survival curve of one treatment arm");
    add_data_options(sub, a.data);
    add_output_options(sub, a.out);
    sub->add_option("--arm", a.arm, "Treatment arm (0 or 1)")->check(CLI::IsMember({0, 1}))->capture_default_str();
    sub->add_option("--estimator", a.estimator, "km | wkm | cal | cal-lin | rcal | rcal-lin | rcw")
        ->check(CLI::IsMember({"km", "wkm", "cal", "cal-lin", "rcal", "rcal-lin", "rcw"}))
        ->capture_default_str();
    sub->add_option("--ps", a.ps, "Propensity fit for wkm: ml | cal | rml | rcal")
        ->check(CLI::IsMember({"ml", "cal", "rml", "rcal"}))
        ->capture_default_str();
    sub->add_option("--lambda", a.lambda, "Propensity penalty: 'cv' or a nonnegative number")->capture_default_str();
    sub->add_option("--or-lambda", a.or_lambda, "Outcome-model penalty for rcal/rcal-lin: 'cv' or a number")
        ->capture_default_str();
    sub->add_option("--k-max", a.k_max, "Fit outcome models up to this grid index (default: all)");
    sub->add_option("--cv-k", a.cv_k, "Grid index used to cross-validate the outcome penalty (default: K/2)");
    sub->add_flag("--influence", a.influence, "Include per-subject influence values");
    return sub;
}

json run_survival(const SurvivalArgs& a, const Logger& log, const std::string& command) {
    const auto start = std::chrono::steady_clock::now();
    PsOptions pso;
    pso.lambda = parse_lambda(a.lambda, "--lambda");
    OrOptions oo;
    oo.lambda = parse_lambda(a.or_lambda, "--or-lambda");
    oo.k_max = a.k_max;
    oo.cv_k = a.cv_k;

    Loaded l = load(a.data);
    log_flags(log, l.warnings);
    const RiskEventSets sets = risk_event_sets(l.ds, build_time_grid(l.ds, {a.arm}));
    log.info("grid K = " + std::to_string(sets.K));

    std::unique_ptr<FittedPS> ps;
    SurvivalFit fit;
    const std::string& e = a.estimator;
    if (e == "km") {
        fit = km(l.ds, sets, a.arm);
    } else if (e == "wkm") {
        ps = std::make_unique<FittedPS>(fit_named_ps(a.ps, l, a.arm, pso));
        const Eigen::VectorXd w = ps->weights(a.arm);
        fit = km(l.ds, sets, a.arm, &w);
    } else if (e == "rcw") {
        ps = std::make_unique<FittedPS>(fit_ps_rcal(l.ds, l.basis, a.arm, pso));
        fit = s_rcw_from_ps(l.ds, sets, *ps, a.arm);
    } else {
        const bool reg = e[0] == 'r';
        oo.regularized = reg;
        oo.link = e.size() > 4 && e.substr(e.size() - 4) == "-lin" ? OrLink::Linear : OrLink::Logistic;
        ps = std::make_unique<FittedPS>(reg ? fit_ps_rcal(l.ds, l.basis, a.arm, pso)
                                            : fit_ps_cal(l.ds, l.basis, a.arm, pso));
        fit = s_cal_from_ps(l.ds, l.basis, sets, *ps, a.arm, oo);
    }
    log_flags(log, fit.flags);
    if (ps) log_flags(log, ps->flags);

    json config = data_config(a.data);
    config.update({{"arm", a.arm},
                   {"estimator", a.estimator},
                   {"ps", a.ps},
                   {"lambda", a.lambda},
                   {"or_lambda", a.or_lambda},
                   {"k_max", a.k_max},
                   {"cv_k", a.cv_k},
                   {"influence", a.influence}});
    json doc = {{"manifest", make_manifest(command, config, json::array({input_record(a.data.path)}), nullptr, a.out, start)},
                {"fit", survival_json(fit, l.ds, a.influence)},
                {"warnings", l.warnings}};
    doc["propensity"] = ps ? ps_json(*ps) : json(nullptr);
    return doc;
}

// ---------------------------------------------------------------- hazard

struct HazardArgs {
    DataOptions data;
    OutputOptions out;
    std::string estimator = "wbp";
    std::string ps = "ml";
    std::string lambda = "cv";
    std::string zeta_lambda = "cv";
    bool contributions = false;
};

CLI::App* add_hazard(CLI::App& app, HazardArgs& a) {
    auto* sub = app.add_subcommand("hazard", "Log hazard ratio of arm 1 versus arm 0");
    add_data_options(sub, a.data);
    add_output_options(sub, a.out);
    sub->add_option("--estimator", a.estimator, "bp | wbp | cal | cal-lin | rcw | rca")
        ->check(CLI::IsMember({"bp", "wbp", "cal", "cal-lin", "rcw", "rca"}))
        ->capture_default_str();
    sub->add_option("--ps", a.ps, "Propensity fit for wbp: ml | cal | rml | rcal")
        ->check(CLI::IsMember({"ml", "cal", "rml", "rcal"}))
        ->capture_default_str();
    sub->add_option("--lambda", a.lambda, "Propensity penalty: 'cv' or a nonnegative number")->capture_default_str();
    sub->add_option("--zeta-lambda", a.zeta_lambda, "Augmentation penalty for rca: 'cv' or a number")
        ->capture_default_str();
    sub->add_flag("--contributions", a.contributions, "Include per-subject variance contributions");
    return sub;
}

json run_hazard(const HazardArgs& a, const Logger& log, const std::string& command) {
    const auto start = std::chrono::steady_clock::now();
    PsOptions pso;
    pso.lambda = parse_lambda(a.lambda, "--lambda");
    const double zeta_lambda = parse_lambda(a.zeta_lambda, "--zeta-lambda");

    Loaded l = load(a.data);
    log_flags(log, l.warnings);
    const RiskEventSets sets = risk_event_sets(l.ds, build_time_grid(l.ds, {0, 1}));
    log.info("grid K = " + std::to_string(sets.K));

    std::vector<FittedPS> fits;
    ThetaFit fit;
    const std::string& e = a.estimator;
    if (e == "bp") {
        fit = theta_bp(l.ds, sets);
    } else if (e == "wbp" && (a.ps == "ml" || a.ps == "rml")) {
        fits.push_back(fit_named_ps(a.ps, l, 1, pso));
        fit = theta_wbp(l.ds, sets, fits[0]);
    } else if (e == "wbp") {
        fits.push_back(fit_named_ps(a.ps, l, 1, pso));
        fits.push_back(fit_named_ps(a.ps, l, 0, pso));
        fit = theta_wbp(l.ds, sets, fits[0], fits[1]);
    } else if (e == "cal" || e == "cal-lin") {
        fits.push_back(fit_ps_cal(l.ds, l.basis, 1, pso));
        fits.push_back(fit_ps_cal(l.ds, l.basis, 0, pso));
        OrOptions oo;
        oo.link = e == "cal-lin" ? OrLink::Linear : OrLink::Logistic;
        const RiskSetMethod m = e == "cal-lin" ? RiskSetMethod::CAL_lin : RiskSetMethod::CAL;
        const SurvivalFit s1 = s_cal_from_ps(l.ds, l.basis, sets, fits[0], 1, oo);
        const SurvivalFit s0 = s_cal_from_ps(l.ds, l.basis, sets, fits[1], 0, oo);
        const RiskSetWeights r1 = riskset_weights(l.ds, l.basis, sets, fits[0], 1, m);
        const RiskSetWeights r0 = riskset_weights(l.ds, l.basis, sets, fits[1], 0, m);
        fit = theta_cal_from_fits(l.ds, s1, s0, r1, r0, e == "cal-lin" ? ThetaEstimator::CAL_lin : ThetaEstimator::CAL);
    } else {
        fits.push_back(fit_ps_rcal(l.ds, l.basis, 1, pso));
        fits.push_back(fit_ps_rcal(l.ds, l.basis, 0, pso));
        RegularizedThetaOptions ro;
        ro.ps = pso;
        ro.zeta_lambda = zeta_lambda;
        RegularizedTheta rc = theta_rc_from_ps(l.ds, l.basis, sets, fits[0], fits[1], ro);
        fit = e == "rcw" ? rc.rcw : rc.rca;
    }
    log_flags(log, fit.flags);
    json ps = json::array();
    for (const auto& f : fits) {
        log_flags(log, f.flags);
        ps.push_back(ps_json(f));
    }

    json config = data_config(a.data);
    config.update({{"estimator", a.estimator},
                   {"ps", a.ps},
                   {"lambda", a.lambda},
                   {"zeta_lambda", a.zeta_lambda},
                   {"contributions", a.contributions}});
    return {{"manifest", make_manifest(command, config, json::array({input_record(a.data.path)}), nullptr, a.out, start)},
            {"fit", theta_json(fit, a.contributions)},
            {"propensity", ps},
            {"warnings", l.warnings}};
}

// ---------------------------------------------------------------- balance

struct BalanceArgs {
    DataOptions data;
    OutputOptions out;
    std::string ps = "ml";
    std::string lambda = "cv";
    double threshold = 0.1;
};

CLI::App* add_balance(CLI::App& app, BalanceArgs& a) {
    auto* sub = app.add_subcommand("balance", "Weighted covariate balance between arms");
    add_data_options(sub, a.data);
    add_output_options(sub, a.out);
    sub->add_option("--ps", a.ps, "Weights: none | ml | cal | rml | rcal")
        ->check(CLI::IsMember({"none", "ml", "cal", "rml", "rcal"}))
        ->capture_default_str();
    sub->add_option("--lambda", a.lambda, "Propensity penalty: 'cv' or a nonnegative number")->capture_default_str();
    sub->add_option("--threshold", a.threshold, "Relative difference counted as imbalance")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    return sub;
}

json run_balance(const BalanceArgs& a, const Logger& log, const std::string& command) {
    const auto start = std::chrono::steady_clock::now();
    PsOptions pso;
    pso.lambda = parse_lambda(a.lambda, "--lambda");
    Loaded l = load(a.data);
    log_flags(log, l.warnings);

    std::vector<FittedPS> fits;
    BalanceReport rep;
    if (a.ps == "none") {
        rep = covariate_balance(l.ds, l.basis, nullptr, nullptr, a.threshold);
    } else if (a.ps == "ml" || a.ps == "rml") {
        fits.push_back(fit_named_ps(a.ps, l, 1, pso));
        rep = covariate_balance(l.ds, l.basis, &fits[0], &fits[0], a.threshold);
    } else {
        fits.push_back(fit_named_ps(a.ps, l, 1, pso));
        fits.push_back(fit_named_ps(a.ps, l, 0, pso));
        rep = covariate_balance(l.ds, l.basis, &fits[0], &fits[1], a.threshold);
    }
    json ps = json::array();
    for (const auto& f : fits) {
        log_flags(log, f.flags);
        ps.push_back(ps_json(f));
    }
    json config = data_config(a.data);
    config.update({{"ps", a.ps}, {"lambda", a.lambda}, {"threshold", a.threshold}});
    json balance = {{"names", rep.names},
                    {"mean1", rep.mean1},
                    {"mean0", rep.mean0},
                    {"diff", rep.diff},
                    {"sd", rep.sd},
                    {"rel", rep.rel},
                    {"degenerate", to_json(rep.degenerate)},
                    {"imbalanced", rep.imbalanced},
                    {"min_rel", rep.min_rel},
                    {"max_rel", rep.max_rel}};
    return {{"manifest", make_manifest(command, config, json::array({input_record(a.data.path)}), nullptr, a.out, start)},
            {"balance", balance},
            {"propensity", ps},
            {"warnings", l.warnings}};
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    OutputOptions out;
    std::string config_path;
    std::string cov;
    int n = 0, p = 0, reps = 0, arm = 1, jobs = 1;
    std::uint64_t seed = 0;
    std::vector<int> times;
    std::vector<std::string> estimators;
    std::string lambda;
    bool full = false;
    bool per_rep = false;
    std::string reference;
};

struct SimulateOptions {
    CLI::Option *cov, *n, *p, *reps, *arm, *jobs, *times, *estimators, *lambda;
};

CLI::App* add_simulate(CLI::App& app, SimulateArgs& a, SimulateOptions& o) {
    auto* sub = app.add_subcommand("simulate", "Monte Carlo replications of the simulation design");
    add_output_options(sub, a.out);
    sub->add_option("--format", a.out.format, "json | table")->check(CLI::IsMember({"json", "table"}))->capture_default_str();
    sub->add_option("--config", a.config_path, "Scenario file of 'key = value' lines; flags override it");
    sub->add_option("--seed", a.seed, "Master seed (required)")->required();
    o.cov = sub->add_option("--case", a.cov, "Covariate design C1 | C2")->check(CLI::IsMember({"C1", "C2"}));
    o.n = sub->add_option("--n", a.n, "Sample size")->check(CLI::PositiveNumber);
    o.p = sub->add_option("--p", a.p, "Number of covariates (at least 10)");
    o.reps = sub->add_option("--reps", a.reps, "Number of replications")->check(CLI::NonNegativeNumber);
    o.arm = sub->add_option("--arm", a.arm, "Arm reported by survival estimators")->check(CLI::IsMember({0, 1}));
    o.jobs = sub->add_option("--jobs", a.jobs, "Concurrent replications")->check(CLI::PositiveNumber);
    o.times = sub->add_option("--times", a.times, "Grid indices for survival estimates")->delimiter(',');
    o.estimators = sub->add_option("--estimators", a.estimators, "Comma-separated estimator names")->delimiter(',');
    o.lambda = sub->add_option("--lambda", a.lambda, "Penalty policy: 'cv' or a nonnegative number");
    auto* full = sub->add_flag("--full", a.full, "Run 2000 replications (several hours at p = 200)");
    full->excludes(o.reps);
    sub->add_flag("--per-rep", a.per_rep, "Include every replication's estimates in the JSON");
    sub->add_option("--reference", a.reference, "Reference-value table (default: bundled data file)");
    return sub;
}

json summary_json(const ReplicationSummary& s, bool per_rep) {
    json rows = json::array();
    for (const auto& r : s.rows) {
        rows.push_back({{"estimator", r.estimator},
                        {"time", r.time >= 0 ? json(r.time) : json(nullptr)},
                        {"target", r.target},
                        {"n_ok", r.n_ok},
                        {"n_failed", r.n_failed},
                        {"bias", r.bias},
                        {"sqrt_var", r.sd},
                        {"sqrt_evar", r.sqrt_evar},
                        {"cov90", r.cov90},
                        {"len90", r.len90},
                        {"cov95", r.cov95},
                        {"len95", r.len95}});
    }
    json j = {{"reps", s.reps}, {"rows", rows}, {"notes", s.notes}};
    if (per_rep) {
        json reps = json::array();
        for (const auto& rep : s.per_rep) {
            json one = json::array();
            for (const auto& e : rep)
                one.push_back({{"estimator", e.estimator}, {"ok", e.ok}, {"est", e.est}, {"var", e.var}, {"error", e.error}});
            reps.push_back(one);
        }
        j["per_rep"] = reps;
    }
    return j;
}

void run_simulate(const SimulateArgs& a, const SimulateOptions& o, const Logger& log, const std::string& command,
                  std::ostream& out) {
    const auto start = std::chrono::steady_clock::now();
    ScenarioConfig cfg;
    json inputs = json::array();
    if (!a.config_path.empty()) {
        cfg = load_scenario(a.config_path);
        inputs.push_back(input_record(a.config_path));
    }
    if (o.cov->count()) cfg.cov = parse_cov_case(a.cov);
    if (o.n->count()) cfg.n = a.n;
    if (o.p->count()) cfg.p = a.p;
    if (o.reps->count()) cfg.reps = a.reps;
    if (a.full) cfg.reps = 2000;
    if (o.arm->count()) cfg.arm = a.arm;
    if (o.jobs->count()) cfg.jobs = a.jobs;
    if (o.times->count()) cfg.times = a.times;
    if (o.estimators->count()) cfg.estimators = a.estimators;
    if (o.lambda->count()) cfg.lambda_policy = a.lambda;
    cfg.seed = a.seed;
    cfg.validate();

    const std::string ref_path = a.reference.empty() ? default_reference_path() : a.reference;
    const ReferenceTable targets = load_reference_table(ref_path);
    inputs.push_back(input_record(ref_path));
    log.info("running " + std::to_string(cfg.reps) + " replications");
    const ReplicationSummary s = run_replications(cfg, targets);
    for (const auto& note : s.notes) log.warn(note);

    if (a.out.format == "table") {
        emit_text(format_summary(s), a.out, out);
        return;
    }
    json config = {{"case", to_string(cfg.cov)}, {"n", cfg.n},       {"p", cfg.p},
                   {"reps", cfg.reps},            {"arm", cfg.arm},   {"times", cfg.times},
                   {"estimators", cfg.estimators}, {"lambda_policy", cfg.lambda_policy},
                   {"jobs", cfg.jobs},            {"reference", ref_path}};
    json doc = {{"manifest", make_manifest(command, config, inputs, cfg.seed, a.out, start)},
                {"summary", summary_json(s, a.per_rep)}};
    emit(doc, a.out, out);
}

// ---------------------------------------------------------------- oracle

struct OracleArgs {
    OutputOptions out;
    std::vector<std::string> cases{"C1"};
    std::uint64_t seed = 0;
    std::vector<int> times{60, 90, 120};
    int draws = 100000;
    int repeats = 20;
    int jobs = 1;
};

CLI::App* add_oracle(CLI::App& app, OracleArgs& a) {
    auto* sub = app.add_subcommand("oracle", "Brute-force Monte Carlo truths of the simulation design");
    add_output_options(sub, a.out);
    sub->add_option("--format", a.out.format, "json | table")->check(CLI::IsMember({"json", "table"}))->capture_default_str();
    sub->add_option("--case", a.cases, "Covariate designs (C1, C2)")
        ->delimiter(',')
        ->check(CLI::IsMember({"C1", "C2"}))
        ->capture_default_str();
    sub->add_option("--seed", a.seed, "Master seed (required)")->required();
    sub->add_option("--times", a.times, "Grid indices")->delimiter(',')->capture_default_str();
    sub->add_option("--draws", a.draws, "Draws per treatment group per repeat")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--repeats", a.repeats, "Independent repeats")->check(CLI::Range(2, 1000000))->capture_default_str();
    sub->add_option("--jobs", a.jobs, "Concurrent repeats")->check(CLI::PositiveNumber)->capture_default_str();
    return sub;
}

void run_oracle(const OracleArgs& a, const Logger& log, const std::string& command, std::ostream& out) {
    const auto start = std::chrono::steady_clock::now();
    for (int t : a.times)
        if (t < 1 || t > 399) throw validation_error("oracle times must be grid indices in 1..399");
    OracleOptions opt;
    opt.draws = a.draws;
    opt.repeats = a.repeats;
    opt.jobs = a.jobs;
    std::vector<OracleResult> results;
    for (const auto& c : a.cases) {
        log.info("oracle for case " + c);
        results.push_back(oracle_truth(parse_cov_case(c), a.times, a.seed, opt));
    }
    if (a.out.format == "table") {
        std::ostringstream os;
        os << std::fixed << std::setprecision(3);
        for (const auto& r : results) {
            os << "case " << to_string(r.cov) << " (" << r.repeats << " x " << opt.draws << " draws, acceptance "
               << std::setprecision(4) << r.acceptance << std::setprecision(3) << ")\n";
            os << std::setw(6) << "time" << std::setw(18) << "S1 (sd)" << std::setw(18) << "S0 (sd)" << "\n";
            for (size_t j = 0; j < r.times.size(); ++j) {
                std::ostringstream s1, s0;
                s1 << std::fixed << std::setprecision(3) << r.S1[j] << " (" << r.S1_sd[j] << ")";
                s0 << std::fixed << std::setprecision(3) << r.S0[j] << " (" << r.S0_sd[j] << ")";
                os << std::setw(6) << r.times[j] << std::setw(18) << s1.str() << std::setw(18) << s0.str() << "\n";
            }
            os << "theta " << r.theta << " (" << r.theta_sd << ")\n";
        }
        emit_text(os.str(), a.out, out);
        return;
    }
    json list = json::array();
    for (const auto& r : results) {
        list.push_back({{"case", to_string(r.cov)},
                        {"times", r.times},
                        {"S1", r.S1},
                        {"S1_sd", r.S1_sd},
                        {"S0", r.S0},
                        {"S0_sd", r.S0_sd},
                        {"G1", r.G1},
                        {"G0", r.G0},
                        {"theta", r.theta},
                        {"theta_sd", r.theta_sd},
                        {"repeats", r.repeats},
                        {"acceptance", r.acceptance}});
    }
    json config = {{"cases", a.cases}, {"times", a.times}, {"draws", a.draws}, {"repeats", a.repeats}, {"jobs", a.jobs}};
    emit({{"manifest", make_manifest(command, config, json::array(), a.seed, a.out, start)}, {"oracle", list}}, a.out,
         out);
}

std::string join(const std::vector<std::string>& args) {
    std::string s = "calsurv";
    for (const auto& a : args) s += " " + a;
    return s;
}

} // namespace

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("cannot open file '" + path + "'");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 initialization failed");
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Calibrated survival and hazard-ratio estimation for observational data"};
    app.name("calsurv");
    app.require_subcommand(1);

    SurvivalArgs sa;
    HazardArgs ha;
    BalanceArgs ba;
    SimulateArgs ma;
    SimulateOptions mo{};
    OracleArgs oa;
    auto* survival = add_survival(app, sa);
    auto* hazard = add_hazard(app, ha);
    auto* balance = add_balance(app, ba);
    auto* simulate = add_simulate(app, ma, mo);
    auto* oracle = add_oracle(app, oa);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitValidation;
    }

    const Logger log{err, log_level_from_env()};
    const std::string command = join(args);
    try {
        if (survival->parsed()) emit(run_survival(sa, log, command), sa.out, out);
        else if (hazard->parsed()) emit(run_hazard(ha, log, command), ha.out, out);
        else if (balance->parsed()) emit(run_balance(ba, log, command), ba.out, out);
        else if (simulate->parsed()) run_simulate(ma, mo, log, command, out);
        else if (oracle->parsed()) run_oracle(oa, log, command, out);
    } catch (const validation_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const numerical_error& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}

} // namespace calsurv::cli
