#include "calsurv/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace calsurv {

void SurvivalDataset::validate() const {
    if (n < 1) throw validation_error("dataset has no subjects");
    if (static_cast<int>(y.size()) != n || static_cast<int>(delta.size()) != n ||
        static_cast<int>(a.size()) != n)
        throw validation_error("dataset vectors have inconsistent lengths");
    if (x.rows() != n || x.cols() != p)
        throw validation_error("covariate matrix has wrong shape");
    for (int i = 0; i < n; ++i) {
        if (delta[i] != 0 && delta[i] != 1)
            throw validation_error("event indicator not binary at row " + std::to_string(i + 1));
        if (a[i] != 0 && a[i] != 1)
            throw validation_error("treatment not binary at row " + std::to_string(i + 1));
        if (y[i] < 0) throw validation_error("negative time index at row " + std::to_string(i + 1));
        if (y[i] == 0 && delta[i] == 1)
            throw validation_error("event at time 0 at row " + std::to_string(i + 1));
        for (int j = 0; j < p; ++j)
            if (!std::isfinite(x(i, j)))
                throw validation_error("non-finite covariate at row " + std::to_string(i + 1));
    }
}

int SurvivalDataset::count_arm(int arm) const {
    return static_cast<int>(std::count(a.begin(), a.end(), arm));
}

int SurvivalDataset::events_in_arm(int arm) const {
    int c = 0;
    for (int i = 0; i < n; ++i) c += (a[i] == arm && delta[i] == 1);
    return c;
}

int SurvivalDataset::max_y() const {
    return y.empty() ? 0 : *std::max_element(y.begin(), y.end());
}

double SurvivalDataset::label(int g) const {
    if (g >= 0 && g < static_cast<int>(labels.size())) return labels[g];
    return static_cast<double>(g);
}

SurvivalDataset make_dataset(std::vector<int> y, std::vector<int> delta, std::vector<int> a,
                             Eigen::MatrixXd x) {
    SurvivalDataset ds;
    ds.n = static_cast<int>(y.size());
    ds.p = static_cast<int>(x.cols());
    ds.y = std::move(y);
    ds.delta = std::move(delta);
    ds.a = std::move(a);
    ds.x = std::move(x);
    ds.validate();
    return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') {
            quoted = !quoted;
        } else if (c == ',' && !quoted) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    for (auto& s : out) {
        auto b = s.find_first_not_of(" \t");
        auto e = s.find_last_not_of(" \t");
        s = (b == std::string::npos) ? std::string() : s.substr(b, e - b + 1);
    }
    return out;
}

double parse_number(const std::string& s, int row, const std::string& col) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw validation_error("non-numeric value '" + s + "' in column " + col + " at line " +
                               std::to_string(row));
    }
}

int parse_binary(const std::string& s, int row, const std::string& col) {
    double v = parse_number(s, row, col);
    if (v != 0.0 && v != 1.0)
        throw validation_error("column " + col + " must be 0/1, got '" + s + "' at line " +
                               std::to_string(row));
    return static_cast<int>(v);
}

} // namespace

SurvivalDataset parse_csv(std::istream& in, const CsvSchema& schema,
                          std::vector<std::string>* warnings) {
    std::string line;
    if (!std::getline(in, line)) throw validation_error("empty CSV input");
    auto header = split_csv_line(line);
    std::map<std::string, int> col;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) col[header[c]] = c;
    for (const auto& req : {schema.time, schema.event, schema.treat})
        if (!col.count(req)) throw validation_error("missing column '" + req + "'");
    std::vector<int> xcols;
    for (int j = 1;; ++j) {
        auto it = col.find(schema.covariate_prefix + std::to_string(j));
        if (it == col.end()) break;
        xcols.push_back(it->second);
    }
    if (xcols.empty())
        throw validation_error("missing covariate columns '" + schema.covariate_prefix + "1'...");

    std::vector<double> times;
    std::vector<int> delta, a;
    std::vector<std::vector<double>> xs;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto f = split_csv_line(line);
        if (f.size() != header.size())
            throw validation_error("line " + std::to_string(row) + " has " +
                                   std::to_string(f.size()) + " fields, expected " +
                                   std::to_string(header.size()));
        double t = parse_number(f[col[schema.time]], row, schema.time);
        if (!std::isfinite(t)) throw validation_error("non-finite time at line " + std::to_string(row));
        int d = parse_binary(f[col[schema.event]], row, schema.event);
        int tr = parse_binary(f[col[schema.treat]], row, schema.treat);
        if (t <= 0 && d == 1)
            throw validation_error("event at non-positive time at line " + std::to_string(row));
        std::vector<double> xr;
        for (size_t j = 0; j < xcols.size(); ++j)
            xr.push_back(parse_number(f[xcols[j]], row,
                                      schema.covariate_prefix + std::to_string(j + 1)));
        times.push_back(t);
        delta.push_back(d);
        a.push_back(tr);
        xs.push_back(std::move(xr));
    }
    if (times.empty()) throw validation_error("CSV has no data rows");

    std::vector<double> distinct;
    for (double t : times)
        if (t > 0) distinct.push_back(t);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    const int n = static_cast<int>(times.size());
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
        if (times[i] <= 0) {
            y[i] = 0;
        } else {
            y[i] = 1 + static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), times[i]) -
                                        distinct.begin());
        }
    }
    Eigen::MatrixXd x(n, static_cast<int>(xcols.size()));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < x.cols(); ++j) x(i, j) = xs[i][j];

    SurvivalDataset ds = make_dataset(std::move(y), std::move(delta), std::move(a), std::move(x));
    ds.labels.push_back(0.0);
    ds.labels.insert(ds.labels.end(), distinct.begin(), distinct.end());
    if (warnings && (ds.count_arm(0) == 0 || ds.count_arm(1) == 0))
        warnings->push_back("only one treatment arm present");
    return ds;
}

SurvivalDataset load_csv(const std::string& path, const CsvSchema& schema,
                         std::vector<std::string>* warnings) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open file '" + path + "'");
    return parse_csv(in, schema, warnings);
}

TimeGrid build_time_grid(const SurvivalDataset& ds, const std::vector<int>& scope) {
    if (scope.empty()) throw validation_error("time grid scope is empty");
    int K = -1;
    for (int arm : scope) {
        int kmax = 0;
        for (int i = 0; i < ds.n; ++i)
            if (ds.a[i] == arm && ds.delta[i] == 1) kmax = std::max(kmax, ds.y[i]);
        if (kmax == 0)
            throw validation_error("empty grid: no observed events in arm " + std::to_string(arm));
        K = (K < 0) ? kmax : std::min(K, kmax);
    }
    TimeGrid g;
    g.K = K;
    g.u.resize(K + 1);
    for (int k = 0; k <= K; ++k) g.u[k] = ds.label(k);
    return g;
}

RiskEventSets risk_event_sets(const SurvivalDataset& ds, const TimeGrid& grid) {
    RiskEventSets s;
    s.K = grid.K;
    s.n = ds.n;
    s.y = ds.y;
    s.delta = ds.delta;
    for (int i = 0; i < ds.n; ++i) {
        if (s.y[i] > grid.K + 1) {
            s.y[i] = grid.K + 1;
            s.delta[i] = 0;
            ++s.truncated;
        }
    }
    s.I.assign(grid.K + 1, {});
    s.J.assign(grid.K + 1, {});
    for (int i = 0; i < ds.n; ++i) {
        const int top = std::min(s.y[i], grid.K);
        for (int k = 0; k <= top; ++k) s.I[k].push_back(i);
        if (s.delta[i] == 1 && s.y[i] >= 1 && s.y[i] <= grid.K) s.J[s.y[i]].push_back(i);
    }
    return s;
}

Eigen::MatrixXd RiskEventSets::R() const {
    Eigen::MatrixXd r(K + 1, n);
    for (int k = 0; k <= K; ++k)
        for (int i = 0; i < n; ++i) r(k, i) = y[i] >= k ? 1.0 : 0.0;
    return r;
}

Eigen::MatrixXd RiskEventSets::Rbar() const {
    Eigen::MatrixXd r = R();
    for (int i = 0; i < n; ++i) {
        r(0, i) = 1.0;
        for (int k = 1; k <= K; ++k) r(k, i) *= r(k - 1, i);
    }
    return r;
}

CovariateBasis design_matrix(const SurvivalDataset& ds, const BasisSpec& spec,
                             std::vector<std::string>* warnings) {
    if (ds.p < 1) throw validation_error("design matrix needs at least one covariate");
    const int n = ds.n;
    std::vector<Eigen::VectorXd> cols;
    CovariateBasis b;
    cols.push_back(Eigen::VectorXd::Ones(n));
    b.terms.push_back({-1, -1});
    b.names.push_back("(Intercept)");
    for (int j = 0; j < ds.p; ++j) {
        Eigen::VectorXd c = ds.x.col(j);
        if (warnings && (c.array() == c(0)).all())
            warnings->push_back("covariate x" + std::to_string(j + 1) + " is constant");
        cols.push_back(c);
        b.terms.push_back({j, -1});
        b.names.push_back("x" + std::to_string(j + 1));
    }
    if (spec.interactions) {
        // Orthonormal basis of the kept columns, used to reject exactly collinear candidates.
        std::vector<Eigen::VectorXd> q;
        auto add_if_independent = [&](const Eigen::VectorXd& c) {
            Eigen::VectorXd r = c;
            for (int pass = 0; pass < 2; ++pass)
                for (const auto& v : q) r -= v.dot(r) * v;
            const double nr = r.norm();
            if (nr <= 1e-9 * std::max(1.0, c.norm())) return false;
            q.push_back(r / nr);
            return true;
        };
        for (const auto& c : cols) add_if_independent(c);
        int dropped_support = 0, dropped_collinear = 0;
        for (int j = 0; j < ds.p; ++j) {
            for (int k = j + 1; k < ds.p; ++k) {
                Eigen::VectorXd c = ds.x.col(j).cwiseProduct(ds.x.col(k));
                const double nz = static_cast<double>((c.array() != 0.0).count());
                if (nz < spec.support_threshold * n) {
                    ++dropped_support;
                    continue;
                }
                if (!add_if_independent(c)) {
                    ++dropped_collinear;
                    continue;
                }
                cols.push_back(c);
                b.terms.push_back({j, k});
                b.names.push_back("x" + std::to_string(j + 1) + ":x" + std::to_string(k + 1));
            }
        }
        if (warnings && (dropped_support || dropped_collinear))
            warnings->push_back("dropped " + std::to_string(dropped_support) +
                                " sparse and " + std::to_string(dropped_collinear) +
                                " collinear interaction columns");
    }
    b.F.resize(n, static_cast<int>(cols.size()));
    for (int c = 0; c < static_cast<int>(cols.size()); ++c) b.F.col(c) = cols[c];
    return b;
}

} // namespace calsurv
