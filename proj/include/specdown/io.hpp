#pragma once

// Plain-text artifact formats. Doubles are written with %.17g so that every
// file parses back to the same bits.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "specdown/error.hpp"
#include "specdown/evaluate.hpp"
#include "specdown/grid.hpp"
#include "specdown/model.hpp"
#include "specdown/posterior.hpp"
#include "specdown/station.hpp"

namespace specdown::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline std::string fmt(double v) {
    if (std::isnan(v)) return "NA";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s, const std::string& where) {
    if (s == "NA" || s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw ParseError(where + ": trailing characters in number '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw ParseError(where + ": not a number: '" + s + "'");
    }
}

inline int parse_int(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw ParseError(where + ": not an integer: '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw ParseError(where + ": not an integer: '" + s + "'");
    }
}

/// Splits one CSV record; double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + '"';
}

inline std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path.string());
    return f;
}

inline std::ifstream open_in(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read " + path.string());
    return f;
}

inline void write_json(const fs::path& path, const json& j) {
    auto f = open_out(path);
    f << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
    auto f = open_in(path);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------- grids

struct GridFile {
    GridField field;
    std::optional<std::pair<int, int>> jb;  ///< covariate stacks only
};

inline void write_grid(const fs::path& path, const GridField& f, std::optional<std::pair<int, int>> jb = {}) {
    auto out = open_out(path);
    out << f.spec.nx << ' ' << f.spec.ny << ' ' << fmt(f.spec.dx) << ' ' << f.pollutant_id << ' ' << f.day << '\n';
    for (int iy = 0; iy < f.spec.ny; ++iy) {
        for (int ix = 0; ix < f.spec.nx; ++ix) out << (ix ? " " : "") << fmt(f.at(ix, iy));
        out << '\n';
    }
    if (jb) out << jb->first << ' ' << jb->second << '\n';
}

inline GridFile read_grid(const fs::path& path) {
    auto in = open_in(path);
    const std::string where = path.string();
    std::vector<std::string> tok;
    std::string t;
    while (in >> t) tok.push_back(t);
    if (tok.size() < 5) throw ParseError(where + ": missing header 'nx ny dx pollutant_id day'");
    GridSpec spec{parse_int(tok[0], where), parse_int(tok[1], where), parse_double(tok[2], where)};
    spec.validate();
    const int pid = parse_int(tok[3], where), day = parse_int(tok[4], where);
    const std::size_t m = spec.size();
    if (tok.size() != 5 + m && tok.size() != 7 + m)
        throw ParseError(where + ": expected " + std::to_string(m) + " values, found " + std::to_string(tok.size() - 5));
    std::vector<double> v(m);
    for (std::size_t i = 0; i < m; ++i) v[i] = parse_double(tok[5 + i], where + " value " + std::to_string(i));
    GridFile g{GridField(spec, std::move(v), pid, day), std::nullopt};
    if (tok.size() == 7 + m) g.jb = std::make_pair(parse_int(tok[5 + m], where), parse_int(tok[6 + m], where));
    return g;
}

/// Reads every *.grid file under `dir` (sorted by name). With `log_values`
/// each value is log-transformed; nonpositive values are an error.
inline std::vector<GridField> read_grid_dir(const fs::path& dir, bool log_values) {
    if (!fs::is_directory(dir)) throw ConfigError("grid directory " + dir.string() + " does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".grid") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("no .grid files in " + dir.string());
    std::vector<GridField> out;
    for (const auto& p : files) {
        auto g = read_grid(p).field;
        if (log_values) {
            for (std::size_t i = 0; i < g.values.size(); ++i) {
                if (!(g.values[i] > 0.0))
                    throw DomainError(p.string() + ": nonpositive value at index " + std::to_string(i) +
                                      " cannot be log-transformed");
                g.values[i] = std::log(g.values[i]);
            }
        }
        out.push_back(std::move(g));
    }
    return out;
}

// ---------------------------------------------------------------- stations

inline const char* kStationHeader = "site_id,x_km,y_km,day,pollutant,value_raw";

struct StationFile {
    Dataset data;
    std::size_t dropped = 0;  ///< nonpositive raw values
};

/// Parses the station CSV and log-transforms values. When `grid` is given,
/// stations outside it are rejected.
inline StationFile parse_station_file(const fs::path& path, const std::vector<std::string>& pollutants,
                                      const std::optional<GridSpec>& grid = std::nullopt) {
    auto in = open_in(path);
    std::map<std::string, int> ids;
    for (std::size_t i = 0; i < pollutants.size(); ++i) ids[pollutants[i]] = static_cast<int>(i);
    StationFile sf;
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kStationHeader)
        throw ParseError(path.string() + ":1: header must be '" + std::string(kStationHeader) + "'");
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        const auto f = split_csv(line);
        if (f.size() != 6) throw ParseError(where + ": expected 6 fields, found " + std::to_string(f.size()));
        if (f[0].empty()) throw ParseError(where + ": empty site_id");
        const double x = parse_double(f[1], where), y = parse_double(f[2], where);
        const int day = parse_int(f[3], where);
        auto pit = ids.find(f[4]);
        if (pit == ids.end()) throw ParseError(where + ": unknown pollutant '" + f[4] + "'");
        const double v = parse_double(f[5], where);
        if (!std::isfinite(x) || !std::isfinite(y) || std::isnan(v)) throw ParseError(where + ": non-finite field");
        auto [sit, inserted] = sf.data.stations.try_emplace(f[0], Station{f[0], x, y, {}});
        if (!inserted && (sit->second.x != x || sit->second.y != y))
            throw ParseError(where + ": station " + f[0] + " has inconsistent coordinates");
        if (inserted && grid && !inside(*grid, x, y))
            throw DomainError("station " + f[0] + " lies outside the grid (" + where + ")");
        if (!(v > 0.0)) {
            ++sf.dropped;
            continue;
        }
        sit->second.measures.insert(pit->second);
        sf.data.obs.push_back({f[0], day, pit->second, std::log(v)});
    }
    if (sf.dropped) warn(path.string() + ": dropped " + std::to_string(sf.dropped) + " nonpositive value(s)");
    return sf;
}

inline void write_station_file(const fs::path& path, const Dataset& data, const std::vector<std::string>& pollutants) {
    auto out = open_out(path);
    out << kStationHeader << '\n';
    for (const auto& o : data.obs) {
        const auto& st = data.stations.at(o.site_id);
        out << csv_field(o.site_id) << ',' << fmt(st.x) << ',' << fmt(st.y) << ',' << o.day << ','
            << pollutants.at(static_cast<std::size_t>(o.pollutant)) << ',' << fmt(std::exp(o.value)) << '\n';
    }
}

// ---------------------------------------------------------------- posteriors

inline json meta_to_json(const ModelMeta& m) {
    json cols = json::array();
    for (std::size_t c = 0; c < m.columns.size(); ++c) {
        const auto& col = m.columns[c];
        const auto& s = m.scales[c];
        cols.push_back({{"name", col.name()},
                        {"intercept", col.intercept},
                        {"k", col.k},
                        {"j", col.j},
                        {"b", col.b},
                        {"mean", s.mean},
                        {"sd", s.sd},
                        {"flagged", s.flagged}});
    }
    return {{"variant", m.variant.name()}, {"K", m.K},           {"J", m.J},
            {"B", m.B},                    {"degree", m.degree}, {"center", m.center},
            {"columns", cols},             {"phi_bounds", {m.phi_bounds.first, m.phi_bounds.second}}};
}

inline ModelMeta meta_from_json(const json& j) {
    ModelMeta m;
    m.variant = ModelVariant::parse(j.at("variant").get<std::string>());
    m.K = j.at("K").get<int>();
    m.J = j.at("J").get<int>();
    m.B = j.at("B").get<int>();
    m.degree = j.at("degree").get<int>();
    m.center = j.at("center").get<bool>();
    for (const auto& c : j.at("columns")) {
        m.columns.push_back({c.at("intercept").get<bool>(), c.at("k").get<int>(), c.at("j").get<int>(),
                             c.at("b").get<int>()});
        m.scales.push_back({c.at("mean").get<double>(), c.at("sd").get<double>(), c.at("flagged").get<bool>()});
    }
    m.phi_bounds = {j.at("phi_bounds").at(0).get<double>(), j.at("phi_bounds").at(1).get<double>()};
    return m;
}

/// Writes <prefix>.csv (transformed draws followed by natural-scale
/// columns), <prefix>.json (sidecar) and, when present, <prefix>_w.csv (one
/// row per observed site-day, one column per draw).
inline void write_posterior(const fs::path& prefix, const BatchPosterior& post) {
    {
        auto out = open_out(prefix.string() + ".csv");
        const auto nat = post.natural_draws();
        const auto nat_names = post.natural_names();
        for (std::size_t i = 0; i < post.param_names.size(); ++i) out << (i ? "," : "") << csv_field(post.param_names[i]);
        for (const auto& n : nat_names) out << ',' << csv_field(n);
        out << '\n';
        for (Eigen::Index i = 0; i < post.count(); ++i) {
            for (Eigen::Index c = 0; c < post.draws.cols(); ++c) out << (c ? "," : "") << fmt(post.draws(i, c));
            for (Eigen::Index c = 0; c < nat.cols(); ++c) out << ',' << fmt(nat(i, c));
            out << '\n';
        }
    }
    json acc = json::object();
    for (const auto& [k, v] : post.acceptance) acc[k] = v;
    json side = {{"I", post.count()},
                 {"seed", post.seed},
                 {"batch_index", post.batch_index},
                 {"days", post.days},
                 {"acceptance", acc},
                 {"param_names", post.param_names},
                 {"natural_names", post.natural_names()},
                 {"meta", meta_to_json(post.model)},
                 {"has_w", !post.w.empty()}};
    write_json(prefix.string() + ".json", side);
    if (!post.w.empty()) {
        auto out = open_out(prefix.string() + "_w.csv");
        out << "day,pollutant,site_id,x,y";
        for (Eigen::Index i = 0; i < post.w.draws.rows(); ++i) out << ",w" << i;
        out << '\n';
        for (std::size_t s = 0; s < post.w.sites.size(); ++s) {
            const auto& ws = post.w.sites[s];
            out << ws.day << ',' << ws.k << ',' << csv_field(ws.site_id) << ',' << fmt(ws.x) << ',' << fmt(ws.y);
            for (Eigen::Index i = 0; i < post.w.draws.rows(); ++i)
                out << ',' << fmt(post.w.draws(i, static_cast<Eigen::Index>(s)));
            out << '\n';
        }
    }
}

inline BatchPosterior read_posterior(const fs::path& prefix) {
    const json side = read_json(prefix.string() + ".json");
    BatchPosterior post;
    post.param_names = side.at("param_names").get<std::vector<std::string>>();
    post.model = meta_from_json(side.at("meta"));
    post.seed = side.at("seed").get<std::uint64_t>();
    post.batch_index = side.at("batch_index").get<int>();
    post.days = side.at("days").get<std::vector<int>>();
    for (const auto& [k, v] : side.at("acceptance").items()) post.acceptance[k] = v.get<double>();
    const auto I = side.at("I").get<Eigen::Index>();
    const auto P = static_cast<Eigen::Index>(post.param_names.size());
    const std::string csv = prefix.string() + ".csv";
    auto in = open_in(csv);
    std::string line;
    std::getline(in, line);
    const auto header = split_csv(line);
    if (header.size() < post.param_names.size() ||
        !std::equal(post.param_names.begin(), post.param_names.end(), header.begin()))
        throw ParseError(csv + ": header does not match the sidecar parameter names");
    post.draws.resize(I, P);
    for (Eigen::Index i = 0; i < I; ++i) {
        if (!std::getline(in, line)) throw ParseError(csv + ": expected " + std::to_string(I) + " draws");
        const auto f = split_csv(line);
        if (f.size() != header.size()) throw ParseError(csv + ":" + std::to_string(i + 2) + ": wrong field count");
        for (Eigen::Index c = 0; c < P; ++c)
            post.draws(i, c) = parse_double(f[static_cast<std::size_t>(c)], csv + ":" + std::to_string(i + 2));
    }
    if (I >= 2) post.sample_cov = sample_covariance(post.draws);
    if (side.value("has_w", false)) {
        const std::string wcsv = prefix.string() + "_w.csv";
        auto win = open_in(wcsv);
        std::getline(win, line);
        std::vector<std::vector<double>> cols;
        std::size_t lineno = 1;
        while (std::getline(win, line)) {
            ++lineno;
            if (line.empty()) continue;
            const std::string where = wcsv + ":" + std::to_string(lineno);
            const auto f = split_csv(line);
            if (f.size() != 5 + static_cast<std::size_t>(I)) throw ParseError(where + ": wrong field count");
            post.w.sites.push_back({parse_int(f[0], where), parse_int(f[1], where), f[2], parse_double(f[3], where),
                                    parse_double(f[4], where)});
            std::vector<double> v(static_cast<std::size_t>(I));
            for (Eigen::Index i = 0; i < I; ++i) v[static_cast<std::size_t>(i)] = parse_double(f[5 + static_cast<std::size_t>(i)], where);
            cols.push_back(std::move(v));
        }
        post.w.draws.resize(I, static_cast<Eigen::Index>(cols.size()));
        for (std::size_t s = 0; s < cols.size(); ++s)
            for (Eigen::Index i = 0; i < I; ++i)
                post.w.draws(i, static_cast<Eigen::Index>(s)) = cols[s][static_cast<std::size_t>(i)];
    }
    return post;
}

/// Least-squares fits: per-pollutant coefficients, covariance and sigma2.
inline void write_ols(const fs::path& path, const std::vector<OlsBlock>& blocks) {
    json arr = json::array();
    for (const auto& b : blocks) {
        const auto p = b.fit.coefficients.size();
        std::vector<double> cov(static_cast<std::size_t>(p * p));
        for (Eigen::Index r = 0; r < p; ++r)
            for (Eigen::Index c = 0; c < p; ++c) cov[static_cast<std::size_t>(r * p + c)] = b.fit.covariance(r, c);
        arr.push_back({{"columns", b.columns},
                       {"coefficients", std::vector<double>(b.fit.coefficients.data(), b.fit.coefficients.data() + p)},
                       {"covariance", cov},
                       {"sigma2", b.fit.sigma2},
                       {"dof", b.fit.dof}});
    }
    write_json(path, arr);
}

inline std::vector<OlsBlock> read_ols(const fs::path& path) {
    const json arr = read_json(path);
    std::vector<OlsBlock> out;
    for (const auto& j : arr) {
        OlsBlock b;
        b.columns = j.at("columns").get<std::vector<Eigen::Index>>();
        const auto coef = j.at("coefficients").get<std::vector<double>>();
        const auto cov = j.at("covariance").get<std::vector<double>>();
        const auto p = static_cast<Eigen::Index>(coef.size());
        if (cov.size() != coef.size() * coef.size() || b.columns.size() != coef.size())
            throw ParseError(path.string() + ": inconsistent least-squares record");
        b.fit.coefficients = Eigen::Map<const Eigen::VectorXd>(coef.data(), p);
        b.fit.covariance = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            cov.data(), p, p);
        b.fit.std_errors = b.fit.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
        b.fit.sigma2 = j.at("sigma2").get<double>();
        b.fit.dof = j.at("dof").get<Eigen::Index>();
        out.push_back(std::move(b));
    }
    return out;
}

// ---------------------------------------------------------------- results

inline void write_predictions(const fs::path& path, const std::vector<Prediction>& preds,
                              const std::vector<std::string>& pollutants) {
    auto out = open_out(path);
    out << "site_or_cell,x,y,day,pollutant,pred,lo95,hi95\n";
    for (const auto& p : preds)
        out << csv_field(p.target.id) << ',' << fmt(p.target.x) << ',' << fmt(p.target.y) << ',' << p.target.day << ','
            << pollutants.at(static_cast<std::size_t>(p.target.k)) << ',' << fmt(p.pred) << ',' << fmt(p.lo95) << ','
            << fmt(p.hi95) << '\n';
}

struct PredictionRow {
    std::string id;
    double x = 0, y = 0;
    int day = 0;
    std::string pollutant;
    double pred = 0, lo95 = 0, hi95 = 0;
};

inline std::vector<PredictionRow> read_predictions(const fs::path& path) {
    auto in = open_in(path);
    std::string line;
    std::getline(in, line);
    if (line != "site_or_cell,x,y,day,pollutant,pred,lo95,hi95") throw ParseError(path.string() + ": bad header");
    std::vector<PredictionRow> rows;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        const std::string where = path.string() + ":" + std::to_string(n);
        const auto f = split_csv(line);
        if (f.size() != 8) throw ParseError(where + ": expected 8 fields");
        rows.push_back({f[0], parse_double(f[1], where), parse_double(f[2], where), parse_int(f[3], where), f[4],
                        parse_double(f[5], where), parse_double(f[6], where), parse_double(f[7], where)});
    }
    return rows;
}

inline std::string score_cell(const PollutantScore& s) {
    if (!std::isfinite(s.rmse)) return "NA";
    char buf[64];
    if (std::isfinite(s.corr))
        std::snprintf(buf, sizeof buf, "%.3f(%.2f)", s.rmse, s.corr);
    else
        std::snprintf(buf, sizeof buf, "%.3f(NA)", s.rmse);
    return buf;
}

/// Table layout: one row per (variant, mode), one "RMSE(corr)" cell per pollutant.
inline void write_scorecard(const fs::path& path, const std::vector<Scorecard>& cards,
                            const std::vector<std::string>& pollutants) {
    auto out = open_out(path);
    out << "mode,variant";
    for (std::size_t k = 0; k < cards.front().per_k.size(); ++k) out << ',' << pollutants.at(k);
    out << '\n';
    for (const auto& c : cards) {
        out << c.mode << ',' << c.variant;
        for (const auto& s : c.per_k) out << ',' << score_cell(s);
        out << '\n';
    }
}

/// Long format with full precision: every fold and the fold averages (fold -1).
inline void write_scorecard_long(const fs::path& path, const std::vector<Scorecard>& cards,
                                 const std::vector<std::string>& pollutants) {
    auto out = open_out(path);
    out << "mode,variant,fold,pollutant,n,rmse,corr\n";
    for (const auto& c : cards)
        for (std::size_t k = 0; k < c.per_k.size(); ++k)
            out << c.mode << ',' << c.variant << ',' << c.fold << ',' << pollutants.at(k) << ',' << c.per_k[k].n << ','
                << fmt(c.per_k[k].rmse) << ',' << fmt(c.per_k[k].corr) << '\n';
}

inline void write_coherence(const fs::path& path, const std::vector<CoherenceCurve>& curves) {
    auto out = open_out(path);
    out << "k,j,magnitude,period_km,mean,lo,hi,significant\n";
    for (const auto& c : curves)
        for (std::size_t g = 0; g < c.magnitude.size(); ++g)
            out << c.k << ',' << c.j << ',' << fmt(c.magnitude[g]) << ',' << fmt(c.period_km[g]) << ','
                << fmt(c.mean[g]) << ',' << fmt(c.lo[g]) << ',' << fmt(c.hi[g]) << ','
                << (c.pointwise_significant[g] ? "true" : "false") << '\n';
}

/// Group-by-mean export: mean prediction and mean observation per
/// (group, mode, pollutant). `observed` and `groups` may be empty.
inline void write_group_means(const fs::path& path, const std::vector<Prediction>& preds,
                              const std::vector<double>& observed, const std::vector<std::string>& pollutants,
                              const std::vector<std::string>& labels = {}) {
    struct Acc {
        double pred = 0, obs = 0;
        std::size_t n = 0;
    };
    std::map<std::tuple<std::string, std::string, int>, Acc> groups;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto& a = groups[{labels.empty() ? std::string("all") : labels[i], mode_name(preds[i].target.mode),
                          preds[i].target.k}];
        a.pred += preds[i].pred;
        if (!observed.empty()) a.obs += observed[i];
        ++a.n;
    }
    auto out = open_out(path);
    out << "group,mode,pollutant,n,mean_pred,mean_obs\n";
    for (const auto& [key, a] : groups) {
        const double n = static_cast<double>(a.n);
        out << csv_field(std::get<0>(key)) << ',' << std::get<1>(key) << ','
            << pollutants.at(static_cast<std::size_t>(std::get<2>(key))) << ',' << a.n << ','
            << fmt(a.pred / n) << ',' << (observed.empty() ? std::string("NA") : fmt(a.obs / n)) << '\n';
    }
}

inline json error_json(const std::string& code, const std::string& message, const std::string& command) {
    return {{"status", "error"}, {"code", code}, {"message", message}, {"command", command}};
}

}  // namespace specdown::io
