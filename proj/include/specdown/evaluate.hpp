#pragma once

// Prediction (residual kriging inside the training period, mean plus
// marginal residual for forecasts), fold assignment, season splits, scoring
// and coherence curves.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specdown/error.hpp"
#include "specdown/lmc.hpp"
#include "specdown/model.hpp"
#include "specdown/rng.hpp"
#include "specdown/spectral.hpp"
#include "specdown/station.hpp"

namespace specdown {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Type 7 (linear interpolation) sample quantile; `v` is sorted in place.
inline double quantile(std::vector<double>& v, double p) {
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// ---------------------------------------------------------------- folds

/// Stratified random fold assignment keyed by site id. Within a stratum the
/// shuffled stations are dealt round-robin; the dealing offset carries over
/// between strata so overall fold sizes stay balanced too.
template <class StationMap>
std::map<std::string, int> cv_split(const StationMap& stations, int folds, std::uint64_t seed) {
    if (folds < 2) throw ConfigError("cross-validation needs at least two folds");
    std::array<std::vector<std::string>, 3> strata;
    for (const auto& [id, st] : stations) strata[static_cast<std::size_t>(stratum_of(st))].push_back(id);
    static const char* names[] = {"PM2.5-only", "species-only", "both"};
    std::map<std::string, int> out;
    std::size_t offset = 0;
    for (std::size_t s = 0; s < strata.size(); ++s) {
        auto& ids = strata[s];
        std::sort(ids.begin(), ids.end());
        if (ids.size() < static_cast<std::size_t>(folds))
            warn(std::string("stratum ") + names[s] + " has " + std::to_string(ids.size()) +
                 " station(s), fewer than " + std::to_string(folds) + " folds");
        Rng rng(derive_seed(seed, streams::fold, s));
        std::shuffle(ids.begin(), ids.end(), rng);
        for (std::size_t i = 0; i < ids.size(); ++i)
            out[ids[i]] = static_cast<int>((offset + i) % static_cast<std::size_t>(folds));
        offset += ids.size();
    }
    return out;
}

// ---------------------------------------------------------------- seasons

enum class Season { JFM, AMJ, JAS, OND };

inline Season parse_season(const std::string& s) {
    if (s == "JFM") return Season::JFM;
    if (s == "AMJ") return Season::AMJ;
    if (s == "JAS") return Season::JAS;
    if (s == "OND") return Season::OND;
    throw ConfigError("unknown season '" + s + "' (expected JFM, AMJ, JAS or OND)");
}

inline std::string season_name(Season s) {
    static const char* n[] = {"JFM", "AMJ", "JAS", "OND"};
    return n[static_cast<int>(s)];
}

/// Ninety day slots per season, starting on day-of-year 1, 91, 182, 274.
inline std::vector<int> season_days(Season s) {
    static const int start[] = {1, 91, 182, 274};
    std::vector<int> d(90);
    std::iota(d.begin(), d.end(), start[static_cast<int>(s)]);
    return d;
}

struct SeasonSplit {
    std::vector<int> train;
    std::vector<int> test;
};

/// First 78 of 90 days train, the next 12 test. Shorter seasons split
/// proportionally (floor(78 n / 90) training days) with a warning.
inline SeasonSplit split_season(std::vector<int> days) {
    if (days.empty()) throw DomainError("empty season");
    std::sort(days.begin(), days.end());
    for (std::size_t i = 1; i < days.size(); ++i)
        if (days[i] != days[i - 1] + 1)
            throw DomainError("season days are not consecutive (" + std::to_string(days[i - 1]) + " then " +
                              std::to_string(days[i]) + ")");
    const std::size_t n = days.size();
    std::size_t n_train = 78, n_test = 12;
    if (n < 90) {
        n_train = n * 78 / 90;
        n_test = n - n_train;
        warn("season has " + std::to_string(n) + " days; using " + std::to_string(n_train) + "/" +
             std::to_string(n_test) + " train/test split");
        if (n_train == 0 || n_test == 0) throw DomainError("season too short to split");
    } else if (n > 90) {
        warn("season has " + std::to_string(n) + " days; only the first 90 are used");
    }
    SeasonSplit s;
    s.train.assign(days.begin(), days.begin() + static_cast<long>(n_train));
    s.test.assign(days.begin() + static_cast<long>(n_train), days.begin() + static_cast<long>(n_train + n_test));
    return s;
}

// ---------------------------------------------------------------- kriging

struct Kriged {
    Eigen::VectorXd weights;  ///< C^-1 c0
    double mean = 0.0;
    double variance = 0.0;
};

/// Simple kriging of a zero-mean value with prior variance c00, given
/// observations w with covariance llt (factorized C) and cross-covariance c0.
inline Kriged krige(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& c0, double c00,
                    const Eigen::VectorXd& w) {
    Kriged k;
    k.weights = llt.solve(c0);
    k.mean = k.weights.dot(w);
    k.variance = std::max(0.0, c00 - c0.dot(k.weights));
    return k;
}

// ---------------------------------------------------------------- prediction

enum class PredictMode { Interpolation, Forecast };

inline std::string mode_name(PredictMode m) { return m == PredictMode::Interpolation ? "interpolation" : "forecast"; }

struct PredictionTarget {
    std::string id;  ///< site id or cell label
    double x = 0.0;
    double y = 0.0;
    int k = 0;
    int day = 0;
    PredictMode mode = PredictMode::Interpolation;
};

struct Prediction {
    PredictionTarget target;
    double log_mean = 0.0;
    double log_var = 0.0;
    double log_median = 0.0;
    double log_lo = 0.0;
    double log_hi = 0.0;
    double pred = 0.0;  ///< exp(log_median)
    double lo95 = 0.0;
    double hi95 = 0.0;
};

namespace detail {

inline void summarize(Prediction& p, std::vector<double>& draws) {
    const auto n = static_cast<double>(draws.size());
    const double mean = std::accumulate(draws.begin(), draws.end(), 0.0) / n;
    double ss = 0.0;
    for (double d : draws) ss += (d - mean) * (d - mean);
    p.log_mean = mean;
    p.log_var = draws.size() > 1 ? ss / (n - 1.0) : 0.0;
    p.log_median = quantile(draws, 0.5);
    p.log_lo = quantile(draws, 0.025);
    p.log_hi = quantile(draws, 0.975);
    p.pred = std::exp(p.log_median);
    p.lo95 = std::exp(p.log_lo);
    p.hi95 = std::exp(p.log_hi);
}

inline Eigen::RowVectorXd target_row(const FittedModel& fm, const CovariateBank& bank, const PredictionTarget& t) {
    if (t.k < 0 || t.k >= fm.meta.K) throw DomainError("target pollutant " + std::to_string(t.k) + " not modeled");
    const std::size_t cell = cell_lookup(t.x, t.y, bank.spec());
    const auto raw = design_row(fm.meta.columns, bank, {t.k, t.day, cell});
    return apply_scales(raw, fm.meta.columns, fm.meta.scales, t.k);
}

}  // namespace detail

/// Predictive summaries on the log scale plus the back-transformed median
/// and 95% interval. Output order follows `targets`.
inline std::vector<Prediction> predict(const FittedModel& fm, const CovariateBank& bank,
                                       const std::vector<PredictionTarget>& targets, std::uint64_t seed) {
    const std::set<int> train(fm.train_days.begin(), fm.train_days.end());
    std::vector<Prediction> out(targets.size());
    std::vector<Eigen::RowVectorXd> rows(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) {
        const auto& tg = targets[t];
        const bool in_train = train.count(tg.day) > 0;
        if (tg.mode == PredictMode::Interpolation && !in_train)
            throw DomainError("interpolation target on day " + std::to_string(tg.day) + " outside the training period");
        if (tg.mode == PredictMode::Forecast && in_train)
            throw DomainError("forecast target on training day " + std::to_string(tg.day) +
                              "; use interpolation mode");
        rows[t] = detail::target_row(fm, bank, tg);
        out[t].target = tg;
    }

    if (!fm.spatial()) {
        for (std::size_t t = 0; t < targets.size(); ++t) {
            const auto& blk = fm.ols[static_cast<std::size_t>(targets[t].k)];
            Eigen::VectorXd x(static_cast<Eigen::Index>(blk.columns.size()));
            for (std::size_t c = 0; c < blk.columns.size(); ++c)
                x[static_cast<Eigen::Index>(c)] = rows[t][blk.columns[c]];
            auto& p = out[t];
            p.log_mean = x.dot(blk.fit.coefficients);
            p.log_var = x.dot(blk.fit.covariance * x) + blk.fit.sigma2;
            const double z = 1.959963984540054 * std::sqrt(p.log_var);
            p.log_median = p.log_mean;
            p.log_lo = p.log_mean - z;
            p.log_hi = p.log_mean + z;
            p.pred = std::exp(p.log_median);
            p.lo95 = std::exp(p.log_lo);
            p.hi95 = std::exp(p.log_hi);
        }
        return out;
    }

    // group by (mode, day)
    std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
    for (std::size_t t = 0; t < targets.size(); ++t)
        groups[{static_cast<int>(targets[t].mode), targets[t].day}].push_back(t);

    for (const auto& [key, members] : groups) {
        const auto mode = static_cast<PredictMode>(key.first);
        const int day = key.second;
        Rng rng(derive_seed(seed, streams::predict,
                            static_cast<std::uint64_t>(static_cast<std::int64_t>(day)) * 2u +
                                static_cast<std::uint64_t>(key.first)));
        std::vector<std::vector<double>> draws(members.size());

        if (mode == PredictMode::Forecast) {
            const auto& post = fm.combined;
            for (Eigen::Index i = 0; i < post.count(); ++i) {
                const auto prm = post.params(i);
                const Eigen::MatrixXd A = prm.L * prm.L.transpose();
                for (std::size_t m = 0; m < members.size(); ++m) {
                    const auto t = members[m];
                    const int k = targets[t].k;
                    const double mu = rows[t].dot(prm.beta);
                    const double w0 = std::sqrt(A(k, k)) * std_normal(rng);
                    const double e = std::sqrt(prm.tau2[k]) * std_normal(rng);
                    draws[m].push_back(mu + w0 + e);
                }
            }
        } else {
            const BatchPosterior* post = nullptr;
            for (const auto& b : fm.batches)
                if (std::find(b.days.begin(), b.days.end(), day) != b.days.end()) post = &b;
            if (post == nullptr)
                throw DomainError("no fitted batch covers day " + std::to_string(day) +
                                  " (partial batches are dropped)");
            if (post->w.empty()) throw ConfigError("interpolation needs stored w draws");
            std::vector<Eigen::Index> idx;
            DayBlock block;
            block.day = day;
            for (std::size_t s = 0; s < post->w.sites.size(); ++s)
                if (post->w.sites[s].day == day) {
                    idx.push_back(static_cast<Eigen::Index>(s));
                    const auto& ws = post->w.sites[s];
                    block.entries.push_back({ws.k, ws.x, ws.y, s});
                }
            const auto n = static_cast<Eigen::Index>(idx.size());
            const Eigen::MatrixXd dist = n > 0 ? distance_matrix(block) : Eigen::MatrixXd();
            std::vector<Eigen::VectorXd> tdist(members.size(), Eigen::VectorXd(n));
            for (std::size_t m = 0; m < members.size(); ++m)
                for (Eigen::Index j = 0; j < n; ++j) {
                    const auto& e = block.entries[static_cast<std::size_t>(j)];
                    tdist[m][j] = std::hypot(targets[members[m]].x - e.x, targets[members[m]].y - e.y);
                }
            for (Eigen::Index i = 0; i < post->count(); ++i) {
                const auto prm = post->params(i);
                const Eigen::MatrixXd A = prm.L * prm.L.transpose();
                Eigen::LLT<Eigen::MatrixXd> llt;
                Eigen::VectorXd w(n);
                if (n > 0) {
                    Eigen::MatrixXd C(n, n);
                    for (Eigen::Index a = 0; a < n; ++a)
                        for (Eigen::Index b = 0; b < n; ++b)
                            C(a, b) = A(block.entries[static_cast<std::size_t>(a)].k,
                                        block.entries[static_cast<std::size_t>(b)].k) *
                                      std::exp(-prm.phi * dist(a, b));
                    llt = factorize(std::move(C));
                    for (Eigen::Index j = 0; j < n; ++j) w[j] = post->w.draws(i, idx[static_cast<std::size_t>(j)]);
                }
                for (std::size_t m = 0; m < members.size(); ++m) {
                    const auto t = members[m];
                    const int k = targets[t].k;
                    const double mu = rows[t].dot(prm.beta);
                    double wm = 0.0, wv = A(k, k);
                    if (n > 0) {
                        Eigen::VectorXd c0(n);
                        for (Eigen::Index j = 0; j < n; ++j)
                            c0[j] = A(k, block.entries[static_cast<std::size_t>(j)].k) *
                                    std::exp(-prm.phi * tdist[m][j]);
                        const auto kr = krige(llt, c0, A(k, k), w);
                        wm = kr.mean;
                        wv = kr.variance;
                    }
                    const double w0 = wm + std::sqrt(wv) * std_normal(rng);
                    const double e = std::sqrt(prm.tau2[k]) * std_normal(rng);
                    draws[m].push_back(mu + w0 + e);
                }
            }
        }
        for (std::size_t m = 0; m < members.size(); ++m) detail::summarize(out[members[m]], draws[m]);
    }
    return out;
}

// ---------------------------------------------------------------- scoring

struct PollutantScore {
    double rmse = kNaN;
    double corr = kNaN;
    std::size_t n = 0;
};

struct Scorecard {
    std::string variant;
    std::string mode;
    int fold = -1;  ///< -1 for fold averages
    std::vector<PollutantScore> per_k;
};

inline double rmse(const std::vector<double>& pred, const std::vector<double>& obs) {
    if (pred.size() != obs.size()) throw DomainError("prediction and observation counts differ");
    if (pred.empty()) return kNaN;
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - obs[i]) * (pred[i] - obs[i]);
    return std::sqrt(s / static_cast<double>(pred.size()));
}

/// Pearson correlation; NaN with fewer than two pairs or a constant side.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DomainError("correlation inputs differ in length");
    if (a.size() < 2) return kNaN;
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) return kNaN;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Per-pollutant RMSE and correlation on the original scale; `observed` is
/// aligned with `preds` and already back-transformed.
inline Scorecard score(const std::vector<Prediction>& preds, const std::vector<double>& observed, int K) {
    if (preds.size() != observed.size()) throw DomainError("prediction and observation counts differ");
    Scorecard sc;
    sc.per_k.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        std::vector<double> p, o;
        for (std::size_t i = 0; i < preds.size(); ++i)
            if (preds[i].target.k == k) {
                p.push_back(preds[i].pred);
                o.push_back(observed[i]);
            }
        auto& s = sc.per_k[static_cast<std::size_t>(k)];
        s.n = p.size();
        s.rmse = rmse(p, o);
        s.corr = pearson(p, o);
    }
    return sc;
}

/// Mean over folds, skipping missing entries.
inline Scorecard average_scorecards(const std::vector<Scorecard>& cards) {
    if (cards.empty()) throw DomainError("no scorecards to average");
    Scorecard out;
    out.variant = cards.front().variant;
    out.mode = cards.front().mode;
    const std::size_t K = cards.front().per_k.size();
    out.per_k.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        double sr = 0.0, sc = 0.0;
        int nr = 0, nc = 0;
        for (const auto& c : cards) {
            const auto& s = c.per_k[k];
            if (std::isfinite(s.rmse)) sr += s.rmse, ++nr;
            if (std::isfinite(s.corr)) sc += s.corr, ++nc;
            out.per_k[k].n += s.n;
        }
        out.per_k[k].rmse = nr ? sr / nr : kNaN;
        out.per_k[k].corr = nc ? sc / nc : kNaN;
    }
    return out;
}

// ---------------------------------------------------------------- coherence

enum class BonferroniFamily { AllCoefficients, PerPair };

struct CoherenceCurve {
    int k = 0;
    int j = 0;
    std::vector<double> magnitude;
    std::vector<double> period_km;
    std::vector<double> mean;
    std::vector<double> lo;  ///< pointwise 2.5%
    std::vector<double> hi;  ///< pointwise 97.5%
    /// Pointwise band at the Bonferroni level excludes 0 (only when the
    /// curve as a whole is significant).
    std::vector<bool> pointwise_significant;
    bool significant = false;  ///< some coefficient's Bonferroni interval excludes 0
    double alpha = 0.05;       ///< per-coefficient level used
};

/// A_kj(m) = sum_b beta_kjb B_b(m) over draws, on the raw covariate scale,
/// for magnitudes m_g = sqrt(2) pi g / n_grid, g = 1..n_grid.
inline CoherenceCurve coherence_curve(const BatchPosterior& post, int k, int j, const SpectralBasis& basis,
                                      int n_grid, double dx,
                                      BonferroniFamily family = BonferroniFamily::AllCoefficients) {
    if (n_grid < 1) throw ConfigError("coherence grid needs at least one point");
    const auto& meta = post.model;
    std::vector<Eigen::Index> cols(static_cast<std::size_t>(basis.count()), -1);
    bool any = false;
    for (std::size_t c = 0; c < meta.columns.size(); ++c) {
        const auto& col = meta.columns[c];
        if (!col.intercept && col.k == k && col.j == j && col.b >= 0) {
            if (col.b >= basis.count()) throw ConfigError("basis smaller than the fitted coefficient set");
            cols[static_cast<std::size_t>(col.b)] = static_cast<Eigen::Index>(c);
            any = true;
        }
    }
    if (!any)
        throw DomainError("posterior has no spectral coefficients for (k, j) = (" + std::to_string(k) + ", " +
                          std::to_string(j) + ")");
    for (auto c : cols)
        if (c < 0) throw ConfigError("basis size does not match the fitted coefficients");
    const Eigen::Index I = post.count();
    if (I < 1) throw DomainError("posterior has no draws");
    const int B = basis.count();
    Eigen::MatrixXd beta(I, B);
    for (Eigen::Index i = 0; i < I; ++i) {
        const Eigen::VectorXd rb = post.raw_beta(i);
        for (int b = 0; b < B; ++b) beta(i, b) = rb[cols[static_cast<std::size_t>(b)]];
    }

    CoherenceCurve cc;
    cc.k = k;
    cc.j = j;
    const double fam = family == BonferroniFamily::AllCoefficients
                           ? static_cast<double>(meta.K) * static_cast<double>(meta.J) * B
                           : static_cast<double>(B);
    cc.alpha = 0.05 / fam;
    for (int b = 0; b < B; ++b) {
        std::vector<double> v(beta.col(b).data(), beta.col(b).data() + I);
        const double lo = quantile(v, cc.alpha / 2.0), hi = quantile(v, 1.0 - cc.alpha / 2.0);
        if (lo > 0.0 || hi < 0.0) cc.significant = true;
    }
    for (int g = 1; g <= n_grid; ++g) {
        const double m = kMaxMagnitude * g / static_cast<double>(n_grid);
        const auto bv = basis.evaluate(m);
        std::vector<double> a(static_cast<std::size_t>(I));
        for (Eigen::Index i = 0; i < I; ++i) {
            double s = 0.0;
            for (int b = 0; b < B; ++b) s += beta(i, b) * bv[static_cast<std::size_t>(b)];
            a[static_cast<std::size_t>(i)] = s;
        }
        const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(I);
        const double lo = quantile(a, 0.025), hi = quantile(a, 0.975);
        const double blo = quantile(a, cc.alpha / 2.0), bhi = quantile(a, 1.0 - cc.alpha / 2.0);
        cc.magnitude.push_back(m);
        cc.period_km.push_back(period_of(m, dx));
        cc.mean.push_back(mean);
        cc.lo.push_back(std::min(lo, mean));
        cc.hi.push_back(std::max(hi, mean));
        cc.pointwise_significant.push_back(cc.significant && (blo > 0.0 || bhi < 0.0));
    }
    return cc;
}

}  // namespace specdown
