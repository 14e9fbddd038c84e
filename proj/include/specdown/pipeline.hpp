#pragma once

// Subcommand bodies shared by the CLI and the tests. Every command reads and
// writes the documented formats; nothing here keeps global state.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "specdown/config.hpp"
#include "specdown/consensus.hpp"
#include "specdown/evaluate.hpp"
#include "specdown/io.hpp"
#include "specdown/model.hpp"
#include "specdown/synthetic.hpp"

namespace specdown {

namespace fs = std::filesystem;

struct LoadedData {
    std::vector<GridField> fields;  ///< log scale when configured
    CovariateBank bank;
    Dataset data;
    std::size_t dropped = 0;
    std::vector<int> days;  ///< consecutive day slots of the analysis period
};

/// Reads grids and stations and fixes the analysis period: the configured
/// season, or the span of days present in the station file.
inline LoadedData load_data(const RunConfig& cfg) {
    cfg.require_inputs();
    LoadedData d;
    d.fields = io::read_grid_dir(cfg.grids_dir, cfg.log_transform);
    d.bank = CovariateBank::build(d.fields, make_basis(cfg.basis_count, cfg.basis_degree), cfg.center);
    auto sf = io::parse_station_file(cfg.stations_file, cfg.pollutants, d.bank.spec());
    d.data = std::move(sf.data);
    d.dropped = sf.dropped;
    if (auto slots = cfg.season_day_slots()) {
        d.days = *slots;
    } else {
        if (d.data.obs.empty()) throw DomainError("station file has no usable observations");
        int lo = d.data.obs.front().day, hi = lo;
        for (const auto& o : d.data.obs) lo = std::min(lo, o.day), hi = std::max(hi, o.day);
        for (int x = lo; x <= hi; ++x) d.days.push_back(x);
    }
    return d;
}

// ---------------------------------------------------------------- cv

struct CvOptions {
    std::vector<ModelVariant> variants;
    int folds = 5;
    FitOptions fit;  ///< variant field ignored
    bool interpolation = true;
    bool forecast = true;
    /// Restrict to these folds (empty: all).
    std::vector<int> only_folds;
};

struct CvResult {
    std::vector<Scorecard> per_fold;
    std::vector<Scorecard> averaged;  ///< one per (variant, mode), in variant order
    std::vector<Prediction> predictions;
    std::vector<double> observed;  ///< original scale, aligned with predictions
    std::vector<std::string> prediction_variant;

    const Scorecard& find(const std::string& variant, const std::string& mode) const {
        for (const auto& s : averaged)
            if (s.variant == variant && s.mode == mode) return s;
        throw DomainError("no scorecard for " + variant + " / " + mode);
    }
};

/// Stratified k-fold protocol: train on the other folds over the training
/// days; interpolate at held-out stations on training days; forecast at all
/// stations on test days.
inline CvResult run_cv(const Dataset& data, const CovariateBank& bank, const SeasonSplit& split,
                       const CvOptions& opt) {
    const auto folds = cv_split(data.stations, opt.folds, opt.fit.seed);
    const std::set<int> train(split.train.begin(), split.train.end()), test(split.test.begin(), split.test.end());
    // interpolation is scored on days inside a full batch, the same set for every variant
    std::set<int> scored;
    for (const auto& b : make_batches(split.train, opt.fit.batch_days)) scored.insert(b.begin(), b.end());
    CvResult res;
    std::map<std::pair<std::string, std::string>, std::vector<Scorecard>> by_key;
    for (const auto& variant : opt.variants) {
        for (int f = 0; f < opt.folds; ++f) {
            if (!opt.only_folds.empty() &&
                std::find(opt.only_folds.begin(), opt.only_folds.end(), f) == opt.only_folds.end())
                continue;
            std::vector<Observation> train_obs;
            std::vector<const Observation*> interp, fcast;
            for (const auto& o : data.obs) {
                if (o.pollutant >= opt.fit.K) continue;
                const bool held = folds.at(o.site_id) == f;
                if (train.count(o.day)) {
                    if (held) {
                        if (scored.count(o.day)) interp.push_back(&o);
                    } else {
                        train_obs.push_back(o);
                    }
                } else if (test.count(o.day)) {
                    fcast.push_back(&o);
                }
            }
            FitOptions fo = opt.fit;
            fo.variant = variant;
            fo.seed = derive_seed(opt.fit.seed, streams::fold, 1000u + static_cast<std::uint64_t>(f));
            const auto fm = fit_model(data.stations, train_obs, bank, split.train, fo);

            auto run_mode = [&](PredictMode mode, const std::vector<const Observation*>& obs) {
                if (obs.empty()) return;
                std::vector<PredictionTarget> targets;
                std::vector<double> observed;
                for (const auto* o : obs) {
                    const auto& st = data.stations.at(o->site_id);
                    targets.push_back({o->site_id, st.x, st.y, o->pollutant, o->day, mode});
                    observed.push_back(std::exp(o->value));
                }
                auto preds = predict(fm, bank, targets, fo.seed);
                auto sc = score(preds, observed, opt.fit.K);
                sc.variant = variant.name();
                sc.mode = mode_name(mode);
                sc.fold = f;
                res.per_fold.push_back(sc);
                by_key[{sc.variant, sc.mode}].push_back(sc);
                for (std::size_t i = 0; i < preds.size(); ++i) {
                    res.predictions.push_back(preds[i]);
                    res.observed.push_back(observed[i]);
                    res.prediction_variant.push_back(sc.variant);
                }
            };
            if (opt.interpolation) run_mode(PredictMode::Interpolation, interp);
            if (opt.forecast) run_mode(PredictMode::Forecast, fcast);
        }
    }
    for (const auto& variant : opt.variants)
        for (const char* mode : {"interpolation", "forecast"}) {
            auto it = by_key.find({variant.name(), mode});
            if (it == by_key.end()) continue;
            auto avg = average_scorecards(it->second);
            avg.fold = -1;
            res.averaged.push_back(avg);
        }
    return res;
}

/// Table layout: spatial variants under interpolation, independent variants
/// under forecast.
inline std::vector<Scorecard> table_rows(const CvResult& r) {
    std::vector<Scorecard> rows;
    for (const auto& s : r.averaged) {
        const bool spatial = ModelVariant::parse(s.variant).spatial;
        if ((spatial && s.mode == "interpolation") || (!spatial && s.mode == "forecast")) rows.push_back(s);
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Scorecard& a, const Scorecard& b) { return a.mode > b.mode; });
    return rows;
}

// ---------------------------------------------------------------- commands

/// Simulated inputs: grid files and station CSV on the raw (exp) scale, a
/// truth JSON and the run config that points at them.
inline void cmd_simulate(const RunConfig& cfg) {
    const auto truth = simulate(cfg.simulate);
    const fs::path grids = cfg.grids_dir;
    fs::create_directories(grids);
    for (const auto& e : fs::directory_iterator(grids))
        if (e.path().extension() == ".grid") fs::remove(e.path());
    for (auto f : truth.fields) {
        for (auto& v : f.values) v = std::exp(v);
        char name[64];
        std::snprintf(name, sizeof name, "p%d_d%04d.grid", f.pollutant_id, f.day);
        io::write_grid(grids / name, f);
    }
    io::write_station_file(cfg.stations_file, truth.data, cfg.pollutants);
    const auto& sc = truth.config;
    nlohmann::json t = sim_to_json(sc);
    t["beta_names"] = nlohmann::json::array();
    for (const auto& c : design_columns(sc.variant, sc.K, sc.J, sc.variant.mean == MeanKind::SD ? sc.B : 0))
        t["beta_names"].push_back(c.name());
    t["cadence_offsets"] = truth.offsets;
    const fs::path out = cfg.output_dir;
    io::write_json(out / "truth.json", t);
    io::write_json(out / "run_config.json", to_json(cfg));
}

inline fs::path fit_dir(const RunConfig& cfg, const ModelVariant& v) {
    std::string name = v.name();
    std::replace(name.begin(), name.end(), '+', '_');
    return fs::path(cfg.output_dir) / "fit" / name;
}

/// Fits the configured variant on the training days of the analysis period
/// with all stations and writes per-batch posteriors (or least-squares fits).
inline FittedModel cmd_fit(const RunConfig& cfg, const LoadedData& d) {
    const auto split = split_season(d.days);
    auto opts = cfg.fit_options(d.bank.spec());
    auto fm = fit_model(d.data.stations, d.data.obs, d.bank, split.train, opts);
    const auto dir = fit_dir(cfg, opts.variant);
    if (fs::exists(dir)) fs::remove_all(dir);
    fs::create_directories(dir);
    io::write_json(dir / "split.json", {{"train", split.train}, {"test", split.test}});
    if (fm.spatial()) {
        for (const auto& b : fm.batches) {
            char name[32];
            std::snprintf(name, sizeof name, "batch_%03d", b.batch_index);
            io::write_posterior(dir / name, b);
        }
    } else {
        io::write_ols(dir / "ols.json", fm.ols);
        io::write_posterior(dir / "combined", fm.combined);
    }
    return fm;
}

/// Consensus over the batch files of the configured variant.
inline BatchPosterior cmd_combine(const RunConfig& cfg) {
    const auto dir = fit_dir(cfg, ModelVariant::parse(cfg.variant));
    if (!fs::is_directory(dir)) throw ConfigError("no fit output at " + dir.string() + "; run fit first");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto n = e.path().filename().string();
        if (n.rfind("batch_", 0) == 0 && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        if (fs::exists(dir / "ols.json")) return io::read_posterior(dir / "combined");
        throw ConfigError("no batch posteriors in " + dir.string());
    }
    std::vector<BatchPosterior> batches;
    for (const auto& f : files) batches.push_back(io::read_posterior(fs::path(f).replace_extension()));
    auto combined = consensus_combine(std::move(batches));
    io::write_posterior(dir / "combined", combined);
    return combined;
}

/// Reassembles a fitted model from the fit/combine artifacts.
inline FittedModel load_fitted(const RunConfig& cfg) {
    const auto dir = fit_dir(cfg, ModelVariant::parse(cfg.variant));
    if (!fs::exists(dir / "combined.json")) throw ConfigError("no combined posterior in " + dir.string());
    FittedModel fm;
    fm.combined = io::read_posterior(dir / "combined");
    fm.meta = fm.combined.model;
    const auto split = io::read_json(dir / "split.json");
    fm.train_days = split.at("train").get<std::vector<int>>();
    if (fm.spatial()) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir)) {
            const auto n = e.path().filename().string();
            if (n.rfind("batch_", 0) == 0 && e.path().extension() == ".json") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) fm.batches.push_back(io::read_posterior(fs::path(f).replace_extension()));
    } else {
        fm.ols = io::read_ols(dir / "ols.json");
    }
    return fm;
}

/// Prediction targets: every station and modeled pollutant on every day of
/// the analysis period (interpolation on training days, forecast on test
/// days), plus every grid cell centre on `cells_day` if given.
inline std::vector<PredictionTarget> default_targets(const RunConfig& cfg, const LoadedData& d,
                                                     const FittedModel& fm, std::optional<int> cells_day) {
    const std::set<int> train(fm.train_days.begin(), fm.train_days.end());
    std::set<int> covered;
    for (const auto& b : fm.batches) covered.insert(b.days.begin(), b.days.end());
    auto usable = [&](int day) { return !fm.spatial() || !train.count(day) || covered.count(day); };
    std::vector<PredictionTarget> t;
    for (const auto& [id, st] : d.data.stations)
        for (int day : d.days) {
            if (!d.bank.has(day, 0) || !usable(day)) continue;
            const auto mode = train.count(day) ? PredictMode::Interpolation : PredictMode::Forecast;
            for (int k = 0; k < cfg.K; ++k) t.push_back({id, st.x, st.y, k, day, mode});
        }
    if (cells_day) {
        const int day = *cells_day;
        if (!usable(day)) throw DomainError("day " + std::to_string(day) + " is not covered by a fitted batch");
        const auto mode = train.count(day) ? PredictMode::Interpolation : PredictMode::Forecast;
        const auto& spec = d.bank.spec();
        for (int iy = 0; iy < spec.ny; ++iy)
            for (int ix = 0; ix < spec.nx; ++ix)
                for (int k = 0; k < cfg.K; ++k)
                    t.push_back({"cell_" + std::to_string(ix) + "_" + std::to_string(iy), (ix + 0.5) * spec.dx,
                                 (iy + 0.5) * spec.dx, k, day, mode});
    }
    return t;
}

inline std::vector<Prediction> cmd_predict(const RunConfig& cfg, const LoadedData& d, const FittedModel& fm,
                                           std::optional<int> cells_day) {
    const auto targets = default_targets(cfg, d, fm, cells_day);
    auto preds = predict(fm, d.bank, targets, derive_seed(cfg.seed, streams::predict, 0));
    const auto dir = fit_dir(cfg, fm.meta.variant);
    io::write_predictions(dir / "predictions.csv", preds, cfg.pollutants);
    io::write_group_means(dir / "prediction_means.csv", preds, {}, cfg.pollutants);
    return preds;
}

inline std::vector<CoherenceCurve> cmd_coherence(const RunConfig& cfg, const FittedModel& fm, double dx) {
    if (fm.meta.variant.mean != MeanKind::SD)
        throw ConfigError("coherence curves need a spectral (SD) variant, not " + fm.meta.variant.name());
    const auto basis = make_basis(cfg.basis_count, cfg.basis_degree);
    std::vector<CoherenceCurve> curves;
    for (const auto& col : fm.meta.columns)
        if (!col.intercept && col.b == 0)
            curves.push_back(coherence_curve(fm.combined, col.k, col.j, basis, cfg.coherence_grid, dx,
                                             cfg.coherence_family));
    io::write_coherence(fit_dir(cfg, fm.meta.variant) / "coherence.csv", curves);
    return curves;
}

inline CvResult cmd_cv(const RunConfig& cfg, const LoadedData& d) {
    const auto split = split_season(d.days);
    CvOptions opt;
    for (const auto& v : cfg.cv_variants) opt.variants.push_back(ModelVariant::parse(v));
    opt.folds = cfg.folds;
    opt.fit = cfg.fit_options(d.bank.spec());
    auto res = run_cv(d.data, d.bank, split, opt);
    const fs::path out = fs::path(cfg.output_dir) / "cv";
    io::write_scorecard(out / "scorecard.csv", table_rows(res), cfg.pollutants);
    io::write_scorecard(out / "scorecard_all.csv", res.averaged, cfg.pollutants);
    auto cards = res.per_fold;
    cards.insert(cards.end(), res.averaged.begin(), res.averaged.end());
    io::write_scorecard_long(out / "scorecard_folds.csv", cards, cfg.pollutants);
    io::write_group_means(out / "group_means.csv", res.predictions, res.observed, cfg.pollutants,
                          res.prediction_variant);
    return res;
}

}  // namespace specdown
