#pragma once

// Fitting one model variant on a training set: least squares per pollutant
// for the independent variants, batched MCMC plus consensus for the spatial
// ones.

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "specdown/consensus.hpp"
#include "specdown/error.hpp"
#include "specdown/mcmc.hpp"
#include "specdown/ols.hpp"
#include "specdown/posterior.hpp"
#include "specdown/rng.hpp"
#include "specdown/station.hpp"

namespace specdown {

/// Runs fn(0..n-1) on up to `jobs` threads. The first exception is rethrown
/// after all workers stop.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const auto workers = static_cast<std::size_t>(std::clamp(jobs, 1, 256));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex mu;
    auto run = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (error) return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(workers, n); ++t) pool.emplace_back(run);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

struct Dataset {
    std::map<std::string, Station> stations;
    std::vector<Observation> obs;  ///< log scale
};

/// Splits consecutive training days into windows of `size` day slots.
/// A trailing window with fewer slots is dropped with a warning.
inline std::vector<std::vector<int>> make_batches(const std::vector<int>& train_days, int size = 3) {
    if (size < 1) throw ConfigError("batch size must be positive");
    std::vector<std::vector<int>> out;
    for (std::size_t i = 0; i < train_days.size(); i += static_cast<std::size_t>(size)) {
        const std::size_t end = std::min(train_days.size(), i + static_cast<std::size_t>(size));
        if (end - i < static_cast<std::size_t>(size)) {
            warn("dropping partial batch of " + std::to_string(end - i) + " day(s) starting at day " +
                 std::to_string(train_days[i]));
            break;
        }
        out.emplace_back(train_days.begin() + static_cast<long>(i), train_days.begin() + static_cast<long>(end));
    }
    return out;
}

struct FitOptions {
    ModelVariant variant;
    int K = 1;
    std::optional<Priors> priors;  ///< default: Priors::for_domain(grid diameter)
    McmcConfig mcmc;
    int batch_days = 3;
    int jobs = 1;
    std::uint64_t seed = 1;
};

struct OlsBlock {
    std::vector<Eigen::Index> columns;  ///< design columns of this pollutant
    OlsResult fit;
};

struct FittedModel {
    ModelMeta meta;
    std::vector<int> train_days;
    std::vector<BatchPosterior> batches;  ///< spatial variants only
    BatchPosterior combined;              ///< consensus (spatial) or sampling distribution (least squares)
    std::vector<OlsBlock> ols;            ///< independent variants only, one per pollutant

    bool spatial() const { return meta.variant.spatial; }
};

namespace detail {

inline std::vector<Observation> sorted_obs(std::vector<Observation> obs) {
    std::sort(obs.begin(), obs.end(), [](const Observation& a, const Observation& b) {
        if (a.day != b.day) return a.day < b.day;
        if (a.pollutant != b.pollutant) return a.pollutant < b.pollutant;
        return a.site_id < b.site_id;
    });
    return obs;
}

inline ModelMeta make_meta(const ModelVariant& variant, const CovariateBank& bank, int K, const DesignMatrix& d) {
    ModelMeta m;
    m.variant = variant;
    m.K = K;
    m.J = bank.J();
    m.B = variant.mean == MeanKind::SD ? bank.B() : 0;
    m.degree = bank.basis().degree();
    m.center = bank.centered();
    m.columns = d.columns;
    m.scales = d.scales;
    return m;
}

}  // namespace detail

/// Least-squares sampling distribution expressed as draws in the posterior
/// layout: beta ~ N(beta_hat, V) per pollutant, log tau2 fixed at log sigma2.
inline BatchPosterior ols_draws(const std::vector<OlsBlock>& blocks, const ModelMeta& meta, int count,
                                std::uint64_t seed) {
    const ParamLayout lay{meta.P_beta(), meta.K, false};
    BatchPosterior post;
    post.model = meta;
    post.param_names = lay.names(meta.columns);
    post.draws = Eigen::MatrixXd::Zero(count, lay.size());
    post.seed = seed;
    post.batch_index = -1;
    Rng rng(derive_seed(seed, streams::ols_draws, 0));
    for (int k = 0; k < meta.K; ++k) {
        const auto& blk = blocks[static_cast<std::size_t>(k)];
        const auto p = static_cast<Eigen::Index>(blk.columns.size());
        Eigen::LLT<Eigen::MatrixXd> llt(blk.fit.covariance);
        Eigen::MatrixXd Lc = Eigen::MatrixXd::Zero(p, p);
        if (llt.info() == Eigen::Success) Lc = llt.matrixL();
        for (int i = 0; i < count; ++i) {
            Eigen::VectorXd z(p);
            for (Eigen::Index c = 0; c < p; ++c) z[c] = std_normal(rng);
            const Eigen::VectorXd b = blk.fit.coefficients + Lc * z;
            for (Eigen::Index c = 0; c < p; ++c) post.draws(i, blk.columns[static_cast<std::size_t>(c)]) = b[c];
            post.draws(i, lay.log_tau2(k)) = std::log(blk.fit.sigma2);
        }
    }
    if (count >= 2) post.sample_cov = sample_covariance(post.draws);
    return post;
}

/// Fits `opts.variant` to the observations that fall on `train_days`.
template <class StationMap>
FittedModel fit_model(const StationMap& stations, const std::vector<Observation>& observations,
                      const CovariateBank& bank, const std::vector<int>& train_days, const FitOptions& opts) {
    if (opts.K < 1) throw ConfigError("at least one pollutant is required");
    const std::set<int> day_set(train_days.begin(), train_days.end());
    std::vector<Observation> obs;
    for (const auto& o : observations)
        if (day_set.count(o.day) && o.pollutant < opts.K) obs.push_back(o);
    obs = detail::sorted_obs(std::move(obs));
    if (obs.empty()) throw DomainError("no training observations on the requested days");

    const DesignMatrix raw = assemble_design(opts.variant, bank, opts.K, stations, obs);
    const DesignMatrix d = standardize(raw);

    FittedModel fm;
    fm.meta = detail::make_meta(opts.variant, bank, opts.K, d);
    fm.train_days = train_days;
    const Eigen::Index n = static_cast<Eigen::Index>(obs.size());
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = obs[static_cast<std::size_t>(i)].value;

    if (!opts.variant.spatial) {
        const auto names = d.names();
        for (int k = 0; k < opts.K; ++k) {
            OlsBlock blk;
            for (std::size_t c = 0; c < d.columns.size(); ++c)
                if (d.columns[c].k == k) blk.columns.push_back(static_cast<Eigen::Index>(c));
            std::vector<Eigen::Index> rows;
            for (Eigen::Index i = 0; i < n; ++i)
                if (obs[static_cast<std::size_t>(i)].pollutant == k) rows.push_back(i);
            if (rows.empty()) throw DomainError("no training observations for pollutant " + std::to_string(k));
            Eigen::MatrixXd Xk(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(blk.columns.size()));
            Eigen::VectorXd yk(static_cast<Eigen::Index>(rows.size()));
            std::vector<std::string> nk;
            for (auto c : blk.columns) nk.push_back(names[static_cast<std::size_t>(c)]);
            for (std::size_t r = 0; r < rows.size(); ++r) {
                for (std::size_t c = 0; c < blk.columns.size(); ++c)
                    Xk(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = d.X(rows[r], blk.columns[c]);
                yk[static_cast<Eigen::Index>(r)] = y[rows[r]];
            }
            blk.fit = fit_ols(Xk, yk, nk);
            if (!std::isfinite(blk.fit.sigma2))
                throw RankDeficient("pollutant " + std::to_string(k) + " has no residual degrees of freedom");
            fm.ols.push_back(std::move(blk));
        }
        fm.combined = ols_draws(fm.ols, fm.meta, opts.mcmc.kept(), opts.seed);
        fm.combined.days = train_days;
        return fm;
    }

    const Priors priors = opts.priors ? *opts.priors : Priors::for_domain(bank.spec().diameter_km());
    fm.meta.phi_bounds = {priors.phi_lo, priors.phi_hi};
    const auto windows = make_batches(train_days, opts.batch_days);
    if (windows.empty()) throw DomainError("training period shorter than one batch");

    std::vector<RowInfo> info(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const auto& st = stations.at(obs[i].site_id);
        info[i] = {obs[i].site_id, obs[i].day, obs[i].pollutant, st.x, st.y};
    }
    std::vector<BatchData> data;
    for (std::size_t b = 0; b < windows.size(); ++b) {
        const std::set<int> wd(windows[b].begin(), windows[b].end());
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < obs.size(); ++i)
            if (wd.count(obs[i].day)) rows.push_back(i);
        if (rows.empty()) {
            warn("batch " + std::to_string(b) + " has no observations; skipped");
            continue;
        }
        data.push_back(make_batch(static_cast<int>(b), windows[b], d.X, y, info, rows, fm.meta));
    }
    if (data.empty()) throw DomainError("no batch has observations");
    fm.batches.resize(data.size());
    parallel_for(data.size(), opts.jobs, [&](std::size_t i) {
        McmcConfig cfg = opts.mcmc;
        cfg.seed = derive_seed(opts.seed, streams::batch, static_cast<std::uint64_t>(data[i].batch_index));
        fm.batches[i] = fit_batch_mcmc(data[i], priors, cfg);
    });
    fm.combined = consensus_combine(fm.batches);
    return fm;
}

}  // namespace specdown
