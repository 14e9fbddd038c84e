#pragma once

// Per-batch Gibbs / Metropolis-Hastings sampler for the spatial variants.
//
// One iteration updates, in order:
//   1. w | rest        exact Gaussian draw per day (conditional sampling by
//                      perturbation: w = w* + C (C + D)^-1 (r - w* - e*))
//   2. beta | rest     conjugate Gaussian given y - w
//   3. tau2_k | rest   conjugate inverse gamma (or random-walk MH on log tau2
//                      when the prior is placed on tau instead)
//   4. phi | rest      random walk on logit(phi) against N(w; 0, C(L, phi))
//   5. L entries       random walk, log scale on the diagonal, same target
//                      plus the L prior
// Step sizes adapt during burn-in toward 25-45% acceptance and are frozen
// afterwards.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "specdown/error.hpp"
#include "specdown/lmc.hpp"
#include "specdown/posterior.hpp"
#include "specdown/rng.hpp"

namespace specdown {

struct Priors {
    double beta_sd = 100.0;
    double L_offdiag_sd = 10.0;
    double L_diag_lognormal_sd = 10.0;
    double tau2_shape = 2.0;
    double tau2_scale = 0.1;
    /// Inverse-gamma prior on tau2 (conjugate) or on tau.
    enum class TauPrior { Variance, StdDev } tau_prior = TauPrior::Variance;
    double phi_lo = 3.0 / (0.75 * 1000.0);
    double phi_hi = 3.0 / (0.1 * 1000.0);

    static Priors for_domain(double diameter_km) {
        Priors p;
        std::tie(p.phi_lo, p.phi_hi) = SpatialDecay::bounds(diameter_km);
        return p;
    }

    void validate() const {
        if (!(beta_sd > 0 && L_offdiag_sd > 0 && L_diag_lognormal_sd > 0 && tau2_shape > 0 && tau2_scale > 0))
            throw ConfigError("prior scales must be positive");
        if (!(phi_lo > 0 && phi_lo < phi_hi)) throw ConfigError("phi prior bounds must be ordered and positive");
    }
};

struct InitialState {
    Eigen::VectorXd beta;
    Eigen::VectorXd tau2;
    Eigen::MatrixXd L;
    double phi = 0.0;
};

struct McmcConfig {
    int iterations = 5000;
    int burn_in = 2000;
    int thin = 3;
    double phi_step = 0.5;  ///< on logit scale
    double L_step = 0.1;    ///< log scale for the diagonal
    double tau_step = 0.3;  ///< log tau2 scale, only for the tau prior
    bool adapt = true;
    std::uint64_t seed = 1;
    bool store_w = true;

    // Sub-model switches (for verification runs): hold w at 0, keep tau2
    // at its initial value, keep L and phi at their initial values.
    bool fix_w_zero = false;
    bool fix_tau2 = false;
    bool fix_spatial = false;
    std::optional<InitialState> init;

    void validate() const {
        if (iterations <= burn_in || burn_in < 0) throw ConfigError("mcmc iterations must exceed burn-in >= 0");
        if (thin < 1) throw ConfigError("mcmc thinning must be >= 1");
        if (!(phi_step > 0 && L_step > 0 && tau_step > 0)) throw ConfigError("mcmc step sizes must be positive");
    }
    int kept() const { return (iterations - burn_in + thin - 1) / thin; }
};

/// Rows of one time batch, ordered as the stacked layout (day, pollutant).
struct BatchData {
    int batch_index = 0;
    std::vector<int> days;
    Eigen::MatrixXd X;  ///< standardized design rows
    Eigen::VectorXd y;
    std::vector<int> k;  ///< pollutant of each row
    std::vector<std::string> site_ids;
    StackedLayout layout;  ///< obs_index == row index
    ModelMeta model;

    Eigen::Index n() const { return y.size(); }
};

/// Row description used to build batches.
struct RowInfo {
    std::string site_id;
    int day = 0;
    int k = 0;
    double x = 0.0;
    double y = 0.0;
};

/// Collects `rows` of a (standardized) design into a batch in layout order.
inline BatchData make_batch(int index, const std::vector<int>& days, const Eigen::MatrixXd& X,
                            const Eigen::VectorXd& y, const std::vector<RowInfo>& info,
                            const std::vector<std::size_t>& rows, const ModelMeta& meta) {
    std::vector<SiteObs> so;
    so.reserve(rows.size());
    for (auto r : rows) so.push_back({info[r].day, info[r].k, info[r].x, info[r].y});
    auto layout = make_layout(so);
    BatchData b;
    b.batch_index = index;
    b.days = days;
    b.model = meta;
    const auto n = static_cast<Eigen::Index>(rows.size());
    b.X.resize(n, X.cols());
    b.y.resize(n);
    b.k.resize(rows.size());
    b.site_ids.resize(rows.size());
    Eigen::Index pos = 0;
    for (auto& block : layout.days)
        for (auto& e : block.entries) {
            const auto src = rows[e.obs_index];
            b.X.row(pos) = X.row(static_cast<Eigen::Index>(src));
            b.y[pos] = y[static_cast<Eigen::Index>(src)];
            b.k[static_cast<std::size_t>(pos)] = info[src].k;
            b.site_ids[static_cast<std::size_t>(pos)] = info[src].site_id;
            e.obs_index = static_cast<std::size_t>(pos);
            ++pos;
        }
    b.layout = std::move(layout);
    return b;
}

struct SamplerState {
    Eigen::VectorXd beta;
    Eigen::VectorXd tau2;
    Eigen::MatrixXd L;
    double phi = 0.0;
    Eigen::VectorXd w;
};

class SpatialSampler {
public:
    SpatialSampler(const BatchData& data, const Priors& priors, const McmcConfig& cfg)
        : data_(data), priors_(priors), cfg_(cfg), rng_(cfg.seed) {
        priors_.validate();
        cfg_.validate();
        K_ = data.model.K;
        if (data.n() == 0) throw DomainError("batch " + std::to_string(data.batch_index) + " has no observations");
        for (int kk : data.k)
            if (kk < 0 || kk >= K_) throw DomainError("row pollutant outside 0..K-1");
        phi_step_ = cfg.phi_step;
        L_steps_.assign(static_cast<std::size_t>(K_ * (K_ + 1) / 2), cfg.L_step);
        tau_steps_.assign(static_cast<std::size_t>(K_), cfg.tau_step);
        L_accepts_.assign(L_steps_.size(), 0);
        L_tries_.assign(L_steps_.size(), 0);
        tau_accepts_.assign(tau_steps_.size(), 0);
        tau_tries_.assign(tau_steps_.size(), 0);
        initialize();
        for (const auto& block : data_.layout.days) {
            DayCache c;
            c.offset = static_cast<Eigen::Index>(block.offset);
            c.n = static_cast<Eigen::Index>(block.size());
            c.dist = distance_matrix(block);
            c.kk.resize(block.size());
            for (std::size_t i = 0; i < block.size(); ++i) c.kk[i] = block.entries[i].k;
            days_.push_back(std::move(c));
        }
        const Eigen::MatrixXd A = state_.L * state_.L.transpose();
        for (auto& c : days_) {
            c.corr = (-state_.phi * c.dist.array()).exp().matrix();
            c.C = build_cov(c, A, c.corr);
            c.llt = factorize(c.C);
            c.loglik = gaussian_logpdf(state_.w.segment(c.offset, c.n), c.llt);
        }
    }

    SamplerState& state() { return state_; }
    const SamplerState& state() const { return state_; }
    Rng& rng() { return rng_; }

    double w_loglik() const {
        double s = 0.0;
        for (const auto& c : days_) s += c.loglik;
        return s;
    }

    void update_w() {
        if (cfg_.fix_w_zero) return;
        const Eigen::VectorXd resid = data_.y - data_.X * state_.beta;
        for (auto& c : days_) {
            Eigen::VectorXd z1(c.n), z2(c.n), d(c.n);
            for (Eigen::Index i = 0; i < c.n; ++i) z1[i] = std_normal(rng_);
            for (Eigen::Index i = 0; i < c.n; ++i) z2[i] = std_normal(rng_);
            for (Eigen::Index i = 0; i < c.n; ++i) d[i] = state_.tau2[c.kk[static_cast<std::size_t>(i)]];
            const Eigen::VectorXd w_star = c.llt.matrixL() * z1;
            const Eigen::VectorXd e_star = d.cwiseSqrt().cwiseProduct(z2);
            Eigen::MatrixXd M = c.C;
            M.diagonal() += d;
            Eigen::LLT<Eigen::MatrixXd> mllt;
            try {
                mllt = factorize(std::move(M));
            } catch (const NotPositiveDefinite& e) {
                throw NotPositiveDefinite("batch " + std::to_string(data_.batch_index) +
                                              ": w full conditional covariance failed: " + e.what(),
                                          e.min_eigenvalue);
            }
            const Eigen::VectorXd r = resid.segment(c.offset, c.n);
            Eigen::VectorXd w = w_star + c.C * mllt.solve(r - w_star - e_star);
            state_.w.segment(c.offset, c.n) = w;
            c.loglik = gaussian_logpdf(w, c.llt);
        }
    }

    void update_beta() {
        const Eigen::Index p = data_.X.cols();
        Eigen::VectorXd wt(data_.n());
        for (Eigen::Index i = 0; i < data_.n(); ++i) wt[i] = 1.0 / state_.tau2[data_.k[static_cast<std::size_t>(i)]];
        const Eigen::MatrixXd XtW = data_.X.transpose() * wt.asDiagonal();
        Eigen::MatrixXd prec = XtW * data_.X;
        prec.diagonal().array() += 1.0 / (priors_.beta_sd * priors_.beta_sd);
        const Eigen::VectorXd rhs = XtW * (data_.y - state_.w);
        Eigen::LLT<Eigen::MatrixXd> llt(prec);
        if (llt.info() != Eigen::Success) throw NotPositiveDefinite("beta posterior precision not positive definite", 0.0);
        const Eigen::VectorXd mean = llt.solve(rhs);
        Eigen::VectorXd z(p);
        for (Eigen::Index i = 0; i < p; ++i) z[i] = std_normal(rng_);
        state_.beta = mean + llt.matrixU().solve(z);
    }

    void update_tau2() {
        if (cfg_.fix_tau2) return;
        const Eigen::VectorXd e = data_.y - data_.X * state_.beta - state_.w;
        std::vector<double> ss(static_cast<std::size_t>(K_), 0.0), n(static_cast<std::size_t>(K_), 0.0);
        for (Eigen::Index i = 0; i < e.size(); ++i) {
            const auto k = static_cast<std::size_t>(data_.k[static_cast<std::size_t>(i)]);
            ss[k] += e[i] * e[i];
            n[k] += 1.0;
        }
        for (int k = 0; k < K_; ++k) {
            const auto kk = static_cast<std::size_t>(k);
            if (priors_.tau_prior == Priors::TauPrior::Variance)
                state_.tau2[k] = draw_tau2_conjugate(n[kk], ss[kk], priors_, rng_);
            else
                tau2_sd_prior_step(k, n[kk], ss[kk]);
        }
    }

    void update_phi() {
        if (cfg_.fix_spatial) return;
        const double lo = priors_.phi_lo, hi = priors_.phi_hi;
        const double z = logit_bounded(state_.phi, lo, hi);
        const double z_new = z + phi_step_ * std_normal(rng_);
        const double phi_new = inv_logit_bounded(z_new, lo, hi);
        ++phi_tries_;
        if (!(phi_new > lo && phi_new < hi)) return;
        const Eigen::MatrixXd A = state_.L * state_.L.transpose();
        std::vector<Proposal> props;
        double ll_new = 0.0;
        for (auto& c : days_) {
            Proposal pr;
            pr.corr = (-phi_new * c.dist.array()).exp().matrix();
            pr.C = build_cov(c, A, pr.corr);
            pr.llt.compute(pr.C);
            if (pr.llt.info() != Eigen::Success) return;
            pr.loglik = gaussian_logpdf(state_.w.segment(c.offset, c.n), pr.llt);
            ll_new += pr.loglik;
            props.push_back(std::move(pr));
        }
        const double log_jac_new = std::log(phi_new - lo) + std::log(hi - phi_new);
        const double log_jac_old = std::log(state_.phi - lo) + std::log(hi - state_.phi);
        const double log_ratio = ll_new - w_loglik() + log_jac_new - log_jac_old;
        if (accept(log_ratio)) {
            state_.phi = phi_new;
            for (std::size_t d = 0; d < days_.size(); ++d) {
                days_[d].corr = std::move(props[d].corr);
                commit(days_[d], props[d]);
            }
            ++phi_accepts_;
        }
    }

    void update_L() {
        if (cfg_.fix_spatial) return;
        int idx = 0;
        for (int r = 0; r < K_; ++r)
            for (int c = 0; c <= r; ++c, ++idx) {
                const auto si = static_cast<std::size_t>(idx);
                Eigen::MatrixXd L_new = state_.L;
                double log_prior_diff = 0.0;
                ++L_tries_[si];
                if (r == c) {
                    const double u = std::log(state_.L(r, r));
                    const double u_new = u + L_steps_[si] * std_normal(rng_);
                    L_new(r, r) = std::exp(u_new);
                    const double s2 = priors_.L_diag_lognormal_sd * priors_.L_diag_lognormal_sd;
                    log_prior_diff = -(u_new * u_new - u * u) / (2.0 * s2);
                } else {
                    const double v = state_.L(r, c);
                    const double v_new = v + L_steps_[si] * std_normal(rng_);
                    L_new(r, c) = v_new;
                    const double s2 = priors_.L_offdiag_sd * priors_.L_offdiag_sd;
                    log_prior_diff = -(v_new * v_new - v * v) / (2.0 * s2);
                }
                if (!(L_new(r, r) > 0.0) || !std::isfinite(L_new(r, r))) continue;
                const Eigen::MatrixXd A = L_new * L_new.transpose();
                std::vector<Proposal> props;
                double ll_new = 0.0;
                bool ok = true;
                for (auto& day : days_) {
                    Proposal pr;
                    pr.C = build_cov(day, A, day.corr);
                    pr.llt.compute(pr.C);
                    if (pr.llt.info() != Eigen::Success) {
                        ok = false;
                        break;
                    }
                    pr.loglik = gaussian_logpdf(state_.w.segment(day.offset, day.n), pr.llt);
                    ll_new += pr.loglik;
                    props.push_back(std::move(pr));
                }
                if (!ok) continue;
                if (accept(ll_new - w_loglik() + log_prior_diff)) {
                    state_.L = L_new;
                    for (std::size_t d = 0; d < days_.size(); ++d) commit(days_[d], props[d]);
                    ++L_accepts_[si];
                }
            }
    }

    void iterate() {
        update_w();
        update_beta();
        update_tau2();
        update_phi();
        update_L();
    }

    /// Adapts step sizes from the acceptance counts since the last call.
    void adapt() {
        auto tune = [](double& step, long& acc, long& tries) {
            if (tries == 0) return;
            const double rate = static_cast<double>(acc) / static_cast<double>(tries);
            if (rate < 0.25)
                step *= 0.75;
            else if (rate > 0.45)
                step *= 1.33;
            acc = tries = 0;
        };
        tune(phi_step_, phi_accepts_, phi_tries_);
        for (std::size_t i = 0; i < L_steps_.size(); ++i) tune(L_steps_[i], L_accepts_[i], L_tries_[i]);
        for (std::size_t i = 0; i < tau_steps_.size(); ++i) tune(tau_steps_[i], tau_accepts_[i], tau_tries_[i]);
    }

    void reset_counters() {
        phi_accepts_ = phi_tries_ = 0;
        std::fill(L_accepts_.begin(), L_accepts_.end(), 0);
        std::fill(L_tries_.begin(), L_tries_.end(), 0);
        std::fill(tau_accepts_.begin(), tau_accepts_.end(), 0);
        std::fill(tau_tries_.begin(), tau_tries_.end(), 0);
    }

    std::map<std::string, double> acceptance_rates() const {
        std::map<std::string, double> m;
        auto rate = [](long a, long t) { return t > 0 ? static_cast<double>(a) / static_cast<double>(t) : 0.0; };
        if (!cfg_.fix_spatial) {
            m["phi"] = rate(phi_accepts_, phi_tries_);
            int idx = 0;
            for (int r = 0; r < K_; ++r)
                for (int c = 0; c <= r; ++c, ++idx)
                    m["L[" + std::to_string(r) + "," + std::to_string(c) + "]"] =
                        rate(L_accepts_[static_cast<std::size_t>(idx)], L_tries_[static_cast<std::size_t>(idx)]);
        }
        if (priors_.tau_prior == Priors::TauPrior::StdDev && !cfg_.fix_tau2)
            for (int k = 0; k < K_; ++k)
                m["tau2[" + std::to_string(k) + "]"] =
                    rate(tau_accepts_[static_cast<std::size_t>(k)], tau_tries_[static_cast<std::size_t>(k)]);
        return m;
    }

    double phi_step() const { return phi_step_; }

    /// Current state as a transformed parameter vector.
    Eigen::VectorXd theta() const {
        const ParamLayout lay{static_cast<int>(data_.X.cols()), K_, true};
        Eigen::VectorXd t(lay.size());
        t.segment(0, lay.p) = state_.beta;
        for (int k = 0; k < K_; ++k) t[lay.log_tau2(k)] = std::log(state_.tau2[k]);
        for (int r = 0; r < K_; ++r)
            for (int c = 0; c <= r; ++c) t[lay.L(r, c)] = r == c ? std::log(state_.L(r, r)) : state_.L(r, c);
        t[lay.logit_phi()] = logit_bounded(state_.phi, priors_.phi_lo, priors_.phi_hi);
        return t;
    }

    /// Draw from the inverse-gamma full conditional of one nugget given n
    /// residuals with sum of squares ss.
    static double draw_tau2_conjugate(double n, double ss, const Priors& pr, Rng& rng) {
        const double shape = pr.tau2_shape + 0.5 * n;
        const double rate = pr.tau2_scale + 0.5 * ss;
        std::gamma_distribution<double> g(shape, 1.0 / rate);
        return 1.0 / g(rng);
    }

private:
    struct DayCache {
        Eigen::Index offset = 0;
        Eigen::Index n = 0;
        Eigen::MatrixXd dist;
        Eigen::MatrixXd corr;
        Eigen::MatrixXd C;
        std::vector<int> kk;
        Eigen::LLT<Eigen::MatrixXd> llt;
        double loglik = 0.0;
    };
    struct Proposal {
        Eigen::MatrixXd corr;
        Eigen::MatrixXd C;
        Eigen::LLT<Eigen::MatrixXd> llt;
        double loglik = 0.0;
    };

    static Eigen::MatrixXd build_cov(const DayCache& c, const Eigen::MatrixXd& A, const Eigen::MatrixXd& corr) {
        Eigen::MatrixXd C(c.n, c.n);
        for (Eigen::Index j = 0; j < c.n; ++j) {
            const int kj = c.kk[static_cast<std::size_t>(j)];
            for (Eigen::Index i = 0; i < c.n; ++i) C(i, j) = A(c.kk[static_cast<std::size_t>(i)], kj) * corr(i, j);
        }
        return C;
    }

    static void commit(DayCache& c, Proposal& p) {
        c.C = std::move(p.C);
        c.llt = std::move(p.llt);
        c.loglik = p.loglik;
    }

    bool accept(double log_ratio) {
        if (log_ratio >= 0.0) return true;
        std::uniform_real_distribution<double> u(0.0, 1.0);
        return std::log(u(rng_)) < log_ratio;
    }

    void tau2_sd_prior_step(int k, double n, double ss) {
        // Prior tau ~ IG(a, b); random walk on u = log tau2 with tau = exp(u/2).
        const auto ki = static_cast<std::size_t>(k);
        auto log_target = [&](double u) {
            const double t2 = std::exp(u);
            const double tau = std::exp(0.5 * u);
            const double loglik = -0.5 * n * u - 0.5 * ss / t2;
            const double logprior = -(priors_.tau2_shape + 1.0) * std::log(tau) - priors_.tau2_scale / tau;
            return loglik + logprior + std::log(0.5 * tau);
        };
        const double u = std::log(state_.tau2[k]);
        const double u_new = u + tau_steps_[ki] * std_normal(rng_);
        ++tau_tries_[ki];
        if (accept(log_target(u_new) - log_target(u))) {
            state_.tau2[k] = std::exp(u_new);
            ++tau_accepts_[ki];
        }
    }

    void initialize() {
        const Eigen::Index p = data_.X.cols();
        state_.w = Eigen::VectorXd::Zero(data_.n());
        if (cfg_.init) {
            state_.beta = cfg_.init->beta;
            state_.tau2 = cfg_.init->tau2;
            state_.L = cfg_.init->L;
            state_.phi = cfg_.init->phi;
            if (state_.beta.size() != p || state_.tau2.size() != K_ || state_.L.rows() != K_ || state_.L.cols() != K_)
                throw ConfigError("initial state has the wrong dimensions");
            if (!(state_.phi > priors_.phi_lo && state_.phi < priors_.phi_hi))
                throw ConfigError("initial phi outside its prior support");
            return;
        }
        Eigen::MatrixXd xtx = data_.X.transpose() * data_.X;
        xtx.diagonal().array() += 1e-6;
        state_.beta = xtx.ldlt().solve(data_.X.transpose() * data_.y);
        const Eigen::VectorXd e = data_.y - data_.X * state_.beta;
        state_.tau2 = Eigen::VectorXd::Constant(K_, 0.1);
        state_.L = Eigen::MatrixXd::Zero(K_, K_);
        for (int k = 0; k < K_; ++k) {
            double ss = 0.0, n = 0.0;
            for (Eigen::Index i = 0; i < e.size(); ++i)
                if (data_.k[static_cast<std::size_t>(i)] == k) {
                    ss += e[i] * e[i];
                    n += 1.0;
                }
            const double v = n > 1 ? std::max(ss / n, 1e-3) : 0.1;
            state_.tau2[k] = 0.5 * v;
            state_.L(k, k) = std::sqrt(0.5 * v);
        }
        state_.phi = std::sqrt(priors_.phi_lo * priors_.phi_hi);
    }

    const BatchData& data_;
    Priors priors_;
    McmcConfig cfg_;
    Rng rng_;
    int K_ = 1;
    SamplerState state_;
    std::vector<DayCache> days_;
    double phi_step_;
    std::vector<double> L_steps_;
    std::vector<double> tau_steps_;
    long phi_accepts_ = 0, phi_tries_ = 0;
    std::vector<long> L_accepts_, L_tries_;
    std::vector<long> tau_accepts_, tau_tries_;
};

/// Runs the sampler on one batch and collects thinned post-burn-in draws.
inline BatchPosterior fit_batch_mcmc(const BatchData& batch, const Priors& priors, const McmcConfig& cfg) {
    if (!batch.model.variant.spatial)
        throw ConfigError("fit_batch_mcmc needs a spatial variant; " + batch.model.variant.name() +
                          " is fit by least squares");
    cfg.validate();
    SpatialSampler s(batch, priors, cfg);
    const ParamLayout lay{batch.model.P_beta(), batch.model.K, true};
    const int kept = cfg.kept();
    BatchPosterior post;
    post.model = batch.model;
    post.model.phi_bounds = {priors.phi_lo, priors.phi_hi};
    post.param_names = lay.names(batch.model.columns);
    post.draws.resize(kept, lay.size());
    post.days = batch.days;
    post.batch_index = batch.batch_index;
    post.seed = cfg.seed;
    if (cfg.store_w) {
        post.w.draws.resize(kept, batch.n());
        for (const auto& block : batch.layout.days)
            for (const auto& e : block.entries)
                post.w.sites.push_back({block.day, e.k, batch.site_ids[e.obs_index], e.x, e.y});
    }
    int stored = 0;
    for (int it = 0; it < cfg.iterations; ++it) {
        s.iterate();
        if (it < cfg.burn_in) {
            if (cfg.adapt && (it + 1) % 50 == 0) s.adapt();
            if (it + 1 == cfg.burn_in) s.reset_counters();
            continue;
        }
        if ((it - cfg.burn_in) % cfg.thin == 0) {
            post.draws.row(stored) = s.theta().transpose();
            if (cfg.store_w) post.w.draws.row(stored) = s.state().w.transpose();
            ++stored;
        }
    }
    post.acceptance = s.acceptance_rates();
    post.sample_cov = post.draws.rows() >= 2 ? sample_covariance(post.draws)
                                             : Eigen::MatrixXd::Zero(lay.size(), lay.size());
    return post;
}

}  // namespace specdown
