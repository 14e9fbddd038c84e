#include <cmath>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/inverse_gamma.hpp>
#include <gtest/gtest.h>

#include "specdown/mcmc.hpp"

using namespace specdown;

namespace {

/// Batch with `sites` random locations per day, pollutants alternating over
/// 0..K-1, and p columns (an intercept plus standard normals).
BatchData toy_batch(int days, int sites, int K, int p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 200.0);
    std::vector<RowInfo> info;
    for (int d = 0; d < days; ++d)
        for (int s = 0; s < sites; ++s) info.push_back({"S" + std::to_string(s), d + 1, s % K, u(rng), u(rng)});
    const auto N = static_cast<Eigen::Index>(info.size());
    Eigen::MatrixXd X(N, p);
    Eigen::VectorXd y(N);
    for (Eigen::Index i = 0; i < N; ++i) {
        X(i, 0) = 1.0;
        for (int c = 1; c < p; ++c) X(i, c) = n(rng);
        y[i] = 0.5 + (p > 1 ? 0.8 * X(i, 1) : 0.0) + 0.3 * n(rng);
    }
    ModelMeta meta;
    meta.variant = ModelVariant::parse("SpLD");
    meta.K = K;
    for (int c = 0; c < p; ++c) meta.columns.push_back({c == 0, 0, c == 0 ? -1 : c, -1});
    meta.scales.assign(static_cast<std::size_t>(p), {});
    std::vector<std::size_t> rows(info.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = rows.size() - 1 - i;  // reversed on purpose
    std::vector<int> dd;
    for (int d = 0; d < days; ++d) dd.push_back(d + 1);
    return make_batch(0, dd, X, y, info, rows, meta);
}

Priors toy_priors() {
    Priors p;
    p.phi_lo = 0.005;
    p.phi_hi = 0.1;
    return p;
}

}  // namespace

TEST(MakeBatch, RowsFollowLayoutOrder) {
    const auto b = toy_batch(3, 5, 2, 2, 1);
    Eigen::Index pos = 0;
    for (const auto& block : b.layout.days)
        for (const auto& e : block.entries) {
            EXPECT_EQ(e.obs_index, static_cast<std::size_t>(pos));
            EXPECT_EQ(b.k[static_cast<std::size_t>(pos)], e.k);
            ++pos;
        }
    EXPECT_EQ(pos, b.n());
    for (std::size_t i = 1; i < b.k.size(); ++i) {
        const bool same_day = i % 5 != 0;
        if (same_day) {
            EXPECT_LE(b.k[i - 1], b.k[i]);
        }
    }
}

TEST(McmcConfig, Validates) {
    McmcConfig c;
    c.iterations = 10;
    c.burn_in = 10;
    EXPECT_THROW(c.validate(), ConfigError);
    c.burn_in = 2;
    c.thin = 3;
    EXPECT_EQ(c.kept(), 3);
    c.thin = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SpatialSampler, ConjugateBetaMatchesClosedForm) {
    const auto b = toy_batch(4, 10, 1, 3, 2);
    Priors pr = toy_priors();
    pr.beta_sd = 2.0;
    McmcConfig cfg;
    cfg.iterations = 20000;
    cfg.burn_in = 10;
    cfg.thin = 1;
    cfg.fix_w_zero = cfg.fix_tau2 = cfg.fix_spatial = true;
    cfg.init = InitialState{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Constant(1, 0.2), Eigen::MatrixXd::Identity(1, 1), 0.02};
    cfg.store_w = false;
    cfg.seed = 9;
    const auto post = fit_batch_mcmc(b, pr, cfg);
    Eigen::MatrixXd prec = b.X.transpose() * b.X / 0.2;
    prec.diagonal().array() += 1.0 / 4.0;
    const Eigen::MatrixXd cov = prec.inverse();
    const Eigen::VectorXd mean = cov * (b.X.transpose() * b.y / 0.2);
    const Eigen::MatrixXd beta = post.draws.leftCols(3);
    const Eigen::VectorXd m = beta.colwise().mean().transpose();
    const double I = static_cast<double>(beta.rows());
    const Eigen::MatrixXd S = sample_covariance(beta);
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(m[i], mean[i], 4 * std::sqrt(cov(i, i) / I));
        for (int j = 0; j < 3; ++j) {
            const double se = std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / I);
            EXPECT_NEAR(S(i, j), cov(i, j), 4 * se);
        }
    }
    // tau2 held fixed
    EXPECT_EQ(post.draws.col(3).minCoeff(), std::log(0.2));
    EXPECT_EQ(post.draws.col(3).maxCoeff(), std::log(0.2));
}

TEST(SpatialSampler, TauConjugateDrawIsInverseGamma) {
    Priors pr;
    Rng rng(4);
    const double n = 12, ss = 3.0;
    const boost::math::inverse_gamma_distribution<double> ig(pr.tau2_shape + n / 2, pr.tau2_scale + ss / 2);
    const int N = 40000;
    std::vector<double> draws(N);
    for (auto& d : draws) d = SpatialSampler::draw_tau2_conjugate(n, ss, pr, rng);
    for (double q : {0.1, 0.25, 0.5, 0.75, 0.9}) {
        const double cut = boost::math::quantile(ig, q);
        const double frac = static_cast<double>(std::count_if(draws.begin(), draws.end(), [&](double x) { return x <= cut; })) / N;
        EXPECT_NEAR(frac, q, 4 * std::sqrt(q * (1 - q) / N)) << q;
    }
}

TEST(SpatialSampler, WUpdateDrawsTheGaussianFullConditional) {
    const auto b = toy_batch(1, 6, 2, 1, 3);
    Eigen::MatrixXd L(2, 2);
    L << 0.7, 0, 0.2, 0.5;
    McmcConfig cfg;
    cfg.iterations = 2;
    cfg.burn_in = 1;
    cfg.init = InitialState{Eigen::VectorXd::Constant(1, 0.3), (Eigen::VectorXd(2) << 0.1, 0.2).finished(), L, 0.03};
    SpatialSampler s(b, toy_priors(), cfg);
    const Eigen::MatrixXd C = lmc_covariance(b.layout, Coreg(L), SpatialDecay(0.03));
    Eigen::VectorXd d(b.n());
    for (Eigen::Index i = 0; i < b.n(); ++i) d[i] = b.k[static_cast<std::size_t>(i)] == 0 ? 0.1 : 0.2;
    const Eigen::MatrixXd M = (C + Eigen::MatrixXd(d.asDiagonal())).inverse();
    const Eigen::VectorXd r = b.y - b.X * Eigen::VectorXd::Constant(1, 0.3);
    const Eigen::VectorXd mean = C * M * r;
    const Eigen::MatrixXd cov = C - C * M * C;
    const int N = 40000;
    Eigen::MatrixXd W(N, b.n());
    for (int i = 0; i < N; ++i) {
        s.update_w();
        W.row(i) = s.state().w.transpose();
    }
    const Eigen::VectorXd m = W.colwise().mean().transpose();
    const Eigen::MatrixXd S = sample_covariance(W);
    for (Eigen::Index i = 0; i < b.n(); ++i) {
        EXPECT_NEAR(m[i], mean[i], 4 * std::sqrt(cov(i, i) / N));
        for (Eigen::Index j = 0; j < b.n(); ++j)
            EXPECT_NEAR(S(i, j), cov(i, j), 4 * std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / N));
    }
}

TEST(SpatialSampler, PhiRecoversItsUniformPriorWhenTheDataAreUninformative) {
    // One site per day: each day's covariance is 1x1 and does not involve phi.
    const auto b = toy_batch(6, 1, 1, 1, 4);
    McmcConfig cfg;
    cfg.iterations = 42000;
    cfg.burn_in = 2000;
    cfg.thin = 20;
    cfg.store_w = false;
    cfg.seed = 5;
    const auto pr = toy_priors();
    const auto post = fit_batch_mcmc(b, pr, cfg);
    const int bins = 10;
    std::vector<double> count(bins, 0.0);
    for (Eigen::Index i = 0; i < post.count(); ++i) {
        const double phi = post.params(i).phi;
        ASSERT_GT(phi, pr.phi_lo);
        ASSERT_LT(phi, pr.phi_hi);
        const int bin = std::min(bins - 1, static_cast<int>((phi - pr.phi_lo) / (pr.phi_hi - pr.phi_lo) * bins));
        count[static_cast<std::size_t>(bin)] += 1.0;
    }
    const double expected = static_cast<double>(post.count()) / bins;
    double chi2 = 0.0;
    for (double c : count) chi2 += (c - expected) * (c - expected) / expected;
    const boost::math::chi_squared_distribution<double> dist(bins - 1);
    EXPECT_LT(chi2, boost::math::quantile(dist, 0.999)) << "chi2 = " << chi2;
    const double rate = post.acceptance.at("phi");
    EXPECT_GT(rate, 0.15);
    EXPECT_LT(rate, 0.6);
}

TEST(FitBatchMcmc, ShapesNamesAndDeterminism) {
    const auto b = toy_batch(3, 6, 2, 2, 6);
    McmcConfig cfg;
    cfg.iterations = 300;
    cfg.burn_in = 100;
    cfg.thin = 4;
    cfg.seed = 77;
    const auto a = fit_batch_mcmc(b, toy_priors(), cfg);
    const auto c = fit_batch_mcmc(b, toy_priors(), cfg);
    EXPECT_EQ(a.count(), cfg.kept());
    EXPECT_EQ(a.param_names.size(), static_cast<std::size_t>(2 + 2 + 3 + 1));
    EXPECT_EQ(a.param_names.back(), "logit_phi");
    EXPECT_EQ(a.w.draws.cols(), b.n());
    EXPECT_EQ(a.w.sites.size(), static_cast<std::size_t>(b.n()));
    EXPECT_TRUE(a.draws == c.draws);
    EXPECT_TRUE(a.w.draws == c.w.draws);
    cfg.seed = 78;
    EXPECT_FALSE(fit_batch_mcmc(b, toy_priors(), cfg).draws == a.draws);
    for (Eigen::Index i = 0; i < a.count(); ++i) {
        const auto p = a.params(i);
        EXPECT_GT(p.L(0, 0), 0.0);
        EXPECT_EQ(p.L(0, 1), 0.0);
        EXPECT_GT(p.tau2.minCoeff(), 0.0);
    }
}

TEST(FitBatchMcmc, RejectsNonSpatialVariant) {
    auto b = toy_batch(1, 3, 1, 1, 8);
    b.model.variant = ModelVariant::parse("LD");
    McmcConfig cfg;
    cfg.iterations = 10;
    cfg.burn_in = 1;
    EXPECT_THROW(fit_batch_mcmc(b, toy_priors(), cfg), ConfigError);
}

TEST(SpatialSampler, TauStdDevPriorStepRuns) {
    const auto b = toy_batch(2, 8, 1, 2, 10);
    Priors pr = toy_priors();
    pr.tau_prior = Priors::TauPrior::StdDev;
    McmcConfig cfg;
    cfg.iterations = 400;
    cfg.burn_in = 200;
    cfg.thin = 1;
    const auto post = fit_batch_mcmc(b, pr, cfg);
    ASSERT_TRUE(post.acceptance.count("tau2[0]"));
    EXPECT_GT(post.acceptance.at("tau2[0]"), 0.05);
}
