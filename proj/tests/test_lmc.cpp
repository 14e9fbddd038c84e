#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "specdown/lmc.hpp"

using namespace specdown;

namespace {

StackedLayout two_day_layout() {
    std::vector<SiteObs> obs{{2, 1, 10, 0}, {1, 0, 0, 0}, {1, 1, 30, 40}, {2, 0, 10, 0}, {1, 0, 30, 40}, {2, 1, 50, 5}};
    return make_layout(obs);
}

}  // namespace

TEST(Coreg, Validates) {
    Eigen::MatrixXd L(2, 2);
    L << 1, 0, 0.5, 0.0;
    EXPECT_THROW(Coreg{L}, DomainError);
    L << 1, 0.1, 0.5, 1;
    EXPECT_THROW(Coreg{L}, DomainError);
    EXPECT_THROW(SpatialDecay(0.0), DomainError);
}

TEST(SpatialDecay, BoundsGiveRangeBetweenTenthAndThreeQuarters) {
    const auto [lo, hi] = SpatialDecay::bounds(400.0);
    EXPECT_DOUBLE_EQ(SpatialDecay(lo).effective_range(), 300.0);
    EXPECT_DOUBLE_EQ(SpatialDecay(hi).effective_range(), 40.0);
}

TEST(Layout, GroupsByDayThenPollutantAndIsABijection) {
    const auto lay = two_day_layout();
    ASSERT_EQ(lay.days.size(), 2u);
    EXPECT_EQ(lay.days[0].day, 1);
    EXPECT_EQ(lay.days[1].offset, 3u);
    std::vector<int> seen(6, 0);
    for (const auto& b : lay.days) {
        for (std::size_t i = 1; i < b.entries.size(); ++i) EXPECT_LE(b.entries[i - 1].k, b.entries[i].k);
        for (const auto& e : b.entries) ++seen[e.obs_index];
    }
    for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(LmcCovariance, EntriesFollowTheCoregionalizationFormula) {
    Eigen::MatrixXd L(2, 2);
    L << 0.8, 0, -0.3, 0.5;
    const Coreg c(L);
    const SpatialDecay phi(0.02);
    const auto lay = two_day_layout();
    const auto C = lmc_covariance(lay, c, phi);
    const Eigen::MatrixXd A = L * L.transpose();
    for (const auto& bi : lay.days)
        for (const auto& bj : lay.days)
            for (std::size_t a = 0; a < bi.size(); ++a)
                for (std::size_t b = 0; b < bj.size(); ++b) {
                    const double got = C(static_cast<Eigen::Index>(bi.offset + a), static_cast<Eigen::Index>(bj.offset + b));
                    if (bi.day != bj.day) {
                        EXPECT_EQ(got, 0.0);
                        continue;
                    }
                    const auto& ea = bi.entries[a];
                    const auto& eb = bj.entries[b];
                    const double want = A(ea.k, eb.k) * std::exp(-0.02 * std::hypot(ea.x - eb.x, ea.y - eb.y));
                    EXPECT_NEAR(got, want, 1e-14);
                }
    EXPECT_LT((C - C.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Factorize, JittersOnceAndThenGivesUp) {
    const Eigen::MatrixXd c = Eigen::MatrixXd::Ones(3, 3);  // rank one, PSD
    bool jittered = false;
    EXPECT_NO_THROW(factorize(c, &jittered));
    EXPECT_TRUE(jittered);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(2, 2);
    bad(1, 1) = -1.0;
    try {
        factorize(bad);
        FAIL();
    } catch (const NotPositiveDefinite& e) {
        EXPECT_NEAR(e.min_eigenvalue, -1.0, 1e-12);
    }
}

TEST(MarginalLoglik, MatchesDenseGaussianDensity) {
    Eigen::MatrixXd L(2, 2);
    L << 0.8, 0, -0.3, 0.5;
    const auto lay = two_day_layout();
    Eigen::VectorXd r(6), nug(6);
    r << 0.1, -0.4, 0.3, 0.0, 0.2, -0.1;
    nug << 0.05, 0.05, 0.1, 0.1, 0.05, 0.1;
    Eigen::MatrixXd C = lmc_covariance(lay, Coreg(L), SpatialDecay(0.02));
    C.diagonal() += nug;
    const double want = -0.5 * (6 * std::log(2 * std::numbers::pi) + std::log(C.determinant()) + r.dot(C.inverse() * r));
    EXPECT_NEAR(marginal_loglik(r, lay, Coreg(L), SpatialDecay(0.02), nug), want, 1e-10);
}

TEST(SampleW, EmpiricalCovarianceMatches) {
    Eigen::MatrixXd L(2, 2);
    L << 1.0, 0, 0.6, 0.8;
    std::vector<SiteObs> obs{{1, 0, 0, 0}, {1, 1, 0, 0}, {1, 0, 20, 0}, {1, 1, 20, 0}};
    const auto lay = make_layout(obs);
    const auto C = lmc_covariance(lay, Coreg(L), SpatialDecay(0.05));
    Rng rng(11);
    const int n = 20000;
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(4, 4);
    for (int i = 0; i < n; ++i) {
        const auto w = sample_w(lay, Coreg(L), SpatialDecay(0.05), rng);
        S += w * w.transpose();
    }
    S /= n;
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
            const double se = std::sqrt((C(a, a) * C(b, b) + C(a, b) * C(a, b)) / n);
            EXPECT_NEAR(S(a, b), C(a, b), 4 * se) << a << "," << b;
        }
}
