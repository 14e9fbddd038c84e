#include <random>

#include <gtest/gtest.h>

#include "specdown/consensus.hpp"

using namespace specdown;

namespace {

BatchPosterior gaussian_batch(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int I, int first_day, int index,
                              std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    const Eigen::MatrixXd L = cov.llt().matrixL();
    BatchPosterior b;
    const auto P = mean.size();
    for (Eigen::Index p = 0; p < P; ++p) b.param_names.push_back("t" + std::to_string(p));
    b.draws.resize(I, P);
    for (int i = 0; i < I; ++i) {
        Eigen::VectorXd z(P);
        for (auto& v : z) v = n(rng);
        b.draws.row(i) = (mean + L * z).transpose();
    }
    b.sample_cov = sample_covariance(b.draws);
    b.days = {first_day, first_day + 1, first_day + 2};
    b.batch_index = index;
    return b;
}

}  // namespace

TEST(Consensus, SingleBatchIsReturnedUnchanged) {
    const auto b = gaussian_batch(Eigen::Vector2d(1, 2), Eigen::Matrix2d::Identity(), 100, 1, 0, 1);
    const auto c = consensus_combine({b});
    EXPECT_TRUE(c.draws == b.draws);
    EXPECT_TRUE(c.sample_cov == b.sample_cov);
    EXPECT_EQ(c.days, b.days);
}

TEST(Consensus, ProductOfGaussians) {
    Eigen::Matrix2d S1, S2;
    S1 << 1.0, 0.3, 0.3, 0.5;
    S2 << 0.4, -0.1, -0.1, 2.0;
    const Eigen::Vector2d m1(0.5, -1.0), m2(-0.2, 1.5);
    const int I = 50000;
    const auto c = consensus_combine({gaussian_batch(m1, S1, I, 1, 0, 2), gaussian_batch(m2, S2, I, 4, 1, 3)});
    const Eigen::Matrix2d cov = (S1.inverse() + S2.inverse()).inverse();
    const Eigen::Vector2d mean = cov * (S1.inverse() * m1 + S2.inverse() * m2);
    const Eigen::Vector2d got = c.draws.colwise().mean().transpose();
    EXPECT_LT((got - mean).cwiseAbs().maxCoeff(), 0.02);
    const Eigen::Matrix2d sc = sample_covariance(c.draws);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(sc(i, i) / cov(i, i), 1.0, 0.05);
}

TEST(Consensus, InputOrderDoesNotMatter) {
    const Eigen::Matrix2d S = Eigen::Matrix2d::Identity();
    auto a = gaussian_batch(Eigen::Vector2d(0, 0), S, 200, 1, 0, 4);
    auto b = gaussian_batch(Eigen::Vector2d(1, 1), S, 200, 4, 1, 5);
    auto d = gaussian_batch(Eigen::Vector2d(2, 0), S, 200, 7, 2, 6);
    const auto x = consensus_combine({a, b, d});
    const auto y = consensus_combine({d, a, b});
    EXPECT_TRUE(x.draws == y.draws);
}

TEST(Consensus, TruncatesToShortestChainAndChecksNames) {
    const Eigen::Matrix2d S = Eigen::Matrix2d::Identity();
    auto a = gaussian_batch(Eigen::Vector2d(0, 0), S, 300, 1, 0, 7);
    auto b = gaussian_batch(Eigen::Vector2d(0, 0), S, 200, 4, 1, 8);
    EXPECT_EQ(consensus_combine({a, b}).count(), 200);
    b.param_names[1] = "other";
    EXPECT_THROW(consensus_combine({a, b}), ConfigError);
    EXPECT_THROW(consensus_combine({}), DomainError);
}

TEST(Consensus, SingularCovarianceGetsARidge) {
    Eigen::Matrix2d S = Eigen::Matrix2d::Identity();
    auto a = gaussian_batch(Eigen::Vector2d(0, 0), S, 100, 1, 0, 9);
    auto b = gaussian_batch(Eigen::Vector2d(1, 0), S, 100, 4, 1, 10);
    b.draws.col(1).setConstant(0.25);  // a parameter held fixed in one batch
    b.sample_cov = sample_covariance(b.draws);
    const auto c = consensus_combine({a, b});
    EXPECT_TRUE(c.draws.allFinite());
    // the fixed coordinate dominates through its huge precision
    EXPECT_NEAR(c.draws.col(1).mean(), 0.25, 1e-3);
}
