#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "specdown/ols.hpp"

using namespace specdown;

TEST(Ols, MatchesExtendedPrecisionNormalEquations) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    const int N = 60, P = 6;
    Eigen::MatrixXd X(N, P);
    Eigen::VectorXd y(N);
    for (int i = 0; i < N; ++i) {
        X(i, 0) = 1.0;
        for (int c = 1; c < P; ++c) X(i, c) = n(rng) * c;
        y[i] = n(rng);
    }
    const auto fit = fit_ols(X, y);
    const auto want = oracle::normal_equations_quad(X, y);
    EXPECT_LT((fit.coefficients - want).cwiseAbs().maxCoeff(), 1e-11);
    EXPECT_EQ(fit.dof, N - P);
    EXPECT_NEAR(fit.sigma2, (y - X * want).squaredNorm() / (N - P), 1e-12);
    // covariance = sigma2 (X^T X)^-1
    const Eigen::MatrixXd inv = (X.transpose() * X).inverse();
    EXPECT_LT((fit.covariance - fit.sigma2 * inv).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Ols, ReportsDependentColumns) {
    Eigen::MatrixXd X(5, 3);
    X << 1, 1, 2, 1, 2, 4, 1, 3, 6, 1, 4, 8, 1, 5, 10;
    Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(5, 0, 1);
    try {
        fit_ols(X, y, {"a", "b", "c"});
        FAIL() << "expected RankDeficient";
    } catch (const RankDeficient& e) {
        const std::string msg = e.what();
        EXPECT_TRUE(msg.find("b") != std::string::npos || msg.find("c") != std::string::npos) << msg;
    }
}

TEST(Ols, RejectsShapeMismatch) {
    EXPECT_THROW(fit_ols(Eigen::MatrixXd::Ones(3, 1), Eigen::VectorXd::Ones(4)), DomainError);
}
