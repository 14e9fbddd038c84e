#include <atomic>
#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "specdown/model.hpp"
#include "specdown/synthetic.hpp"

using namespace specdown;

namespace {

SimConfig small(std::uint64_t seed) {
    SimConfig c;
    c.spec = GridSpec{16, 16, 12.0};
    c.stations = 30;
    c.days = 6;
    c.seed = seed;
    return c;
}

}  // namespace

TEST(MakeBatches, ConsecutiveWindowsAndPartialDrop) {
    const auto b = make_batches({1, 2, 3, 4, 5, 6, 7, 8}, 3);
    ASSERT_EQ(b.size(), 2u);
    EXPECT_EQ(b[1], (std::vector<int>{4, 5, 6}));
    EXPECT_EQ(make_batches({1, 2, 3}, 1).size(), 3u);
    EXPECT_THROW(make_batches({1}, 0), ConfigError);
}

TEST(ParallelFor, RunsEverythingAndRethrows) {
    std::vector<int> hit(50, 0);
    parallel_for(hit.size(), 4, [&](std::size_t i) { hit[i] += 1; });
    for (int h : hit) EXPECT_EQ(h, 1);
    EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                     if (i == 7) throw DomainError("boom");
                 }),
                 DomainError);
}

TEST(FitModel, LeastSquaresVariantMatchesPerPollutantNormalEquations) {
    const auto truth = simulate(small(1));
    const auto bank = CovariateBank::build(truth.fields, make_basis(5, 3), true);
    FitOptions opt;
    opt.variant = ModelVariant::parse("SD+Cross");
    opt.K = 2;
    opt.mcmc.iterations = 100;
    opt.mcmc.burn_in = 0;
    opt.mcmc.thin = 1;
    const std::vector<int> days{1, 2, 3, 4, 5, 6};
    const auto fm = fit_model(truth.data.stations, truth.data.obs, bank, days, opt);
    ASSERT_EQ(fm.ols.size(), 2u);
    EXPECT_TRUE(fm.batches.empty());
    EXPECT_EQ(fm.combined.count(), 100);

    // oracle: raw design of pollutant k's own columns, then map the fitted
    // standardized coefficients back to raw units
    const auto raw = assemble_design(opt.variant, bank, 2, truth.data.stations, truth.data.obs);
    for (int k = 0; k < 2; ++k) {
        std::vector<Eigen::Index> rows, cols;
        for (Eigen::Index i = 0; i < raw.rows(); ++i)
            if (raw.row_pollutant[static_cast<std::size_t>(i)] == k) rows.push_back(i);
        for (std::size_t c = 0; c < raw.columns.size(); ++c)
            if (raw.columns[c].k == k) cols.push_back(static_cast<Eigen::Index>(c));
        Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
        Eigen::VectorXd y(X.rows());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < cols.size(); ++c)
                X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = raw.X(rows[r], cols[c]);
            y[static_cast<Eigen::Index>(r)] = truth.data.obs[static_cast<std::size_t>(rows[r])].value;
        }
        const Eigen::VectorXd want = oracle::normal_equations_quad(X, y);
        Eigen::VectorXd full = Eigen::VectorXd::Zero(fm.meta.P_beta());
        for (std::size_t c = 0; c < cols.size(); ++c)
            full[cols[c]] = fm.ols[static_cast<std::size_t>(k)].fit.coefficients[static_cast<Eigen::Index>(c)];
        const Eigen::VectorXd got = raw_coefficients(full, fm.meta.columns, fm.meta.scales);
        for (std::size_t c = 0; c < cols.size(); ++c)
            EXPECT_NEAR(got[cols[c]], want[static_cast<Eigen::Index>(c)], 1e-8 * (1 + std::abs(want[static_cast<Eigen::Index>(c)])));
    }
}

TEST(FitModel, SpatialFitIsIndependentOfThreadCount) {
    const auto truth = simulate(small(2));
    const auto bank = CovariateBank::build(truth.fields, make_basis(5, 3), true);
    FitOptions opt;
    opt.variant = ModelVariant::parse("SpSD+Cross");
    opt.K = 2;
    opt.mcmc.iterations = 120;
    opt.mcmc.burn_in = 60;
    opt.mcmc.thin = 2;
    opt.seed = 5;
    const std::vector<int> days{1, 2, 3, 4, 5, 6};
    opt.jobs = 1;
    const auto a = fit_model(truth.data.stations, truth.data.obs, bank, days, opt);
    opt.jobs = 2;
    const auto b = fit_model(truth.data.stations, truth.data.obs, bank, days, opt);
    ASSERT_EQ(a.batches.size(), 2u);
    for (std::size_t i = 0; i < a.batches.size(); ++i) EXPECT_TRUE(a.batches[i].draws == b.batches[i].draws);
    EXPECT_TRUE(a.combined.draws == b.combined.draws);
    EXPECT_EQ(a.combined.days, days);
    EXPECT_EQ(a.meta.phi_bounds, SpatialDecay::bounds(bank.spec().diameter_km()));
    const auto c = fit_model(truth.data.stations, truth.data.obs, bank, {1, 2, 3}, opt);
    ASSERT_EQ(c.batches.size(), 1u);
    EXPECT_EQ(c.batches[0].days, (std::vector<int>{1, 2, 3}));
}

TEST(FitModel, RejectsEmptyTraining) {
    const auto truth = simulate(small(3));
    const auto bank = CovariateBank::build(truth.fields, make_basis(5, 3), true);
    FitOptions opt;
    opt.variant = ModelVariant::parse("SpSD");
    opt.K = 2;
    EXPECT_THROW(fit_model(truth.data.stations, truth.data.obs, bank, {100}, opt), DomainError);
    EXPECT_THROW(fit_model(truth.data.stations, truth.data.obs, bank, {1, 2}, opt), DomainError);  // shorter than a batch
}
