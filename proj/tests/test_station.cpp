#include <cmath>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "specdown/ols.hpp"
#include "specdown/station.hpp"

using namespace specdown;

namespace {

CovariateBank small_bank(int J, int days, bool center = false) {
    const GridSpec spec{8, 6, 12.0};
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<GridField> fields;
    for (int d = 1; d <= days; ++d)
        for (int j = 0; j < J; ++j) {
            std::vector<double> v(spec.size());
            for (auto& x : v) x = n(rng);
            fields.emplace_back(spec, v, j, d);
        }
    return CovariateBank::build(fields, make_basis(4, 2), center);
}

}  // namespace

TEST(CellLookup, HalfOpenCells) {
    const GridSpec spec{4, 3, 12.0};
    EXPECT_EQ(cell_lookup(0.0, 0.0, spec), 0u);
    EXPECT_EQ(cell_lookup(11.999, 0.0, spec), 0u);
    EXPECT_EQ(cell_lookup(12.0, 0.0, spec), 1u);
    EXPECT_EQ(cell_lookup(12.0, 12.0, spec), 5u);
    EXPECT_EQ(cell_lookup(47.9, 35.9, spec), 11u);
    EXPECT_THROW(cell_lookup(48.0, 0.0, spec), DomainError);
    EXPECT_THROW(cell_lookup(-0.1, 0.0, spec), DomainError);
    EXPECT_THROW(cell_lookup(NAN, 0.0, spec), DomainError);
}

TEST(ModelVariant, NamesRoundTrip) {
    const auto all = ModelVariant::all();
    std::set<std::string> names;
    for (const auto& v : all) {
        names.insert(v.name());
        EXPECT_EQ(ModelVariant::parse(v.name()), v);
    }
    EXPECT_EQ(names.size(), 8u);
    EXPECT_EQ(ModelVariant::parse("Spatial SD + Cross").name(), "SpSD+Cross");
    EXPECT_THROW(ModelVariant::parse("XD"), ConfigError);
}

TEST(Stratum, ClassifiesMonitors) {
    EXPECT_EQ(stratum_of(Station{"a", 0, 0, {0}}), Stratum::PmOnly);
    EXPECT_EQ(stratum_of(Station{"a", 0, 0, {1, 2}}), Stratum::SpeciesOnly);
    EXPECT_EQ(stratum_of(Station{"a", 0, 0, {0, 3}}), Stratum::Both);
}

TEST(DesignColumns, CountsPerVariant) {
    const int K = 3, J = 4, B = 5;
    auto count = [&](const char* name) { return design_columns(ModelVariant::parse(name), K, J, B).size(); };
    EXPECT_EQ(count("LD"), static_cast<std::size_t>(K + K));
    EXPECT_EQ(count("LD+Cross"), static_cast<std::size_t>(K + K * J));
    EXPECT_EQ(count("SD"), static_cast<std::size_t>(K + K * B));
    EXPECT_EQ(count("SD+Cross"), static_cast<std::size_t>(K + K * J * B));
    EXPECT_EQ(count("SpSD+Cross"), count("SD+Cross"));
    EXPECT_THROW(design_columns(ModelVariant::parse("SD"), 3, 2, 5), ConfigError);
}

TEST(Design, RowsPickTheirCellAndBlock) {
    const auto bank = small_bank(2, 2);
    const auto v = ModelVariant::parse("SD+Cross");
    std::map<std::string, Station> st{{"A", {"A", 13.0, 25.0, {0, 1}}}};
    std::vector<Observation> obs{{"A", 1, 0, 0.5}, {"A", 2, 1, 0.1}};
    const auto d = assemble_design(v, bank, 2, st, obs);
    const std::size_t cell = cell_lookup(13.0, 25.0, bank.spec());
    ASSERT_EQ(d.rows(), 2);
    for (std::size_t c = 0; c < d.columns.size(); ++c) {
        const auto& col = d.columns[c];
        const double x0 = d.X(0, static_cast<Eigen::Index>(c)), x1 = d.X(1, static_cast<Eigen::Index>(c));
        if (col.k == 0) {
            EXPECT_EQ(x1, 0.0);
            EXPECT_EQ(x0, col.intercept ? 1.0 : bank.spectral(1, col.j, col.b).values[cell]);
        } else {
            EXPECT_EQ(x0, 0.0);
            EXPECT_EQ(x1, col.intercept ? 1.0 : bank.spectral(2, col.j, col.b).values[cell]);
        }
    }
    std::vector<Observation> bad{{"Z", 1, 0, 0.0}};
    EXPECT_THROW(assemble_design(v, bank, 2, st, bad), ConfigError);
    std::vector<Observation> missing_day{{"A", 9, 0, 0.0}};
    EXPECT_THROW(assemble_design(v, bank, 2, st, missing_day), ConfigError);
}

TEST(Standardize, PerPollutantMomentsAndInverse) {
    const auto bank = small_bank(2, 3);
    std::vector<DesignKey> keys;
    for (int d = 1; d <= 3; ++d)
        for (std::size_t cell = 0; cell < 20; cell += 3)
            for (int k = 0; k < 2; ++k) keys.push_back({k, d, cell + static_cast<std::size_t>(k)});
    const auto raw = assemble_design(ModelVariant::parse("SD+Cross"), bank, 2, keys);
    const auto st = standardize(raw);
    for (std::size_t c = 0; c < st.columns.size(); ++c) {
        if (st.columns[c].intercept) continue;
        double sum = 0, ss = 0, n = 0;
        for (Eigen::Index i = 0; i < st.rows(); ++i) {
            const double x = st.X(i, static_cast<Eigen::Index>(c));
            if (st.row_pollutant[static_cast<std::size_t>(i)] != st.columns[c].k) {
                EXPECT_EQ(x, 0.0);
                continue;
            }
            sum += x;
            ss += x * x;
            n += 1;
        }
        EXPECT_NEAR(sum / n, 0.0, 1e-12);
        EXPECT_NEAR((ss - sum * sum / n) / (n - 1), 1.0, 1e-12);
    }
    const auto back = destandardize(st);
    EXPECT_LT((back.X - raw.X).cwiseAbs().maxCoeff(), 1e-12);
    const auto again = standardize_with(raw, st.scales);
    EXPECT_EQ(again.X, st.X);
}

TEST(Standardize, ZeroVarianceColumnIsFlagged) {
    DesignMatrix d;
    d.K = 1;
    d.columns = {{true, 0, -1, -1}, {false, 0, 0, -1}};
    d.scales.assign(2, {});
    d.X.resize(3, 2);
    d.X << 1, 4, 1, 4, 1, 4;
    d.row_pollutant = {0, 0, 0};
    const auto s = standardize(d);
    EXPECT_TRUE(s.scales[1].flagged);
    EXPECT_EQ(s.X, d.X);
}

TEST(RawCoefficients, FitOnStandardizedMatchesRawFit) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    DesignMatrix d;
    d.K = 1;
    d.columns = {{true, 0, -1, -1}, {false, 0, 0, -1}, {false, 0, 1, -1}};
    d.scales.assign(3, {});
    d.X.resize(40, 3);
    d.row_pollutant.assign(40, 0);
    Eigen::VectorXd y(40);
    for (int i = 0; i < 40; ++i) {
        d.X(i, 0) = 1.0;
        d.X(i, 1) = 3.0 + 2.0 * n(rng);
        d.X(i, 2) = -1.0 + 0.5 * n(rng);
        y[i] = 0.3 + 0.7 * d.X(i, 1) - 1.1 * d.X(i, 2) + 0.1 * n(rng);
    }
    const auto s = standardize(d);
    const auto fit_std = fit_ols(s.X, y);
    const auto raw = raw_coefficients(fit_std.coefficients, s.columns, s.scales);
    const auto want = oracle::normal_equations_quad(d.X, y);
    EXPECT_LT((raw - want).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(CovariateBank, RejectsMixedGridsAndMissingStacks) {
    std::vector<GridField> f{GridField::constant({4, 4, 12.0}, 1.0, 0, 1), GridField::constant({4, 5, 12.0}, 1.0, 1, 1)};
    EXPECT_THROW(CovariateBank::build(f, make_basis(4, 3), false), ConfigError);
    const auto bank = small_bank(1, 1);
    EXPECT_TRUE(bank.has(1, 0));
    EXPECT_FALSE(bank.has(2, 0));
    EXPECT_THROW(bank.raw(2, 0), ConfigError);
}
