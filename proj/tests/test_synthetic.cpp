#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "specdown/synthetic.hpp"

using namespace specdown;

namespace {

SimConfig small() {
    SimConfig c;
    c.spec = GridSpec{16, 16, 12.0};
    c.stations = 40;
    c.days = 6;
    c.seed = 3;
    return c;
}

}  // namespace

TEST(SimulateFields, MomentsFollowTheConfiguration) {
    SimConfig c = small();
    c.spec = GridSpec{64, 64, 12.0};
    c.days = 4;
    c.field_mean = {2.0, -1.0};
    c.field_sd = {0.5, 1.5};
    c.spectrum.kappa = 0.0;  // white: cell values are iid
    const auto f = simulate_fields(c);
    ASSERT_EQ(f.size(), 8u);
    for (int j = 0; j < 2; ++j) {
        double s = 0, ss = 0, n = 0;
        for (const auto& g : f)
            if (g.pollutant_id == j)
                for (double v : g.values) {
                    s += v;
                    ss += v * v;
                    n += 1;
                }
        const double m = s / n, sd = std::sqrt(ss / n - m * m);
        EXPECT_NEAR(m, c.field_mean[static_cast<std::size_t>(j)], 4 * c.field_sd[static_cast<std::size_t>(j)] / std::sqrt(n));
        EXPECT_NEAR(sd / c.field_sd[static_cast<std::size_t>(j)], 1.0, 0.03);
    }
    // mixed fields: correlation 0.6 between j = 0 and j = 1
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t d = 0; d < f.size(); d += 2)
        for (std::size_t s = 0; s < f[d].values.size(); ++s) {
            const double a = f[d].values[s] - 2.0, b = f[d + 1].values[s] + 1.0;
            sab += a * b;
            saa += a * a;
            sbb += b * b;
        }
    EXPECT_NEAR(sab / std::sqrt(saa * sbb), 0.6, 0.03);
}

TEST(SimulateFields, SmoothSpectrumMakesNeighboursCorrelated) {
    SimConfig c = small();
    c.spec = GridSpec{32, 32, 12.0};
    c.days = 3;
    const auto f = simulate_fields(c);
    double sab = 0, saa = 0;
    for (const auto& g : f) {
        double mean = 0;
        for (double v : g.values) mean += v;
        mean /= static_cast<double>(g.values.size());
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x + 1 < 32; ++x) {
                sab += (g.at(x, y) - mean) * (g.at(x + 1, y) - mean);
                saa += (g.at(x, y) - mean) * (g.at(x, y) - mean);
            }
    }
    EXPECT_GT(sab / saa, 0.5);
}

TEST(SimulateStations, StrataCadenceAndIdentity) {
    SimConfig c = small();
    c.cadence = 3;
    const auto t = simulate(c);
    EXPECT_EQ(t.data.stations.size(), 40u);
    int pm = 0, sp = 0, both = 0;
    for (const auto& [id, st] : t.data.stations) {
        EXPECT_TRUE(inside(c.spec, st.x, st.y));
        switch (stratum_of(st)) {
            case Stratum::PmOnly: ++pm; break;
            case Stratum::SpeciesOnly: ++sp; break;
            case Stratum::Both: ++both; break;
        }
    }
    EXPECT_EQ(pm, 28);
    EXPECT_EQ(sp, 4);
    EXPECT_EQ(both, 8);
    ASSERT_EQ(t.data.obs.size(), t.mean.size());
    ASSERT_EQ(t.data.obs.size(), t.w.size());
    std::set<std::pair<std::string, int>> seen;
    for (const auto& o : t.data.obs) {
        EXPECT_EQ((o.day - c.first_day) % 3, t.offsets.at(o.site_id));
        EXPECT_TRUE(t.data.stations.at(o.site_id).measures.count(o.pollutant));
        seen.insert({o.site_id, o.day});
    }
    for (const auto& [id, st] : t.data.stations)
        for (int d = 0; d < c.days; ++d)
            EXPECT_EQ(seen.count({id, c.first_day + d}) > 0, d % 3 == t.offsets.at(id));
}

TEST(SimulateStations, NoiseFreeObservationsEqualMeanPlusW) {
    SimConfig c = small();
    c.tau2 = Eigen::VectorXd::Zero(2);
    const auto t = simulate(c);
    for (std::size_t i = 0; i < t.data.obs.size(); ++i)
        EXPECT_DOUBLE_EQ(t.data.obs[i].value, t.mean[i] + t.w[i]);
    // w is shared across pollutants at one site through L
    double sab = 0, saa = 0, sbb = 0;
    std::map<std::pair<std::string, int>, std::array<double, 2>> by;
    std::map<std::pair<std::string, int>, int> cnt;
    for (std::size_t i = 0; i < t.data.obs.size(); ++i) {
        const auto& o = t.data.obs[i];
        by[{o.site_id, o.day}][static_cast<std::size_t>(o.pollutant)] = t.w[i];
        ++cnt[{o.site_id, o.day}];
    }
    for (const auto& [key, v] : by)
        if (cnt[key] == 2) {
            sab += v[0] * v[1];
            saa += v[0] * v[0];
            sbb += v[1] * v[1];
        }
    EXPECT_GT(sab / std::sqrt(saa * sbb), 0.3);  // true correlation 0.6
}

TEST(SimulateStations, MeanMatchesTheDesign) {
    const SimConfig c = small();
    const auto t = simulate(c);
    SimConfig full = c;
    full.complete();
    const auto bank = CovariateBank::build(t.fields, make_basis(c.B, c.degree), c.center);
    const auto cols = design_columns(c.variant, c.K, c.J, c.B);
    for (std::size_t i = 0; i < t.data.obs.size(); i += 7) {
        const auto& o = t.data.obs[i];
        const auto& st = t.data.stations.at(o.site_id);
        const auto row = design_row(cols, bank, {o.pollutant, o.day, cell_lookup(st, c.spec)});
        EXPECT_NEAR(row.dot(full.beta), t.mean[i], 1e-12);
    }
}

TEST(Simulate, DeterministicPerSeed) {
    const auto a = simulate(small());
    const auto b = simulate(small());
    ASSERT_EQ(a.data.obs.size(), b.data.obs.size());
    for (std::size_t i = 0; i < a.data.obs.size(); ++i) EXPECT_EQ(a.data.obs[i].value, b.data.obs[i].value);
    SimConfig c = small();
    c.seed = 4;
    EXPECT_NE(simulate(c).data.obs.front().value, a.data.obs.front().value);
}

TEST(SimConfig, RejectsBadSettings) {
    SimConfig c = small();
    c.cadence = 2;
    EXPECT_THROW(simulate(c), ConfigError);
    c = small();
    c.phi = 1.0;
    EXPECT_THROW(simulate(c), ConfigError);
    c = small();
    c.strata = {0.5, 0.1, 0.1};
    EXPECT_THROW(simulate(c), ConfigError);
    c = small();
    c.beta = Eigen::VectorXd::Zero(3);
    EXPECT_THROW(simulate(c), ConfigError);
}
