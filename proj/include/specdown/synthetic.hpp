#pragma once

// Synthetic gridded fields and station data drawn from the model's own
// generative story. Everything here is on the log scale.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specdown/error.hpp"
#include "specdown/grid.hpp"
#include "specdown/lmc.hpp"
#include "specdown/model.hpp"
#include "specdown/rng.hpp"
#include "specdown/spectral.hpp"
#include "specdown/station.hpp"

namespace specdown {

/// Matern-like spectral density g(w) = (1 + (|w| / kappa)^2)^-(nu + 1).
/// kappa <= 0 means a white (flat) density.
struct FieldSpectrum {
    double kappa = 0.6;  ///< radians per cell
    double nu = 1.0;

    double operator()(double magnitude) const {
        if (kappa <= 0.0) return 1.0;
        const double r = magnitude / kappa;
        return std::pow(1.0 + r * r, -(nu + 1.0));
    }
};

struct SimConfig {
    GridSpec spec{32, 32, 12.0};
    int K = 2;
    int J = 2;
    int B = 5;
    int degree = 3;
    ModelVariant variant{MeanKind::SD, true, true};
    bool center = true;

    /// Raw-scale coefficients in design_columns(variant, K, J, B) order
    /// (intercepts first). Empty means default_beta().
    Eigen::VectorXd beta;
    Eigen::MatrixXd L;  ///< K x K lower triangular; all zero disables w
    double phi = 3.0 / 181.0;
    Eigen::VectorXd tau2;

    FieldSpectrum spectrum;
    std::vector<double> field_mean;  ///< per j (log scale)
    std::vector<double> field_sd;    ///< per j
    Eigen::MatrixXd field_mix;       ///< J x J, rows normalized internally

    int stations = 60;
    std::array<double, 3> strata{0.7, 0.1, 0.2};  ///< PM-only, species-only, both
    int cadence = 1;                             ///< 1, 3 or 6
    int days = 18;
    int first_day = 1;
    std::uint64_t seed = 1;

    /// Fills empty members with the defaults for the current K, J, B.
    void complete() {
        if (L.size() == 0) {
            L = Eigen::MatrixXd::Zero(K, K);
            for (int k = 0; k < K; ++k) L(k, k) = k == 0 ? 0.5 : 0.4;
            for (int r = 1; r < K; ++r) L(r, 0) = 0.3;
        }
        if (tau2.size() == 0) tau2 = Eigen::VectorXd::Constant(K, 0.05);
        if (field_mean.empty()) field_mean.assign(static_cast<std::size_t>(J), 1.0);
        if (field_sd.empty()) field_sd.assign(static_cast<std::size_t>(J), 0.5);
        if (field_mix.size() == 0) {
            field_mix = Eigen::MatrixXd::Identity(J, J);
            for (int r = 1; r < J; ++r) {
                field_mix(r, 0) = 0.6;
                field_mix(r, r) = 0.8;
            }
        }
        if (beta.size() == 0) beta = default_beta();
    }

    /// Intercepts 1.0, 0.5, ...; own-pollutant coefficients 0.6, cross 0.3,
    /// both tapering over the basis index.
    Eigen::VectorXd default_beta() const {
        const auto cols = design_columns(variant, K, J, variant.mean == MeanKind::SD ? B : 0);
        Eigen::VectorXd b(static_cast<Eigen::Index>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const auto& col = cols[c];
            double v;
            if (col.intercept)
                v = 1.0 - 0.5 * col.k;
            else {
                const double a = col.j == col.k ? 0.6 : 0.3;
                v = col.b < 0 ? a : a * std::pow(0.75, col.b);
            }
            b[static_cast<Eigen::Index>(c)] = v;
        }
        return b;
    }

    void validate() const {
        spec.validate();
        if (K < 1 || J < 1) throw ConfigError("simulation needs K >= 1 and J >= 1");
        if (variant.mean == MeanKind::SD && B < degree + 1) throw ConfigError("basis too small for its degree");
        if (L.rows() != K || L.cols() != K) throw ConfigError("L must be K x K");
        if (tau2.size() != K) throw ConfigError("tau2 must have K entries");
        for (Eigen::Index k = 0; k < K; ++k)
            if (tau2[k] < 0.0) throw ConfigError("tau2 must be nonnegative");
        if (static_cast<int>(field_mean.size()) != J || static_cast<int>(field_sd.size()) != J)
            throw ConfigError("field mean/sd need J entries");
        for (double s : field_sd)
            if (!(s > 0.0)) throw ConfigError("field sd must be positive");
        if (field_mix.rows() != J || field_mix.cols() != J) throw ConfigError("field mix must be J x J");
        if (L.cwiseAbs().maxCoeff() > 0.0) {
            Coreg{L};
            const auto [lo, hi] = SpatialDecay::bounds(spec.diameter_km());
            if (!(phi > lo && phi < hi)) throw ConfigError("true phi lies outside its prior support");
        }
        if (cadence != 1 && cadence != 3 && cadence != 6) throw ConfigError("cadence must be 1, 3 or 6");
        if (days < 1 || stations < 1) throw ConfigError("simulation needs days and stations");
        double s = 0.0;
        for (double f : strata) {
            if (f < 0.0) throw ConfigError("stratum fractions must be nonnegative");
            s += f;
        }
        if (std::abs(s - 1.0) > 1e-9) throw ConfigError("stratum fractions must sum to 1");
    }
};

struct SyntheticTruth {
    SimConfig config;
    std::vector<GridField> fields;  ///< per (day, j), log scale
    Dataset data;
    std::vector<double> mean;  ///< true mean of each observation
    std::vector<double> w;     ///< realized w of each observation
    std::map<std::string, int> offsets;  ///< cadence offset per station
};

/// Stationary fields: white noise mixed across j, shaped in the spectral
/// domain by sqrt(g(w)) normalized to unit variance, then scaled and shifted.
inline std::vector<GridField> simulate_fields(const SimConfig& cfg_in) {
    SimConfig cfg = cfg_in;
    cfg.complete();
    cfg.validate();
    const auto lat = frequency_lattice(cfg.spec);
    const std::size_t M = cfg.spec.size();
    std::vector<double> h(M);
    double total = 0.0;
    for (std::size_t l = 0; l < M; ++l) total += cfg.spectrum(lat.magnitudes[l]);
    for (std::size_t l = 0; l < M; ++l)
        h[l] = std::sqrt(cfg.spectrum(lat.magnitudes[l]) * static_cast<double>(M) / total);
    Eigen::MatrixXd mix = cfg.field_mix;
    for (Eigen::Index r = 0; r < mix.rows(); ++r) mix.row(r) /= mix.row(r).norm();

    Rng rng(derive_seed(cfg.seed, streams::simulate, 0));
    std::vector<GridField> out;
    for (int t = 0; t < cfg.days; ++t) {
        const int day = cfg.first_day + t;
        Eigen::MatrixXd z(cfg.J, static_cast<Eigen::Index>(M));
        for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = std_normal(rng);
        const Eigen::MatrixXd e = mix * z;
        for (int j = 0; j < cfg.J; ++j) {
            std::vector<double> v(M);
            for (std::size_t s = 0; s < M; ++s) v[s] = e(j, static_cast<Eigen::Index>(s));
            auto spec = dft_forward(GridField(cfg.spec, std::move(v), j, day));
            for (std::size_t l = 0; l < M; ++l) spec.coeffs[l] *= h[l];
            auto f = dft_inverse(spec, j, day);
            const auto ju = static_cast<std::size_t>(j);
            for (auto& x : f.values) x = cfg.field_mean[ju] + cfg.field_sd[ju] * x;
            out.push_back(std::move(f));
        }
    }
    return out;
}

/// Stations, strata and cadence masks, then observations
/// y = mean + w + noise with the configured variant's raw-scale design.
inline SyntheticTruth simulate_stations(const SimConfig& cfg_in, const std::vector<GridField>& fields) {
    SimConfig cfg = cfg_in;
    cfg.complete();
    cfg.validate();
    SyntheticTruth truth;
    truth.config = cfg;
    truth.fields = fields;
    const auto bank = CovariateBank::build(fields, make_basis(cfg.B, cfg.degree), cfg.center);
    if (bank.J() != cfg.J) throw ConfigError("field set does not have J pollutants");

    Rng rng(derive_seed(cfg.seed, streams::simulate, 1));
    std::uniform_real_distribution<double> ux(0.0, cfg.spec.width_km()), uy(0.0, cfg.spec.height_km());
    const int n = cfg.stations;
    int n_pm = static_cast<int>(std::lround(cfg.strata[0] * n));
    int n_sp = static_cast<int>(std::lround(cfg.strata[1] * n));
    if (cfg.K == 1) n_pm = n, n_sp = 0;
    n_pm = std::min(n_pm, n);
    n_sp = std::min(n_sp, n - n_pm);
    std::vector<Stratum> kinds;
    for (int i = 0; i < n; ++i)
        kinds.push_back(i < n_pm ? Stratum::PmOnly : i < n_pm + n_sp ? Stratum::SpeciesOnly : Stratum::Both);
    std::shuffle(kinds.begin(), kinds.end(), rng);
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "S%03d", i + 1);
        Station st;
        st.site_id = buf;
        st.x = ux(rng);
        st.y = uy(rng);
        for (int k = 0; k < cfg.K; ++k) {
            const bool pm = k == 0;
            if (kinds[static_cast<std::size_t>(i)] == Stratum::Both ||
                (kinds[static_cast<std::size_t>(i)] == Stratum::PmOnly && pm) ||
                (kinds[static_cast<std::size_t>(i)] == Stratum::SpeciesOnly && !pm))
                st.measures.insert(k);
        }
        std::uniform_int_distribution<int> off(0, cfg.cadence - 1);
        truth.offsets[st.site_id] = off(rng);
        ids.push_back(st.site_id);
        truth.data.stations[st.site_id] = std::move(st);
    }

    const auto columns = design_columns(cfg.variant, cfg.K, cfg.J, cfg.variant.mean == MeanKind::SD ? cfg.B : 0);
    if (static_cast<Eigen::Index>(columns.size()) != cfg.beta.size())
        throw ConfigError("true beta has " + std::to_string(cfg.beta.size()) + " entries, design has " +
                          std::to_string(columns.size()));
    const bool has_w = cfg.L.cwiseAbs().maxCoeff() > 0.0;
    Rng wrng(derive_seed(cfg.seed, streams::simulate, 2));
    for (int t = 0; t < cfg.days; ++t) {
        const int day = cfg.first_day + t;
        std::vector<Observation> today;
        std::vector<SiteObs> so;
        for (const auto& id : ids) {
            const auto& st = truth.data.stations.at(id);
            if (t % cfg.cadence != truth.offsets.at(id)) continue;
            for (int k : st.measures) {
                today.push_back({id, day, k, 0.0});
                so.push_back({day, k, st.x, st.y});
            }
        }
        if (today.empty()) continue;
        Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(today.size()));
        if (has_w) {
            const auto layout = make_layout(so);
            const Eigen::VectorXd ws = sample_w(layout, Coreg(cfg.L), SpatialDecay(cfg.phi), wrng);
            for (const auto& block : layout.days)
                for (std::size_t e = 0; e < block.size(); ++e)
                    w[static_cast<Eigen::Index>(block.entries[e].obs_index)] =
                        ws[static_cast<Eigen::Index>(block.offset + e)];
        }
        for (std::size_t i = 0; i < today.size(); ++i) {
            auto& o = today[i];
            const auto& st = truth.data.stations.at(o.site_id);
            const auto row = design_row(columns, bank, {o.pollutant, day, cell_lookup(st, cfg.spec)});
            const double mu = row.dot(cfg.beta);
            const double tau = std::sqrt(cfg.tau2[o.pollutant]);
            const double eps = tau > 0.0 ? tau * std_normal(wrng) : 0.0;
            o.value = mu + w[static_cast<Eigen::Index>(i)] + eps;
            truth.mean.push_back(mu);
            truth.w.push_back(w[static_cast<Eigen::Index>(i)]);
            truth.data.obs.push_back(o);
        }
    }
    return truth;
}

inline SyntheticTruth simulate(const SimConfig& cfg) { return simulate_stations(cfg, simulate_fields(cfg)); }

}  // namespace specdown
