#pragma once

// Run configuration: one JSON document, every key optional, defaults
// embedded. to_json(from_json(x)) is the effective configuration.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "specdown/error.hpp"
#include "specdown/evaluate.hpp"
#include "specdown/mcmc.hpp"
#include "specdown/station.hpp"
#include "specdown/synthetic.hpp"

namespace specdown {

struct RunConfig {
    std::string grids_dir = "data/grids";
    std::string stations_file = "data/stations.csv";
    std::string output_dir = "out";

    std::string variant = "SpSD+Cross";
    std::vector<std::string> cv_variants{"LD", "LD+Cross", "SD", "SD+Cross",
                                         "SpLD", "SpLD+Cross", "SpSD", "SpSD+Cross"};
    int K = 2;  ///< pollutants modeled (ids 0..K-1)
    int basis_count = 5;
    int basis_degree = 3;
    bool center = true;
    bool log_transform = true;

    Priors priors;
    bool phi_bounds_from_grid = true;
    McmcConfig mcmc;
    int batch_days = 3;
    int folds = 5;
    std::uint64_t seed = 2024;
    int jobs = 1;
    std::optional<std::string> season;  ///< unset: all days present in the data
    std::map<std::string, std::array<int, 2>> season_ranges{
        {"JFM", {1, 90}}, {"AMJ", {91, 180}}, {"JAS", {182, 271}}, {"OND", {274, 363}}};
    std::vector<std::string> pollutants = default_pollutants();

    int coherence_grid = 50;
    BonferroniFamily coherence_family = BonferroniFamily::AllCoefficients;

    SimConfig simulate;

    FitOptions fit_options(const GridSpec& spec) const {
        FitOptions o;
        o.variant = ModelVariant::parse(variant);
        o.K = K;
        Priors p = priors;
        if (phi_bounds_from_grid) std::tie(p.phi_lo, p.phi_hi) = SpatialDecay::bounds(spec.diameter_km());
        o.priors = p;
        o.mcmc = mcmc;
        o.batch_days = batch_days;
        o.jobs = jobs;
        o.seed = seed;
        return o;
    }

    /// Day slots of the configured season, if any.
    std::optional<std::vector<int>> season_day_slots() const {
        if (!season) return std::nullopt;
        const auto r = season_ranges.at(*season);
        std::vector<int> d;
        for (int x = r[0]; x <= r[1]; ++x) d.push_back(x);
        return d;
    }

    void validate() const {
        ModelVariant::parse(variant);
        for (const auto& v : cv_variants) ModelVariant::parse(v);
        if (K < 1 || K > static_cast<int>(pollutants.size()))
            throw ConfigError("K must be between 1 and the number of pollutant names");
        make_basis(basis_count, basis_degree);
        priors.validate();
        mcmc.validate();
        if (batch_days < 1) throw ConfigError("batch_days must be positive");
        if (folds < 2) throw ConfigError("folds must be at least 2");
        if (jobs < 1) throw ConfigError("jobs must be positive");
        if (season) {
            parse_season(*season);
            if (!season_ranges.count(*season)) throw ConfigError("no day range for season " + *season);
        }
        for (const auto& [name, r] : season_ranges)
            if (r[1] < r[0]) throw ConfigError("season " + name + " has an empty day range");
        if (coherence_grid < 1) throw ConfigError("coherence grid must be positive");
    }

    /// Input paths must exist (checked by the subcommands that read them).
    void require_inputs() const {
        if (!std::filesystem::is_directory(grids_dir))
            throw ConfigError("grids directory '" + grids_dir + "' does not exist");
        if (!std::filesystem::is_regular_file(stations_file))
            throw ConfigError("stations file '" + stations_file + "' does not exist");
    }
};

namespace detail {

inline nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        a.push_back(row);
    }
    return a;
}

inline Eigen::MatrixXd json_matrix(const nlohmann::json& a) {
    if (!a.is_array()) throw ConfigError("expected a matrix (array of rows)");
    const auto rows = static_cast<Eigen::Index>(a.size());
    const auto cols = rows ? static_cast<Eigen::Index>(a.at(0).size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (static_cast<Eigen::Index>(a.at(static_cast<std::size_t>(r)).size()) != cols)
            throw ConfigError("ragged matrix");
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = a.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
    }
    return m;
}

inline nlohmann::json vector_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd json_vector(const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <class T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json sim_to_json(const SimConfig& s_in) {
    SimConfig s = s_in;
    s.complete();
    return {{"grid", {{"nx", s.spec.nx}, {"ny", s.spec.ny}, {"dx", s.spec.dx}}},
            {"K", s.K},
            {"J", s.J},
            {"B", s.B},
            {"degree", s.degree},
            {"variant", s.variant.name()},
            {"center", s.center},
            {"beta", detail::vector_json(s.beta)},
            {"L", detail::matrix_json(s.L)},
            {"phi", s.phi},
            {"tau2", detail::vector_json(s.tau2)},
            {"spectrum", {{"kappa", s.spectrum.kappa}, {"nu", s.spectrum.nu}}},
            {"field_mean", s.field_mean},
            {"field_sd", s.field_sd},
            {"field_mix", detail::matrix_json(s.field_mix)},
            {"stations", s.stations},
            {"strata", s.strata},
            {"cadence", s.cadence},
            {"days", s.days},
            {"first_day", s.first_day},
            {"seed", s.seed}};
}

inline SimConfig sim_from_json(const nlohmann::json& j) {
    SimConfig s;
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        detail::get_if(g, "nx", s.spec.nx);
        detail::get_if(g, "ny", s.spec.ny);
        detail::get_if(g, "dx", s.spec.dx);
    }
    detail::get_if(j, "K", s.K);
    detail::get_if(j, "J", s.J);
    detail::get_if(j, "B", s.B);
    detail::get_if(j, "degree", s.degree);
    if (j.contains("variant")) s.variant = ModelVariant::parse(j.at("variant").get<std::string>());
    detail::get_if(j, "center", s.center);
    if (j.contains("beta")) s.beta = detail::json_vector(j.at("beta"));
    if (j.contains("L")) s.L = detail::json_matrix(j.at("L"));
    detail::get_if(j, "phi", s.phi);
    if (j.contains("tau2")) s.tau2 = detail::json_vector(j.at("tau2"));
    if (j.contains("spectrum")) {
        detail::get_if(j.at("spectrum"), "kappa", s.spectrum.kappa);
        detail::get_if(j.at("spectrum"), "nu", s.spectrum.nu);
    }
    detail::get_if(j, "field_mean", s.field_mean);
    detail::get_if(j, "field_sd", s.field_sd);
    if (j.contains("field_mix")) s.field_mix = detail::json_matrix(j.at("field_mix"));
    detail::get_if(j, "stations", s.stations);
    detail::get_if(j, "strata", s.strata);
    detail::get_if(j, "cadence", s.cadence);
    detail::get_if(j, "days", s.days);
    detail::get_if(j, "first_day", s.first_day);
    detail::get_if(j, "seed", s.seed);
    return s;
}

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["paths"] = {{"grids", c.grids_dir}, {"stations", c.stations_file}, {"output", c.output_dir}};
    j["variant"] = c.variant;
    j["cv_variants"] = c.cv_variants;
    j["K"] = c.K;
    j["basis"] = {{"count", c.basis_count}, {"degree", c.basis_degree}};
    j["center"] = c.center;
    j["log_transform"] = c.log_transform;
    j["priors"] = {{"beta_sd", c.priors.beta_sd},
                   {"L_offdiag_sd", c.priors.L_offdiag_sd},
                   {"L_diag_lognormal_sd", c.priors.L_diag_lognormal_sd},
                   {"tau2_shape", c.priors.tau2_shape},
                   {"tau2_scale", c.priors.tau2_scale},
                   {"tau_prior", c.priors.tau_prior == Priors::TauPrior::Variance ? "tau2" : "tau"},
                   {"phi_bounds_from_grid", c.phi_bounds_from_grid},
                   {"phi_bounds", {c.priors.phi_lo, c.priors.phi_hi}}};
    j["mcmc"] = {{"iterations", c.mcmc.iterations}, {"burn_in", c.mcmc.burn_in}, {"thin", c.mcmc.thin},
                 {"phi_step", c.mcmc.phi_step},     {"L_step", c.mcmc.L_step},   {"tau_step", c.mcmc.tau_step},
                 {"adapt", c.mcmc.adapt}};
    j["batch_days"] = c.batch_days;
    j["folds"] = c.folds;
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    j["season"] = c.season ? nlohmann::json(*c.season) : nlohmann::json(nullptr);
    j["season_days"] = c.season_ranges;
    j["pollutants"] = c.pollutants;
    j["coherence"] = {{"n_grid", c.coherence_grid},
                      {"bonferroni", c.coherence_family == BonferroniFamily::AllCoefficients ? "all" : "pair"}};
    j["simulate"] = sim_to_json(c.simulate);
    return j;
}

inline RunConfig from_json(const nlohmann::json& j) {
    using detail::get_if;
    RunConfig c;
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    try {
        if (j.contains("paths")) {
            get_if(j.at("paths"), "grids", c.grids_dir);
            get_if(j.at("paths"), "stations", c.stations_file);
            get_if(j.at("paths"), "output", c.output_dir);
        }
        get_if(j, "variant", c.variant);
        get_if(j, "cv_variants", c.cv_variants);
        get_if(j, "K", c.K);
        if (j.contains("basis")) {
            get_if(j.at("basis"), "count", c.basis_count);
            get_if(j.at("basis"), "degree", c.basis_degree);
        }
        get_if(j, "center", c.center);
        get_if(j, "log_transform", c.log_transform);
        if (j.contains("priors")) {
            const auto& p = j.at("priors");
            get_if(p, "beta_sd", c.priors.beta_sd);
            get_if(p, "L_offdiag_sd", c.priors.L_offdiag_sd);
            get_if(p, "L_diag_lognormal_sd", c.priors.L_diag_lognormal_sd);
            get_if(p, "tau2_shape", c.priors.tau2_shape);
            get_if(p, "tau2_scale", c.priors.tau2_scale);
            if (p.contains("tau_prior")) {
                const auto t = p.at("tau_prior").get<std::string>();
                if (t == "tau2")
                    c.priors.tau_prior = Priors::TauPrior::Variance;
                else if (t == "tau")
                    c.priors.tau_prior = Priors::TauPrior::StdDev;
                else
                    throw ConfigError("priors.tau_prior must be 'tau2' or 'tau'");
            }
            get_if(p, "phi_bounds_from_grid", c.phi_bounds_from_grid);
            if (p.contains("phi_bounds")) {
                c.priors.phi_lo = p.at("phi_bounds").at(0).get<double>();
                c.priors.phi_hi = p.at("phi_bounds").at(1).get<double>();
            }
        }
        if (j.contains("mcmc")) {
            const auto& m = j.at("mcmc");
            get_if(m, "iterations", c.mcmc.iterations);
            get_if(m, "burn_in", c.mcmc.burn_in);
            get_if(m, "thin", c.mcmc.thin);
            get_if(m, "phi_step", c.mcmc.phi_step);
            get_if(m, "L_step", c.mcmc.L_step);
            get_if(m, "tau_step", c.mcmc.tau_step);
            get_if(m, "adapt", c.mcmc.adapt);
        }
        get_if(j, "batch_days", c.batch_days);
        get_if(j, "folds", c.folds);
        get_if(j, "seed", c.seed);
        get_if(j, "jobs", c.jobs);
        if (j.contains("season") && !j.at("season").is_null()) c.season = j.at("season").get<std::string>();
        get_if(j, "season_days", c.season_ranges);
        get_if(j, "pollutants", c.pollutants);
        if (j.contains("coherence")) {
            get_if(j.at("coherence"), "n_grid", c.coherence_grid);
            if (j.at("coherence").contains("bonferroni")) {
                const auto f = j.at("coherence").at("bonferroni").get<std::string>();
                if (f == "all")
                    c.coherence_family = BonferroniFamily::AllCoefficients;
                else if (f == "pair")
                    c.coherence_family = BonferroniFamily::PerPair;
                else
                    throw ConfigError("coherence.bonferroni must be 'all' or 'pair'");
            }
        }
        if (j.contains("simulate")) c.simulate = sim_from_json(j.at("simulate"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("configuration: ") + e.what());
    }
    return c;
}

}  // namespace specdown
