// specdown: command-line front end for the spectral downscaler.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "specdown/pipeline.hpp"

namespace fs = std::filesystem;
using namespace specdown;

namespace {

struct Common {
    std::string config_path;
    std::optional<int> jobs;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> variant;
    std::optional<std::string> season;
    std::string error_file;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_path, "JSON run configuration");
    app->add_option("--jobs", c.jobs, "worker threads for batch fitting");
    app->add_option("--seed", c.seed, "master seed");
    app->add_option("--variant", c.variant, "model variant, e.g. SpSD+Cross");
    app->add_option("--season", c.season, "season (JFM, AMJ, JAS, OND)");
    app->add_option("--error-file", c.error_file, "write the error JSON here as well as to stderr");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg;
    if (!c.config_path.empty()) cfg = from_json(io::read_json(c.config_path));
    if (c.jobs) cfg.jobs = *c.jobs;
    if (c.seed) cfg.seed = *c.seed;
    if (c.variant) cfg.variant = *c.variant;
    if (c.season) cfg.season = *c.season;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multivariate spectral downscaler for gridded model output and station data"};
    app.require_subcommand(1);
    Common common;

    auto* sim = app.add_subcommand("simulate", "write synthetic grids, stations, truth and run config");
    add_common(sim, common);

    std::string in_grid, out_path;
    std::optional<int> bin;
    std::optional<double> band_lo, band_hi;
    auto* filt = app.add_subcommand("filter", "band-pass a grid file");
    add_common(filt, common);
    filt->add_option("--input", in_grid, "grid file")->required();
    filt->add_option("--output", out_path, "output grid file")->required();
    filt->add_option("--bin", bin, "bin index 0..7 of width pi/5");
    filt->add_option("--lo", band_lo, "band lower magnitude (rad/cell)");
    filt->add_option("--hi", band_hi, "band upper magnitude (rad/cell)");

    auto* cov = app.add_subcommand("covariates", "write the spectral covariate stack of a grid file");
    add_common(cov, common);
    cov->add_option("--input", in_grid, "grid file")->required();
    cov->add_option("--output", out_path, "output directory")->required();

    auto* fit = app.add_subcommand("fit", "fit the configured variant, one posterior per batch");
    add_common(fit, common);
    auto* comb = app.add_subcommand("combine", "consensus-combine batch posteriors");
    add_common(comb, common);
    std::optional<int> cells_day;
    auto* pred = app.add_subcommand("predict", "predict at stations (and optionally all cells of one day)");
    add_common(pred, common);
    pred->add_option("--cells-day", cells_day, "also predict every grid cell on this day");
    auto* cv = app.add_subcommand("cv", "stratified cross-validation over the configured variants");
    add_common(cv, common);
    auto* coh = app.add_subcommand("coherence", "coherence curves of the combined posterior");
    add_common(coh, common);
    auto* pc = app.add_subcommand("print-config", "print the effective configuration");
    add_common(pc, common);

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();
    try {
        const RunConfig cfg = resolve(common);
        if (command == "print-config") {
            std::cout << to_json(cfg).dump(2) << '\n';
        } else if (command == "simulate") {
            cmd_simulate(cfg);
        } else if (command == "filter" || command == "covariates") {
            auto field = io::read_grid(in_grid).field;
            if (cfg.log_transform)
                for (auto& v : field.values) {
                    if (!(v > 0.0)) throw DomainError(in_grid + ": nonpositive value cannot be log-transformed");
                    v = std::log(v);
                }
            if (command == "filter") {
                FrequencyBand band;
                if (bin)
                    band = FrequencyBand::bin(*bin);
                else if (band_lo && band_hi)
                    band = FrequencyBand(*band_lo, *band_hi);
                else
                    throw ConfigError("filter needs --bin or both --lo and --hi");
                io::write_grid(out_path, band_filter(field, band, cfg.center));
            } else {
                const auto stacks =
                    spectral_covariates(field, make_basis(cfg.basis_count, cfg.basis_degree), cfg.center);
                for (const auto& s : stacks) {
                    char name[64];
                    std::snprintf(name, sizeof name, "p%d_d%04d_b%02d.grid", s.j, field.day, s.b);
                    io::write_grid(fs::path(out_path) / name, s.field, std::make_pair(s.j, s.b));
                }
            }
        } else if (command == "fit") {
            const auto d = load_data(cfg);
            cmd_fit(cfg, d);
        } else if (command == "combine") {
            cmd_combine(cfg);
        } else if (command == "predict") {
            const auto d = load_data(cfg);
            cmd_predict(cfg, d, load_fitted(cfg), cells_day);
        } else if (command == "cv") {
            const auto d = load_data(cfg);
            cmd_cv(cfg, d);
        } else if (command == "coherence") {
            const auto d = load_data(cfg);
            cmd_coherence(cfg, load_fitted(cfg), d.bank.spec().dx);
        }
    } catch (const std::exception& e) {
        const auto* se = dynamic_cast<const Error*>(&e);
        const auto j = io::error_json(se ? se->code() : "internal_error", e.what(), command);
        std::cerr << j.dump() << '\n';
        if (!common.error_file.empty()) {
            try {
                io::write_json(common.error_file, j);
            } catch (...) {
            }
        }
        return 1;
    }
    return 0;
}
