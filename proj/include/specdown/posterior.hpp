#pragma once

// Posterior draw containers. A draw is the parameter vector
//   theta = (beta (intercepts then slopes, standardized scale),
//            log tau2[k],
//            L entries in row-major lower-triangular order, diagonal on log scale,
//            logit phi over its prior support)
// Non-spatial fits carry only the first two groups.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "specdown/error.hpp"
#include "specdown/station.hpp"

namespace specdown {

/// What a posterior's coefficients refer to.
struct ModelMeta {
    ModelVariant variant;
    int K = 1;
    int J = 1;
    int B = 1;
    int degree = 0;
    bool center = false;
    std::vector<ColumnMeta> columns;
    std::vector<ColumnScale> scales;
    std::pair<double, double> phi_bounds{0.0, 1.0};

    int P_beta() const { return static_cast<int>(columns.size()); }
    bool operator==(const ModelMeta&) const = default;
};

/// Index arithmetic for theta.
struct ParamLayout {
    int p = 0;  ///< regression coefficients incl. intercepts
    int K = 1;
    bool spatial = true;

    int beta(int c) const { return c; }
    int log_tau2(int k) const { return p + k; }
    int L_start() const { return p + K; }
    int L_count() const { return spatial ? K * (K + 1) / 2 : 0; }
    /// Position of L[r, c] (c <= r).
    int L(int r, int c) const { return L_start() + r * (r + 1) / 2 + c; }
    int logit_phi() const { return L_start() + L_count(); }
    int size() const { return p + K + L_count() + (spatial ? 1 : 0); }

    std::vector<std::string> names(const std::vector<ColumnMeta>& columns) const {
        std::vector<std::string> n;
        for (const auto& c : columns) n.push_back(c.name());
        for (int k = 0; k < K; ++k) n.push_back("log_tau2[" + std::to_string(k) + "]");
        if (spatial) {
            for (int r = 0; r < K; ++r)
                for (int c = 0; c <= r; ++c)
                    n.push_back((r == c ? "log_L[" : "L[") + std::to_string(r) + "," + std::to_string(c) + "]");
            n.push_back("logit_phi");
        }
        return n;
    }
};

inline double logit_bounded(double x, double lo, double hi) { return std::log((x - lo) / (hi - x)); }
inline double inv_logit_bounded(double z, double lo, double hi) {
    const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    return lo + (hi - lo) * s;
}

/// Natural-scale parameters of one draw.
struct ModelParams {
    Eigen::VectorXd beta;
    Eigen::VectorXd tau2;
    Eigen::MatrixXd L;
    double phi = 0.0;
};

/// One observed (day, pollutant, site) position in a stored w draw.
struct WSite {
    int day = 0;
    int k = 0;
    std::string site_id;
    double x = 0.0;
    double y = 0.0;
};

struct WDraws {
    std::vector<WSite> sites;  ///< stacked order
    Eigen::MatrixXd draws;     ///< I x sites.size()

    bool empty() const { return sites.empty(); }
};

struct BatchPosterior {
    std::vector<std::string> param_names;
    Eigen::MatrixXd draws;       ///< I x P, transformed scale
    Eigen::MatrixXd sample_cov;  ///< P x P
    ModelMeta model;
    std::vector<int> days;
    int batch_index = 0;
    std::uint64_t seed = 0;
    std::map<std::string, double> acceptance;
    WDraws w;

    Eigen::Index count() const { return draws.rows(); }
    ParamLayout layout() const { return {model.P_beta(), model.K, model.variant.spatial}; }

    ModelParams params(Eigen::Index i) const {
        const auto lay = layout();
        ModelParams m;
        m.beta = draws.row(i).segment(0, lay.p).transpose();
        m.tau2.resize(lay.K);
        for (int k = 0; k < lay.K; ++k) m.tau2[k] = std::exp(draws(i, lay.log_tau2(k)));
        if (lay.spatial) {
            m.L = Eigen::MatrixXd::Zero(lay.K, lay.K);
            for (int r = 0; r < lay.K; ++r)
                for (int c = 0; c <= r; ++c) {
                    const double v = draws(i, lay.L(r, c));
                    m.L(r, c) = r == c ? std::exp(v) : v;
                }
            m.phi = inv_logit_bounded(draws(i, lay.logit_phi()), model.phi_bounds.first, model.phi_bounds.second);
        }
        return m;
    }

    /// Natural-scale companions of the transformed columns (tau2, L diagonal,
    /// phi), in the same order as natural_names().
    Eigen::MatrixXd natural_draws() const {
        const auto lay = layout();
        const Eigen::Index extra = lay.K + (lay.spatial ? lay.K + 1 : 0);
        Eigen::MatrixXd out(count(), extra);
        for (Eigen::Index i = 0; i < count(); ++i) {
            const auto m = params(i);
            Eigen::Index c = 0;
            for (int k = 0; k < lay.K; ++k) out(i, c++) = m.tau2[k];
            if (lay.spatial) {
                for (int k = 0; k < lay.K; ++k) out(i, c++) = m.L(k, k);
                out(i, c++) = m.phi;
            }
        }
        return out;
    }

    std::vector<std::string> natural_names() const {
        const auto lay = layout();
        std::vector<std::string> n;
        for (int k = 0; k < lay.K; ++k) n.push_back("tau2[" + std::to_string(k) + "]");
        if (lay.spatial) {
            for (int k = 0; k < lay.K; ++k) n.push_back("L[" + std::to_string(k) + "," + std::to_string(k) + "]");
            n.push_back("phi");
        }
        return n;
    }

    /// Raw-covariate-scale regression coefficients of draw i.
    Eigen::VectorXd raw_beta(Eigen::Index i) const {
        return raw_coefficients(draws.row(i).segment(0, model.P_beta()).transpose(), model.columns, model.scales);
    }
};

inline Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& draws) {
    if (draws.rows() < 2) throw DomainError("sample covariance needs at least two draws");
    const Eigen::RowVectorXd mean = draws.colwise().mean();
    const Eigen::MatrixXd c = draws.rowwise() - mean;
    return (c.transpose() * c) / static_cast<double>(draws.rows() - 1);
}

}  // namespace specdown
