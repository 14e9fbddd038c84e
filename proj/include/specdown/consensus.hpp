#pragma once

// Consensus Monte Carlo: draw i of the combined chain is
//   theta^(i) = (sum_m S_m^-1)^-1 sum_m S_m^-1 theta_m^(i)
// with S_m the sample covariance of batch m, on the transformed scale.

#include <algorithm>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specdown/error.hpp"
#include "specdown/posterior.hpp"

namespace specdown {

namespace detail {

/// Inverse of a sample covariance; singular input gets a ridge of
/// 1e-8 * trace / P (with a warning).
inline Eigen::MatrixXd robust_precision(const Eigen::MatrixXd& S, int batch_index) {
    const auto P = S.rows();
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    bool ok = llt.info() == Eigen::Success;
    if (ok) {
        const auto d = llt.matrixLLT().diagonal();
        ok = d.minCoeff() > 1e-12 * std::max(d.maxCoeff(), 1e-300);
    }
    if (ok) return llt.solve(Eigen::MatrixXd::Identity(P, P));
    double ridge = 1e-8 * S.trace() / static_cast<double>(P);
    if (!(ridge > 0.0)) ridge = 1e-8;
    std::ostringstream msg;
    msg << "batch " << batch_index << ": singular sample covariance, ridge " << ridge << " added";
    warn(msg.str());
    Eigen::MatrixXd R = S;
    R.diagonal().array() += ridge;
    llt.compute(R);
    if (llt.info() != Eigen::Success) throw NotPositiveDefinite("ridge-regularized sample covariance still singular", 0.0);
    return llt.solve(Eigen::MatrixXd::Identity(P, P));
}

}  // namespace detail

/// Precision-weighted combination of batch posteriors. Batches are taken in
/// (first day, batch index) order so that input order never matters; chains
/// of different length are truncated to the shortest.
inline BatchPosterior consensus_combine(std::vector<BatchPosterior> batches) {
    if (batches.empty()) throw DomainError("consensus needs at least one batch");
    if (batches.size() == 1) return batches.front();
    const auto& names = batches.front().param_names;
    for (const auto& b : batches) {
        if (b.param_names != names) throw ConfigError("batches disagree on parameter names");
        if (b.draws.cols() != static_cast<Eigen::Index>(names.size()))
            throw ConfigError("batch draw matrix width does not match its names");
    }
    std::sort(batches.begin(), batches.end(), [](const BatchPosterior& a, const BatchPosterior& b) {
        const int da = a.days.empty() ? 0 : a.days.front();
        const int db = b.days.empty() ? 0 : b.days.front();
        if (da != db) return da < db;
        return a.batch_index < b.batch_index;
    });
    Eigen::Index I = batches.front().count();
    for (const auto& b : batches) I = std::min(I, b.count());
    if (I < 2) throw DomainError("consensus needs at least two draws per batch");
    for (const auto& b : batches)
        if (b.count() != I)
            warn("batch " + std::to_string(b.batch_index) + " truncated from " + std::to_string(b.count()) + " to " +
                 std::to_string(I) + " draws");

    const auto P = static_cast<Eigen::Index>(names.size());
    Eigen::MatrixXd total = Eigen::MatrixXd::Zero(P, P);
    Eigen::MatrixXd weighted = Eigen::MatrixXd::Zero(I, P);
    for (const auto& b : batches) {
        const Eigen::MatrixXd S =
            b.sample_cov.rows() == P ? b.sample_cov : sample_covariance(b.draws.topRows(I));
        const Eigen::MatrixXd Q = detail::robust_precision(S, b.batch_index);
        total += Q;
        weighted.noalias() += b.draws.topRows(I) * Q;  // Q symmetric
    }
    const Eigen::MatrixXd total_inv = detail::robust_precision(total, -1);

    BatchPosterior out;
    out.param_names = names;
    out.model = batches.front().model;
    out.draws = weighted * total_inv;
    out.sample_cov = sample_covariance(out.draws);
    out.batch_index = -1;
    out.seed = batches.front().seed;
    for (const auto& b : batches) out.days.insert(out.days.end(), b.days.begin(), b.days.end());
    std::sort(out.days.begin(), out.days.end());
    for (const auto& b : batches)
        for (const auto& [k, v] : b.acceptance) out.acceptance[k] += v / static_cast<double>(batches.size());
    return out;
}

}  // namespace specdown
