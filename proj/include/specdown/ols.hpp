#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specdown/error.hpp"

namespace specdown {

struct OlsResult {
    Eigen::VectorXd coefficients;
    Eigen::VectorXd std_errors;
    Eigen::VectorXd residuals;
    Eigen::MatrixXd covariance;  ///< sigma2 * (X^T X)^-1
    double sigma2 = 0.0;         ///< residual variance, n - p denominator
    Eigen::Index dof = 0;
};

/// Least squares through a column-pivoted QR. Rank deficiency is an error
/// that names the columns the pivoting pushed past the numerical rank.
inline OlsResult fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const std::vector<std::string>& names = {}) {
    if (X.rows() != y.size()) throw DomainError("design rows and response length differ");
    const Eigen::Index n = X.rows(), p = X.cols();
    if (p == 0) throw DomainError("design has no columns");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (n < p || qr.rank() < p) {
        std::string cols;
        const auto perm = qr.colsPermutation().indices();
        for (Eigen::Index i = qr.rank(); i < p; ++i) {
            const auto c = perm[i];
            if (!cols.empty()) cols += ", ";
            cols += c < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(c)]
                                                                : "column " + std::to_string(c);
        }
        throw RankDeficient("design is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                            std::to_string(p) + "); dependent columns: " + cols);
    }
    OlsResult r;
    r.coefficients = qr.solve(y);
    r.residuals = y - X * r.coefficients;
    r.dof = n - p;
    r.sigma2 = r.dof > 0 ? r.residuals.squaredNorm() / static_cast<double>(r.dof)
                         : std::numeric_limits<double>::quiet_NaN();

    const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd Rinv =
        R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::MatrixXd unscaled_perm = Rinv * Rinv.transpose();
    const auto& P = qr.colsPermutation();
    const Eigen::MatrixXd unscaled = P * unscaled_perm * P.transpose();
    r.covariance = r.sigma2 * unscaled;
    r.std_errors = r.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    return r;
}

}  // namespace specdown
