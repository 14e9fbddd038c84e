#pragma once

// Linear model of coregionalization for the multivariate spatial residual
// w(s) = L v(s), v_k independent exponential-correlation processes with a
// common decay. Observations are stacked per day (days are independent),
// within a day by pollutant, so the stacked covariance is block diagonal.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specdown/error.hpp"
#include "specdown/rng.hpp"

namespace specdown {

struct Coreg {
    Eigen::MatrixXd L;  ///< K x K lower triangular, positive diagonal

    Coreg() = default;
    explicit Coreg(Eigen::MatrixXd l) : L(std::move(l)) { validate(); }

    int K() const { return static_cast<int>(L.rows()); }
    Eigen::MatrixXd cross() const { return L * L.transpose(); }

    void validate() const {
        if (L.rows() != L.cols() || L.rows() == 0) throw DomainError("coregionalization matrix must be square");
        for (Eigen::Index i = 0; i < L.rows(); ++i) {
            if (!(L(i, i) > 0.0)) throw DomainError("coregionalization diagonal must be positive");
            for (Eigen::Index j = i + 1; j < L.cols(); ++j)
                if (L(i, j) != 0.0) throw DomainError("coregionalization matrix must be lower triangular");
        }
    }
};

struct SpatialDecay {
    double phi = 0.01;  ///< 1/km

    SpatialDecay() = default;
    explicit SpatialDecay(double p) : phi(p) {
        if (!(phi > 0.0) || !std::isfinite(phi)) throw DomainError("spatial decay must be positive");
    }

    /// Prior support (3/(0.75 d), 3/(0.1 d)) for a domain of diameter d: the
    /// effective range 3/phi lies between 0.1 d and 0.75 d.
    static std::pair<double, double> bounds(double diameter_km) {
        return {3.0 / (0.75 * diameter_km), 3.0 / (0.1 * diameter_km)};
    }
    bool within(double diameter_km) const {
        const auto [lo, hi] = bounds(diameter_km);
        return phi > lo && phi < hi;
    }
    double effective_range() const { return 3.0 / phi; }
};

inline double exp_corr(double distance, const SpatialDecay& decay) {
    if (distance < 0.0 || !std::isfinite(distance)) throw DomainError("distance must be nonnegative");
    return std::exp(-decay.phi * distance);
}

struct LayoutEntry {
    int k = 0;
    double x = 0.0;
    double y = 0.0;
    std::size_t obs_index = 0;  ///< position of the observation in the caller's list
};

/// Observed (pollutant, site) pairs of one day, ordered by pollutant.
struct DayBlock {
    int day = 0;
    std::size_t offset = 0;  ///< start in the stacked vector
    std::vector<LayoutEntry> entries;

    std::size_t size() const { return entries.size(); }
};

struct StackedLayout {
    std::vector<DayBlock> days;

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& d : days) n += d.size();
        return n;
    }
};

/// Observation triple used to build layouts.
struct SiteObs {
    int day = 0;
    int k = 0;
    double x = 0.0;
    double y = 0.0;
};

/// Groups observations by day (ascending), then by pollutant, preserving
/// input order within a (day, pollutant) group. The result is a bijection
/// onto the input through LayoutEntry::obs_index.
inline StackedLayout make_layout(const std::vector<SiteObs>& obs) {
    std::vector<std::size_t> order(obs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (obs[a].day != obs[b].day) return obs[a].day < obs[b].day;
        return obs[a].k < obs[b].k;
    });
    StackedLayout layout;
    std::size_t offset = 0;
    for (std::size_t idx : order) {
        const auto& o = obs[idx];
        if (layout.days.empty() || layout.days.back().day != o.day) {
            layout.days.push_back({o.day, offset, {}});
        }
        layout.days.back().entries.push_back({o.k, o.x, o.y, idx});
        ++offset;
    }
    return layout;
}

inline Eigen::MatrixXd distance_matrix(const DayBlock& block) {
    const auto n = static_cast<Eigen::Index>(block.size());
    Eigen::MatrixXd d(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d(i, i) = 0.0;
        for (Eigen::Index j = 0; j < i; ++j) {
            const auto& a = block.entries[static_cast<std::size_t>(i)];
            const auto& b = block.entries[static_cast<std::size_t>(j)];
            d(i, j) = d(j, i) = std::hypot(a.x - b.x, a.y - b.y);
        }
    }
    return d;
}

/// C_ij = (L L^T)[k_i, k_j] * exp(-phi |s_i - s_j|) for one day.
inline Eigen::MatrixXd day_covariance(const DayBlock& block, const Coreg& coreg, const SpatialDecay& decay) {
    const Eigen::MatrixXd a = coreg.cross();
    const Eigen::MatrixXd d = distance_matrix(block);
    const auto n = d.rows();
    Eigen::MatrixXd c(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) {
            const int ki = block.entries[static_cast<std::size_t>(i)].k;
            const int kj = block.entries[static_cast<std::size_t>(j)].k;
            if (ki >= coreg.K() || kj >= coreg.K()) throw DomainError("layout pollutant exceeds coregionalization size");
            c(i, j) = c(j, i) = a(ki, kj) * std::exp(-decay.phi * d(i, j));
        }
    return c;
}

/// Full stacked covariance; zero between different days.
inline Eigen::MatrixXd lmc_covariance(const StackedLayout& layout, const Coreg& coreg, const SpatialDecay& decay) {
    if (layout.size() == 0) throw DomainError("empty layout");
    const auto n = static_cast<Eigen::Index>(layout.size());
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
    for (const auto& block : layout.days) {
        const auto off = static_cast<Eigen::Index>(block.offset);
        const auto m = static_cast<Eigen::Index>(block.size());
        c.block(off, off, m, m) = day_covariance(block, coreg, decay);
    }
    return c;
}

/// Cholesky factorization with the single-jitter rule: on failure add
/// 1e-8 * trace / n to the diagonal once; if that also fails report the
/// smallest eigenvalue.
inline Eigen::LLT<Eigen::MatrixXd> factorize(Eigen::MatrixXd c, bool* jittered = nullptr) {
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (jittered) *jittered = false;
    if (llt.info() == Eigen::Success) return llt;
    const double n = static_cast<double>(c.rows());
    c.diagonal().array() += 1e-8 * c.trace() / n;
    llt.compute(c);
    if (jittered) *jittered = true;
    if (llt.info() == Eigen::Success) return llt;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c, Eigen::EigenvaluesOnly);
    const double lam = es.eigenvalues().minCoeff();
    throw NotPositiveDefinite("covariance is not positive definite after jitter (smallest eigenvalue " +
                                  std::to_string(lam) + ")",
                              lam);
}

/// Exact draw of the stacked w, independently per day.
inline Eigen::VectorXd sample_w(const StackedLayout& layout, const Coreg& coreg, const SpatialDecay& decay,
                                Rng& rng) {
    Eigen::VectorXd w(static_cast<Eigen::Index>(layout.size()));
    for (const auto& block : layout.days) {
        const auto llt = factorize(day_covariance(block, coreg, decay));
        Eigen::VectorXd z(static_cast<Eigen::Index>(block.size()));
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = std_normal(rng);
        w.segment(static_cast<Eigen::Index>(block.offset), z.size()) = llt.matrixL() * z;
    }
    return w;
}

/// log N(w; 0, C) given a factorization of C.
inline double gaussian_logpdf(const Eigen::VectorXd& w, const Eigen::LLT<Eigen::MatrixXd>& llt) {
    const Eigen::VectorXd z = llt.matrixL().solve(w);
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return -0.5 * (static_cast<double>(w.size()) * std::log(2.0 * M_PI) + logdet + z.squaredNorm());
}

/// log N(r; 0, C + diag(nugget)) for a stacked residual, evaluated day by
/// day. `nugget[i]` is the noise variance of stacked entry i.
inline double marginal_loglik(const Eigen::VectorXd& r, const StackedLayout& layout, const Coreg& coreg,
                              const SpatialDecay& decay, const Eigen::VectorXd& nugget) {
    if (r.size() != static_cast<Eigen::Index>(layout.size()) || nugget.size() != r.size())
        throw DomainError("residual length does not match the layout");
    double ll = 0.0;
    for (const auto& block : layout.days) {
        const auto off = static_cast<Eigen::Index>(block.offset);
        const auto m = static_cast<Eigen::Index>(block.size());
        Eigen::MatrixXd c = day_covariance(block, coreg, decay);
        c.diagonal() += nugget.segment(off, m);
        ll += gaussian_logpdf(r.segment(off, m), factorize(std::move(c)));
    }
    return ll;
}

}  // namespace specdown
