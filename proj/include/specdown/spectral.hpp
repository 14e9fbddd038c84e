#pragma once

// Band-pass filtering on the Fourier lattice, the B-spline coherence basis
// over frequency magnitude, and spectral covariates built by weighting a
// field's Fourier coefficients and transforming back.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "specdown/error.hpp"
#include "specdown/grid.hpp"

namespace specdown {

/// Largest lattice frequency magnitude, sqrt(2) * pi.
inline constexpr double kMaxMagnitude = std::numbers::sqrt2 * std::numbers::pi;
/// Width of the exploratory frequency bins.
inline constexpr double kBinWidth = std::numbers::pi / 5.0;
inline constexpr int kBinCount = 8;

struct FrequencyBand {
    double lo = 0.0;  ///< inclusive, radians per cell
    double hi = kBinWidth;  ///< exclusive

    FrequencyBand() = default;
    FrequencyBand(double lo_, double hi_) : lo(lo_), hi(hi_) {
        if (!(lo >= 0.0) || !(hi > lo) || hi > kBinCount * kBinWidth + 1e-9)
            throw DomainError("invalid frequency band [" + std::to_string(lo) + ", " +
                              std::to_string(hi) + ")");
    }

    bool contains(double magnitude) const { return lo <= magnitude && magnitude < hi; }

    /// Bin i (0-based) of the eight width-pi/5 bins covering [0, 8pi/5).
    static FrequencyBand bin(int i) {
        if (i < 0 || i >= kBinCount) throw DomainError("bin index out of range");
        return {i * kBinWidth, (i + 1) * kBinWidth};
    }
};

/// Clamped, uniform-knot B-spline basis over [0, sqrt(2) pi].
class SpectralBasis {
public:
    SpectralBasis() : SpectralBasis(5, 3) {}

    SpectralBasis(int count, int degree) : count_(count), degree_(degree) {
        if (degree < 0) throw DomainError("spline degree must be nonnegative");
        if (count < degree + 1)
            throw DomainError("basis of degree " + std::to_string(degree) + " needs at least " +
                              std::to_string(degree + 1) + " functions, got " +
                              std::to_string(count));
        const int interior = count - degree - 1;
        knots_.assign(static_cast<std::size_t>(degree + 1), 0.0);
        for (int i = 1; i <= interior; ++i)
            knots_.push_back(kMaxMagnitude * i / static_cast<double>(interior + 1));
        knots_.insert(knots_.end(), static_cast<std::size_t>(degree + 1), kMaxMagnitude);
    }

    int count() const { return count_; }
    int degree() const { return degree_; }
    const std::vector<double>& knots() const { return knots_; }

    /// All basis values at magnitude m; arguments outside [0, sqrt(2) pi] are
    /// clamped to the nearest endpoint.
    std::vector<double> evaluate(double m) const {
        std::vector<double> out(static_cast<std::size_t>(count_), 0.0);
        const int span = find_span(m);
        m = std::clamp(m, 0.0, kMaxMagnitude);
        // de Boor / Cox triangle for the degree+1 nonzero functions.
        std::vector<double> n(static_cast<std::size_t>(degree_ + 1), 0.0);
        std::vector<double> left(n.size()), right(n.size());
        n[0] = 1.0;
        for (int j = 1; j <= degree_; ++j) {
            left[j] = m - knots_[span + 1 - j];
            right[j] = knots_[span + j] - m;
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                const double denom = right[r + 1] + left[j - r];
                const double tmp = denom != 0.0 ? n[r] / denom : 0.0;
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        for (int r = 0; r <= degree_; ++r) out[span - degree_ + r] = n[r];
        return out;
    }

    double evaluate(int b, double m) const { return evaluate(m)[static_cast<std::size_t>(b)]; }

private:
    int find_span(double m) const {
        if (m >= kMaxMagnitude) return count_ - 1;
        if (m <= 0.0) return degree_;
        const auto it = std::upper_bound(knots_.begin() + degree_, knots_.begin() + count_ + 1, m);
        return static_cast<int>(it - knots_.begin()) - 1;
    }

    int count_;
    int degree_;
    std::vector<double> knots_;
};

inline SpectralBasis make_basis(int count, int degree) { return SpectralBasis(count, degree); }

/// One spectral covariate: field j weighted by basis function (or bin) b.
struct CovariateStack {
    int j = 0;
    int b = 0;
    GridField field;
};

namespace detail {

inline SpectrumField forward_maybe_centered(const GridField& field, bool center) {
    auto spectrum = dft_forward(field);
    if (center) spectrum.coeffs[0] = 0.0;  // l = 0 is omega = (0, 0)
    return spectrum;
}

inline GridField weighted_inverse(const SpectrumField& spectrum, const std::vector<double>& weight,
                                  const GridField& like) {
    SpectrumField w{spectrum.spec, spectrum.coeffs};
    for (std::size_t l = 0; l < w.coeffs.size(); ++l) w.coeffs[l] *= weight[l];
    return dft_inverse(w, like.pollutant_id, like.day);
}

}  // namespace detail

/// Keeps the lattice frequencies with lo <= |w| < hi. A band containing no
/// lattice frequency yields the zero field. With `center`, the field mean is
/// removed before filtering.
inline GridField band_filter(const GridField& field, const FrequencyBand& band, bool center = false) {
    const auto lattice = frequency_lattice(field.spec);
    const auto spectrum = detail::forward_maybe_centered(field, center);
    std::vector<double> mask(lattice.size());
    for (std::size_t l = 0; l < lattice.size(); ++l)
        mask[l] = band.contains(lattice.magnitudes[l]) ? 1.0 : 0.0;
    return detail::weighted_inverse(spectrum, mask, field);
}

/// X~_jb(s) = sum_l B_b(|w_l|) exp(i w_l . s) Z_j(w_l) for every basis function:
/// one forward transform, B weighted inverse transforms.
inline std::vector<CovariateStack> spectral_covariates(const GridField& field,
                                                       const SpectralBasis& basis,
                                                       bool center = false) {
    const auto lattice = frequency_lattice(field.spec);
    const auto spectrum = detail::forward_maybe_centered(field, center);
    const std::size_t nb = static_cast<std::size_t>(basis.count());
    std::vector<std::vector<double>> weights(nb, std::vector<double>(lattice.size()));
    for (std::size_t l = 0; l < lattice.size(); ++l) {
        const auto v = basis.evaluate(lattice.magnitudes[l]);
        for (std::size_t b = 0; b < nb; ++b) weights[b][l] = v[b];
    }
    std::vector<CovariateStack> out;
    out.reserve(nb);
    for (std::size_t b = 0; b < nb; ++b)
        out.push_back({field.pollutant_id, static_cast<int>(b),
                       detail::weighted_inverse(spectrum, weights[b], field)});
    return out;
}

/// The eight width-pi/5 band-filtered fields used by the exploratory
/// least-squares regression.
inline std::vector<CovariateStack> bin_covariates(const GridField& field, bool center = false) {
    const auto lattice = frequency_lattice(field.spec);
    const auto spectrum = detail::forward_maybe_centered(field, center);
    std::vector<CovariateStack> out;
    out.reserve(kBinCount);
    for (int i = 0; i < kBinCount; ++i) {
        const auto band = FrequencyBand::bin(i);
        std::vector<double> mask(lattice.size());
        for (std::size_t l = 0; l < lattice.size(); ++l)
            mask[l] = band.contains(lattice.magnitudes[l]) ? 1.0 : 0.0;
        out.push_back({field.pollutant_id, i, detail::weighted_inverse(spectrum, mask, field)});
    }
    return out;
}

/// Spatial period in km of frequency magnitude `magnitude` (radians per cell)
/// on cells of size dx km. Zero magnitude has infinite period.
inline double period_of(double magnitude, double dx) {
    if (magnitude < 0.0 || !std::isfinite(magnitude)) throw DomainError("magnitude must be >= 0");
    if (magnitude == 0.0) return std::numeric_limits<double>::infinity();
    return dx * 2.0 * std::numbers::pi / magnitude;
}

}  // namespace specdown
