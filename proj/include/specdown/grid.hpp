#pragma once

// Regular grids, the Fourier frequency lattice and the 2D DFT pair.
//
// Storage is row-major with x fastest: value (ix, iy) lives at iy * nx + ix.
// Frequencies use per-axis DFT index u in [0, m) mapped to 2*pi*u/m and then
// wrapped into [-pi, pi), so the Nyquist frequency of an even axis is -pi.
// The forward transform carries the 1/M factor, making the coefficient at
// omega = 0 the field mean.

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <numbers>
#include <string>
#include <tuple>
#include <vector>

#include <fftw3.h>

#include "specdown/error.hpp"

namespace specdown {

struct GridSpec {
    int nx = 2;
    int ny = 2;
    double dx = 12.0;  ///< km, square cells

    GridSpec() = default;
    GridSpec(int nx_, int ny_, double dx_) : nx(nx_), ny(ny_), dx(dx_) { validate(); }

    void validate() const {
        if (nx < 2 || ny < 2)
            throw DomainError("grid must be at least 2x2, got " + std::to_string(nx) + "x" +
                              std::to_string(ny));
        if (!(dx > 0.0) || !std::isfinite(dx))
            throw DomainError("grid spacing must be positive");
    }

    std::size_t size() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
    std::size_t index(int ix, int iy) const {
        return static_cast<std::size_t>(iy) * static_cast<std::size_t>(nx) +
               static_cast<std::size_t>(ix);
    }
    double width_km() const { return nx * dx; }
    double height_km() const { return ny * dx; }
    /// Largest distance inside the domain (the bounding-box diagonal).
    double diameter_km() const { return std::hypot(width_km(), height_km()); }

    bool operator==(const GridSpec&) const = default;
};

struct GridField {
    GridSpec spec;
    std::vector<double> values;
    int pollutant_id = 0;
    int day = 0;

    GridField() = default;
    GridField(GridSpec s, std::vector<double> v, int pollutant = 0, int d = 0)
        : spec(s), values(std::move(v)), pollutant_id(pollutant), day(d) {
        spec.validate();
        if (values.size() != spec.size())
            throw DomainError("field has " + std::to_string(values.size()) +
                              " values, grid needs " + std::to_string(spec.size()));
        require_finite();
    }

    static GridField constant(GridSpec s, double c, int pollutant = 0, int d = 0) {
        return GridField(s, std::vector<double>(s.size(), c), pollutant, d);
    }

    double at(int ix, int iy) const { return values[spec.index(ix, iy)]; }
    double& at(int ix, int iy) { return values[spec.index(ix, iy)]; }

    void require_finite() const {
        for (std::size_t i = 0; i < values.size(); ++i)
            if (!std::isfinite(values[i]))
                throw DomainError("non-finite grid value at index " + std::to_string(i));
    }
};

struct FrequencyLattice {
    GridSpec spec;
    std::vector<std::array<double, 2>> freqs;  ///< radians per cell, in [-pi, pi)^2
    std::vector<double> magnitudes;

    std::size_t size() const { return freqs.size(); }
};

struct SpectrumField {
    GridSpec spec;
    std::vector<std::complex<double>> coeffs;  ///< aligned with FrequencyLattice
};

/// Frequency of DFT index u on an axis of length m, wrapped into [-pi, pi).
inline double axis_frequency(int u, int m) {
    const double w = 2.0 * std::numbers::pi * static_cast<double>(u) / static_cast<double>(m);
    return (2 * u >= m) ? w - 2.0 * std::numbers::pi : w;
}

inline FrequencyLattice frequency_lattice(const GridSpec& spec) {
    spec.validate();
    FrequencyLattice lat;
    lat.spec = spec;
    lat.freqs.resize(spec.size());
    lat.magnitudes.resize(spec.size());
    for (int v = 0; v < spec.ny; ++v) {
        const double wy = axis_frequency(v, spec.ny);
        for (int u = 0; u < spec.nx; ++u) {
            const double wx = axis_frequency(u, spec.nx);
            const std::size_t l = spec.index(u, v);
            lat.freqs[l] = {wx, wy};
            lat.magnitudes[l] = std::hypot(wx, wy);
        }
    }
    return lat;
}

namespace detail {

class FftwBuffer {
public:
    explicit FftwBuffer(std::size_t n) : n_(n), p_(fftw_alloc_complex(n)) {
        if (!p_) throw std::bad_alloc();
    }
    ~FftwBuffer() { fftw_free(p_); }
    FftwBuffer(const FftwBuffer&) = delete;
    FftwBuffer& operator=(const FftwBuffer&) = delete;

    fftw_complex* get() { return p_; }
    std::complex<double>* data() { return reinterpret_cast<std::complex<double>*>(p_); }
    std::size_t size() const { return n_; }

private:
    std::size_t n_;
    fftw_complex* p_;
};

/// Plans are created once per (nx, ny, sign) and reused through the new-array
/// execute interface. FFTW planning is not thread-safe, execution is.
inline fftw_plan cached_plan(int nx, int ny, int sign) {
    static std::mutex mu;
    static std::map<std::tuple<int, int, int>, fftw_plan> plans;
    std::lock_guard lock(mu);
    auto key = std::make_tuple(nx, ny, sign);
    if (auto it = plans.find(key); it != plans.end()) return it->second;
    const std::size_t n = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
    FftwBuffer in(n), out(n);
    fftw_plan p = fftw_plan_dft_2d(ny, nx, in.get(), out.get(), sign, FFTW_ESTIMATE);
    if (!p) throw std::runtime_error("fftw planning failed");
    plans.emplace(key, p);
    return p;
}

inline void execute(int nx, int ny, int sign, FftwBuffer& in, FftwBuffer& out) {
    fftw_execute_dft(cached_plan(nx, ny, sign), in.get(), out.get());
}

}  // namespace detail

/// coeffs[l] = (1/M) * sum_s f(s) exp(-i w_l . s), s in integer cell coordinates.
inline SpectrumField dft_forward(const GridField& field) {
    field.spec.validate();
    field.require_finite();
    const std::size_t m = field.spec.size();
    if (field.values.size() != m) throw DomainError("field size does not match grid");
    detail::FftwBuffer in(m), out(m);
    for (std::size_t i = 0; i < m; ++i) in.data()[i] = {field.values[i], 0.0};
    detail::execute(field.spec.nx, field.spec.ny, FFTW_FORWARD, in, out);
    SpectrumField s;
    s.spec = field.spec;
    s.coeffs.resize(m);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) s.coeffs[i] = out.data()[i] * inv;
    return s;
}

/// Relative imaginary residue above which dft_inverse refuses to drop the
/// imaginary part.
inline constexpr double kSymmetryTolerance = 1e-6;

/// field(s) = sum_l coeffs[l] exp(i w_l . s). The imaginary part is discarded;
/// if its norm relative to the complex result exceeds kSymmetryTolerance the
/// input was not conjugate-symmetric and SymmetryViolation is thrown.
/// `residue`, when given, receives the relative imaginary residue.
inline GridField dft_inverse(const SpectrumField& spectrum, int pollutant_id = 0, int day = 0,
                             double* residue = nullptr) {
    spectrum.spec.validate();
    const std::size_t m = spectrum.spec.size();
    if (spectrum.coeffs.size() != m)
        throw DomainError("spectrum has " + std::to_string(spectrum.coeffs.size()) +
                          " coefficients, grid needs " + std::to_string(m));
    detail::FftwBuffer in(m), out(m);
    for (std::size_t i = 0; i < m; ++i) in.data()[i] = spectrum.coeffs[i];
    detail::execute(spectrum.spec.nx, spectrum.spec.ny, FFTW_BACKWARD, in, out);

    double im2 = 0.0, all2 = 0.0;
    std::vector<double> values(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto z = out.data()[i];
        im2 += z.imag() * z.imag();
        all2 += std::norm(z);
        values[i] = z.real();
    }
    const double rel = all2 > 0.0 ? std::sqrt(im2 / all2) : 0.0;
    if (residue) *residue = rel;
    if (rel > kSymmetryTolerance)
        throw SymmetryViolation("inverse DFT has relative imaginary residue " +
                                std::to_string(rel) + "; coefficients are not conjugate-symmetric");
    GridField f;
    f.spec = spectrum.spec;
    f.values = std::move(values);
    f.pollutant_id = pollutant_id;
    f.day = day;
    return f;
}

}  // namespace specdown
