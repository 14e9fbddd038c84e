#pragma once

// Station data, grid-cell lookup, the eight model variants and design-matrix
// assembly with frozen standardization.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specdown/error.hpp"
#include "specdown/grid.hpp"
#include "specdown/spectral.hpp"

namespace specdown {

/// Default pollutant name table; ids are positions in this list.
inline const std::vector<std::string>& default_pollutants() {
    static const std::vector<std::string> names{"PM25", "EC", "OC", "NO3", "SO4", "NH4"};
    return names;
}

struct Station {
    std::string site_id;
    double x = 0.0;  ///< km
    double y = 0.0;  ///< km
    std::set<int> measures;
};

struct Observation {
    std::string site_id;
    int day = 0;
    int pollutant = 0;
    double value = 0.0;  ///< log concentration
};

/// Monitor taxonomy used for stratified fold assignment. Pollutant 0 is
/// total PM2.5; every other id is a constituent species.
enum class Stratum { PmOnly = 0, SpeciesOnly = 1, Both = 2 };

inline Stratum stratum_of(const Station& s) {
    const bool pm = s.measures.count(0) > 0;
    const bool species = std::any_of(s.measures.begin(), s.measures.end(), [](int k) { return k != 0; });
    if (pm && species) return Stratum::Both;
    return pm ? Stratum::PmOnly : Stratum::SpeciesOnly;
}

inline bool inside(const GridSpec& spec, double x, double y) {
    return x >= 0.0 && y >= 0.0 && x < spec.width_km() && y < spec.height_km();
}

/// Row-major index of the cell containing (x, y); cells are half-open
/// [i dx, (i+1) dx).
inline std::size_t cell_lookup(double x, double y, const GridSpec& spec) {
    if (!std::isfinite(x) || !std::isfinite(y) || !inside(spec, x, y))
        throw DomainError("location (" + std::to_string(x) + ", " + std::to_string(y) +
                          ") km is outside the grid");
    const int ix = std::min(static_cast<int>(std::floor(x / spec.dx)), spec.nx - 1);
    const int iy = std::min(static_cast<int>(std::floor(y / spec.dx)), spec.ny - 1);
    return spec.index(ix, iy);
}

inline std::size_t cell_lookup(const Station& station, const GridSpec& spec) {
    try {
        return cell_lookup(station.x, station.y, spec);
    } catch (const DomainError&) {
        throw DomainError("station " + station.site_id + " lies outside the grid");
    }
}

enum class MeanKind { LD, SD };

struct ModelVariant {
    MeanKind mean = MeanKind::SD;
    bool cross = true;
    bool spatial = true;

    std::string name() const {
        std::string n = spatial ? "Sp" : "";
        n += mean == MeanKind::LD ? "LD" : "SD";
        if (cross) n += "+Cross";
        return n;
    }

    static ModelVariant parse(std::string s) {
        std::erase(s, ' ');
        if (s.rfind("Spatial", 0) == 0) s = "Sp" + s.substr(7);
        for (const auto& v : all())
            if (v.name() == s) return v;
        throw ConfigError("unknown model variant '" + s +
                          "' (expected LD, LD+Cross, SD, SD+Cross or the Sp- prefixed forms)");
    }

    /// LD, LD+Cross, SD, SD+Cross, then the spatial versions in the same order.
    static std::array<ModelVariant, 8> all() {
        std::array<ModelVariant, 8> v{};
        int i = 0;
        for (bool spatial : {false, true})
            for (MeanKind m : {MeanKind::LD, MeanKind::SD})
                for (bool cross : {false, true}) v[i++] = {m, cross, spatial};
        return v;
    }

    bool operator==(const ModelVariant&) const = default;
};

/// Per-day regression inputs: raw fields X_j (for LD) and spectral
/// covariates X~_jb (for SD), both on the full grid.
class CovariateBank {
public:
    CovariateBank() = default;

    /// Builds the bank from per-(pollutant, day) fields. Every field must share
    /// one grid. Pollutant ids must be 0..J-1.
    static CovariateBank build(const std::vector<GridField>& fields, const SpectralBasis& basis,
                               bool center) {
        CovariateBank bank;
        bank.basis_ = basis;
        bank.center_ = center;
        if (fields.empty()) throw ConfigError("no grid fields supplied");
        bank.spec_ = fields.front().spec;
        int max_j = -1;
        for (const auto& f : fields) {
            if (!(f.spec == bank.spec_)) throw ConfigError("grid fields have differing grids");
            if (f.pollutant_id < 0) throw ConfigError("negative pollutant id in grid field");
            max_j = std::max(max_j, f.pollutant_id);
        }
        bank.J_ = max_j + 1;
        for (const auto& f : fields) {
            auto& day = bank.days_[f.day];
            if (day.raw.size() < static_cast<std::size_t>(bank.J_)) {
                day.raw.resize(static_cast<std::size_t>(bank.J_));
                day.spectral.resize(static_cast<std::size_t>(bank.J_));
                day.present.resize(static_cast<std::size_t>(bank.J_), false);
            }
            const auto j = static_cast<std::size_t>(f.pollutant_id);
            day.raw[j] = f;
            day.spectral[j] = spectral_covariates(f, basis, center);
            day.present[j] = true;
        }
        return bank;
    }

    const GridSpec& spec() const { return spec_; }
    const SpectralBasis& basis() const { return basis_; }
    bool centered() const { return center_; }
    int J() const { return J_; }
    int B() const { return basis_.count(); }

    bool has(int day, int j) const {
        auto it = days_.find(day);
        return it != days_.end() && j >= 0 && j < J_ && it->second.present[static_cast<std::size_t>(j)];
    }

    std::vector<int> days() const {
        std::vector<int> d;
        for (const auto& [day, _] : days_) d.push_back(day);
        return d;
    }

    const GridField& raw(int day, int j) const {
        require(day, j);
        return days_.at(day).raw[static_cast<std::size_t>(j)];
    }

    const GridField& spectral(int day, int j, int b) const {
        require(day, j);
        if (b < 0 || b >= B()) throw ConfigError("basis index " + std::to_string(b) + " out of range");
        return days_.at(day).spectral[static_cast<std::size_t>(j)][static_cast<std::size_t>(b)].field;
    }

private:
    struct Day {
        std::vector<GridField> raw;
        std::vector<std::vector<CovariateStack>> spectral;
        std::vector<bool> present;
    };

    void require(int day, int j) const {
        if (!has(day, j))
            throw ConfigError("missing covariate stack for pollutant " + std::to_string(j) +
                              " on day " + std::to_string(day));
    }

    GridSpec spec_{};
    SpectralBasis basis_{};
    bool center_ = false;
    int J_ = 0;
    std::map<int, Day> days_;
};

struct ColumnMeta {
    bool intercept = false;
    int k = 0;
    int j = -1;  ///< -1 for intercepts
    int b = -1;  ///< -1 for intercepts and LD covariates

    std::string name() const {
        if (intercept) return "b0[" + std::to_string(k) + "]";
        if (b < 0) return "beta[" + std::to_string(k) + "," + std::to_string(j) + "]";
        return "beta[" + std::to_string(k) + "," + std::to_string(j) + "," + std::to_string(b) + "]";
    }
    bool operator==(const ColumnMeta&) const = default;
};

struct ColumnScale {
    double mean = 0.0;
    double sd = 1.0;
    bool flagged = false;  ///< zero variance, left unscaled
    bool operator==(const ColumnScale&) const = default;
};

/// One design row's identity: pollutant, day and grid cell.
struct DesignKey {
    int k = 0;
    int day = 0;
    std::size_t cell = 0;
};

struct DesignMatrix {
    Eigen::MatrixXd X;
    std::vector<ColumnMeta> columns;
    std::vector<ColumnScale> scales;  ///< identity until standardize() is applied
    std::vector<int> row_pollutant;
    int K = 0;
    bool standardized = false;

    Eigen::Index rows() const { return X.rows(); }
    Eigen::Index cols() const { return X.cols(); }
    std::vector<std::string> names() const {
        std::vector<std::string> n;
        for (const auto& c : columns) n.push_back(c.name());
        return n;
    }
};

/// Column layout for a variant: K intercepts, then for each k its covariate
/// block over j (all J with cross, j = k without) and b (B for SD, none for LD).
inline std::vector<ColumnMeta> design_columns(const ModelVariant& variant, int K, int J, int B) {
    if (!variant.cross && J < K)
        throw ConfigError("variants without cross-species covariates need a grid for every pollutant");
    std::vector<ColumnMeta> cols;
    for (int k = 0; k < K; ++k) cols.push_back({true, k, -1, -1});
    for (int k = 0; k < K; ++k) {
        const int j0 = variant.cross ? 0 : k;
        const int j1 = variant.cross ? J : k + 1;
        for (int j = j0; j < j1; ++j) {
            if (variant.mean == MeanKind::LD)
                cols.push_back({false, k, j, -1});
            else
                for (int b = 0; b < B; ++b) cols.push_back({false, k, j, b});
        }
    }
    return cols;
}

/// Raw (unstandardized) design row for one key.
inline Eigen::RowVectorXd design_row(const std::vector<ColumnMeta>& columns, const CovariateBank& bank,
                                     const DesignKey& key) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(columns.size()));
    for (std::size_t c = 0; c < columns.size(); ++c) {
        const auto& col = columns[c];
        if (col.k != key.k) continue;
        if (col.intercept)
            row[static_cast<Eigen::Index>(c)] = 1.0;
        else if (col.b < 0)
            row[static_cast<Eigen::Index>(c)] = bank.raw(key.day, col.j).values[key.cell];
        else
            row[static_cast<Eigen::Index>(c)] = bank.spectral(key.day, col.j, col.b).values[key.cell];
    }
    return row;
}

inline DesignMatrix assemble_design(const ModelVariant& variant, const CovariateBank& bank, int K,
                                    const std::vector<DesignKey>& keys) {
    DesignMatrix d;
    d.K = K;
    d.columns = design_columns(variant, K, bank.J(), bank.B());
    d.scales.assign(d.columns.size(), ColumnScale{});
    d.X.resize(static_cast<Eigen::Index>(keys.size()), static_cast<Eigen::Index>(d.columns.size()));
    d.row_pollutant.reserve(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (keys[i].k < 0 || keys[i].k >= K)
            throw ConfigError("observation pollutant " + std::to_string(keys[i].k) + " outside 0.." +
                              std::to_string(K - 1));
        d.X.row(static_cast<Eigen::Index>(i)) = design_row(d.columns, bank, keys[i]);
        d.row_pollutant.push_back(keys[i].k);
    }
    return d;
}

/// Observation-level overload: resolves each observation's station cell.
/// `stations` is any map from site id to Station.
template <class StationMap>
DesignMatrix assemble_design(const ModelVariant& variant, const CovariateBank& bank, int K,
                             const StationMap& stations, const std::vector<Observation>& obs) {
    std::vector<DesignKey> keys;
    keys.reserve(obs.size());
    for (const auto& o : obs) {
        auto it = stations.find(o.site_id);
        if (it == stations.end()) throw ConfigError("observation for unknown station " + o.site_id);
        keys.push_back({o.pollutant, o.day, cell_lookup(it->second, bank.spec())});
    }
    return assemble_design(variant, bank, K, keys);
}

/// Applies recorded column scales to raw rows. Only rows of a column's own
/// pollutant are shifted, so off-block zeros stay zero.
inline Eigen::MatrixXd apply_scales(const Eigen::MatrixXd& raw, const std::vector<ColumnMeta>& columns,
                                    const std::vector<ColumnScale>& scales,
                                    const std::vector<int>& row_pollutant) {
    Eigen::MatrixXd out = raw;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (columns[c].intercept || scales[c].flagged) continue;
        const auto ci = static_cast<Eigen::Index>(c);
        for (Eigen::Index i = 0; i < out.rows(); ++i)
            if (row_pollutant[static_cast<std::size_t>(i)] == columns[c].k)
                out(i, ci) = (raw(i, ci) - scales[c].mean) / scales[c].sd;
    }
    return out;
}

/// Scales a single raw row belonging to pollutant k.
inline Eigen::RowVectorXd apply_scales(const Eigen::RowVectorXd& raw, const std::vector<ColumnMeta>& columns,
                                       const std::vector<ColumnScale>& scales, int k) {
    Eigen::RowVectorXd out = raw;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (columns[c].intercept || scales[c].flagged || columns[c].k != k) continue;
        const auto ci = static_cast<Eigen::Index>(c);
        out[ci] = (raw[ci] - scales[c].mean) / scales[c].sd;
    }
    return out;
}

/// Scales each covariate column to mean 0, sd 1 (n-1 denominator) over the
/// rows of the column's own pollutant; rows of other pollutants stay 0 so the
/// block structure survives. Intercepts are untouched. Zero-variance columns
/// are flagged and left as they are.
inline DesignMatrix standardize(const DesignMatrix& raw) {
    DesignMatrix d = raw;
    for (std::size_t c = 0; c < d.columns.size(); ++c) {
        const auto& col = d.columns[c];
        ColumnScale s;
        if (!col.intercept) {
            double sum = 0.0, n = 0.0;
            for (Eigen::Index i = 0; i < d.rows(); ++i)
                if (d.row_pollutant[static_cast<std::size_t>(i)] == col.k) {
                    sum += raw.X(i, static_cast<Eigen::Index>(c));
                    n += 1.0;
                }
            double ss = 0.0;
            const double mean = n > 0 ? sum / n : 0.0;
            for (Eigen::Index i = 0; i < d.rows(); ++i)
                if (d.row_pollutant[static_cast<std::size_t>(i)] == col.k) {
                    const double e = raw.X(i, static_cast<Eigen::Index>(c)) - mean;
                    ss += e * e;
                }
            const double sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
            const double scale = std::max(std::abs(mean), 1.0);
            if (n < 2 || !(sd > 1e-12 * scale)) {
                s.flagged = true;
                warn("design column " + col.name() + " has zero variance; left unscaled");
            } else {
                s.mean = mean;
                s.sd = sd;
            }
        }
        d.scales[c] = s;
    }
    d.X = apply_scales(raw.X, d.columns, d.scales, d.row_pollutant);
    d.standardized = true;
    return d;
}

/// Applies an existing (frozen) standardization record to a raw design, e.g.
/// held-out rows scaled with training statistics.
inline DesignMatrix standardize_with(const DesignMatrix& raw, const std::vector<ColumnScale>& scales) {
    if (scales.size() != raw.columns.size()) throw ConfigError("standardization record does not match design");
    DesignMatrix d = raw;
    d.scales = scales;
    d.X = apply_scales(raw.X, d.columns, scales, d.row_pollutant);
    d.standardized = true;
    return d;
}

/// Inverse of standardize(): reproduces the raw columns from the record.
inline DesignMatrix destandardize(const DesignMatrix& std_design) {
    DesignMatrix d = std_design;
    for (std::size_t c = 0; c < d.columns.size(); ++c) {
        const auto& col = d.columns[c];
        const auto& s = d.scales[c];
        if (col.intercept || s.flagged) continue;
        const auto ci = static_cast<Eigen::Index>(c);
        for (Eigen::Index i = 0; i < d.rows(); ++i)
            if (d.row_pollutant[static_cast<std::size_t>(i)] == col.k)
                d.X(i, ci) = std_design.X(i, ci) * s.sd + s.mean;
    }
    d.scales.assign(d.columns.size(), ColumnScale{});
    d.standardized = false;
    return d;
}

/// Maps coefficients on the standardized scale back to raw covariate units:
/// slope / sd, and each intercept absorbs -sum(slope * mean / sd) of its block.
inline Eigen::VectorXd raw_coefficients(const Eigen::VectorXd& standardized,
                                        const std::vector<ColumnMeta>& columns,
                                        const std::vector<ColumnScale>& scales) {
    Eigen::VectorXd raw = standardized;
    std::vector<Eigen::Index> intercept_of;
    for (std::size_t c = 0; c < columns.size(); ++c)
        if (columns[c].intercept) {
            if (intercept_of.size() <= static_cast<std::size_t>(columns[c].k))
                intercept_of.resize(static_cast<std::size_t>(columns[c].k) + 1, -1);
            intercept_of[static_cast<std::size_t>(columns[c].k)] = static_cast<Eigen::Index>(c);
        }
    for (std::size_t c = 0; c < columns.size(); ++c) {
        const auto& col = columns[c];
        if (col.intercept || scales[c].flagged) continue;
        const auto ci = static_cast<Eigen::Index>(c);
        raw[ci] = standardized[ci] / scales[c].sd;
        const auto k = static_cast<std::size_t>(col.k);
        if (k < intercept_of.size() && intercept_of[k] >= 0)
            raw[intercept_of[k]] -= standardized[ci] * scales[c].mean / scales[c].sd;
    }
    return raw;
}

}  // namespace specdown
