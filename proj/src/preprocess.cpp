#include "plumeemu/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <numbers>

#include "plumeemu/error.hpp"

namespace plumeemu {

double conversion_factor(const ConversionConfig& cfg) {
    if (!(cfg.cell_volume > 0.0)) throw ConfigError("convert_units: cell volume must be positive");
    if (!(cfg.molar_mass_air > 0.0) || !(cfg.molar_mass_ch4 > 0.0))
        throw ConfigError("convert_units: molar masses must be positive");
    return (1.0 / cfg.cell_volume) * 1e-3 * (cfg.molar_mass_air / cfg.molar_mass_ch4) * 1e9;
}

Plume convert_units(const Plume& raw, const ConversionConfig& cfg) {
    const double factor = conversion_factor(cfg);
    if (raw.units != Units::ResidenceTime)
        throw ConfigError("convert_units: plume is already in " + to_string(raw.units));
    Plume out = raw;
    for (auto& v : out.values) v *= factor;
    out.units = Units::NsPerGram;
    return out;
}

double pooled_quantile(const PlumeSet& set, double q) {
    if (set.empty()) throw ConfigError("pooled_quantile: empty plume set");
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("pooled_quantile: quantile outside [0, 1]");
    std::vector<double> pooled;
    pooled.reserve(set.size() * set.grid.size());
    for (const auto& p : set.plumes) pooled.insert(pooled.end(), p.values.begin(), p.values.end());
    const double pos = q * static_cast<double>(pooled.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    std::nth_element(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(lo), pooled.end());
    const double v_lo = pooled[lo];
    if (frac == 0.0 || lo + 1 >= pooled.size()) return v_lo;
    const double v_hi = *std::min_element(pooled.begin() + static_cast<std::ptrdiff_t>(lo) + 1, pooled.end());
    return v_lo + frac * (v_hi - v_lo);
}

namespace {

std::vector<std::size_t> strong_signal_indices(const PlumeSet& set, double quantile, std::size_t min_cells) {
    if (set.empty()) throw ConfigError("weak_signal_filter: empty plume set");
    const double threshold = pooled_quantile(set, quantile);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& v = set.plumes[i].values;
        const auto above =
            static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [&](double x) { return x > threshold; }));
        if (above > min_cells) keep.push_back(i);
    }
    return keep;
}

}  // namespace

PlumeSet weak_signal_filter(const PlumeSet& set, double quantile, std::size_t min_cells) {
    PlumeSet out;
    out.grid = set.grid;
    for (auto i : strong_signal_indices(set, quantile, min_cells)) out.plumes.push_back(set.plumes[i]);
    return out;
}

double wrap_angle(double angle) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double a = std::fmod(angle, two_pi);
    if (a <= -std::numbers::pi) a += two_pi;
    if (a > std::numbers::pi) a -= two_pi;
    return a;
}

AngleEstimate AngleEstimate::from_angle(double angle) {
    AngleEstimate e;
    e.angle = wrap_angle(angle);
    e.east = std::cos(e.angle);
    e.north = std::sin(e.angle);
    return e;
}

AngleEstimate AngleEstimate::from_components(double east, double north) {
    if (east == 0.0 && north == 0.0) return from_angle(0.0);
    return from_angle(std::atan2(north, east));
}

std::optional<AngleEstimate> estimate_departure_angle(const Plume& p, const AngleConfig& cfg) {
    p.check();
    if (!(cfg.annulus_inner >= 0.0) || !(cfg.annulus_outer > cfg.annulus_inner) || !(cfg.window_radius > 0.0))
        throw ConfigError("estimate_departure_angle: invalid annulus or window radius");
    const auto& g = p.grid;
    const double r_in2 = cfg.annulus_inner * cfg.annulus_inner;
    const double r_out2 = cfg.annulus_outer * cfg.annulus_outer;

    // Step 1: strongest cell inside the annulus.
    double best = 0.0;
    std::optional<double> coarse;
    for (std::size_t j = 0; j < g.n_lat; ++j) {
        const double dy = g.center_lat(j) - p.origin.lat;
        for (std::size_t i = 0; i < g.n_lon; ++i) {
            const double dx = g.center_lon(i) - p.origin.lon;
            const double d2 = dx * dx + dy * dy;
            if (d2 < r_in2 || d2 > r_out2) continue;
            const double v = p.values[g.index(i, j)];
            if (v > best) {
                best = v;
                coarse = std::atan2(dy, dx);
            }
        }
    }
    if (!coarse) return std::nullopt;

    // Step 2: weighted circular mean over the angle window.
    const double win2 = cfg.window_radius * cfg.window_radius;
    const double half_window = std::numbers::pi / 4.0;
    double sum_sin = 0.0, sum_cos = 0.0;
    for (std::size_t j = 0; j < g.n_lat; ++j) {
        const double dy = g.center_lat(j) - p.origin.lat;
        for (std::size_t i = 0; i < g.n_lon; ++i) {
            const double dx = g.center_lon(i) - p.origin.lon;
            const double d2 = dx * dx + dy * dy;
            if (d2 > win2 || d2 == 0.0) continue;
            const double v = p.values[g.index(i, j)];
            if (!(v > 0.0)) continue;
            const double theta = std::atan2(dy, dx);
            if (std::abs(wrap_angle(theta - *coarse)) >= half_window) continue;
            sum_sin += v * std::sin(theta);
            sum_cos += v * std::cos(theta);
        }
    }
    if (sum_sin == 0.0 && sum_cos == 0.0) return AngleEstimate::from_angle(*coarse);
    return AngleEstimate::from_angle(std::atan2(sum_sin, sum_cos));
}

namespace {

// k-nearest inverse-distance sampler over the cell centers of one grid.
class IdwSampler {
public:
    IdwSampler(const Plume& src, const IdwConfig& cfg) : src_(src), cfg_(cfg) {
        if (cfg.k_neighbors == 0 || cfg.k_neighbors > kMaxK)
            throw ConfigError("idw: k_neighbors must be in [1, " + std::to_string(kMaxK) + "]");
        if (!(cfg.power > 0.0)) throw ConfigError("idw: power must be positive");
        src.check();
        const auto& g = src.grid;
        // The k nearest centers lie no farther than the far corner of the
        // ceil(sqrt(k)) x ceil(sqrt(k)) block of centers around the query point.
        const double side = std::ceil(std::sqrt(static_cast<double>(cfg.k_neighbors)));
        const double reach = std::ceil(side / 2.0) * std::hypot(g.d_lon, g.d_lat);
        reach_i_ = static_cast<long>(std::ceil(reach / g.d_lon + 0.5));
        reach_j_ = static_cast<long>(std::ceil(reach / g.d_lat + 0.5));
        hit_tol2_ = std::pow(1e-9 * std::min(g.d_lon, g.d_lat), 2);
    }

    /// nullopt when (lon, lat) lies outside the source extent.
    std::optional<double> operator()(double lon, double lat) const {
        const auto& g = src_.grid;
        if (!g.contains(lon, lat)) return std::nullopt;
        const long n_lon = static_cast<long>(g.n_lon), n_lat = static_cast<long>(g.n_lat);
        const long ci = std::clamp(static_cast<long>(std::floor((lon - g.lon_min) / g.d_lon)), 0L, n_lon - 1);
        const long cj = std::clamp(static_cast<long>(std::floor((lat - g.lat_min) / g.d_lat)), 0L, n_lat - 1);

        const std::size_t k = cfg_.k_neighbors;
        std::array<double, kMaxK> dist2;
        std::array<std::size_t, kMaxK> idx;
        std::size_t found = 0;
        for (long j = std::max(0L, cj - reach_j_); j <= std::min(n_lat - 1, cj + reach_j_); ++j) {
            const double dy = g.center_lat(static_cast<std::size_t>(j)) - lat;
            for (long i = std::max(0L, ci - reach_i_); i <= std::min(n_lon - 1, ci + reach_i_); ++i) {
                const double dx = g.center_lon(static_cast<std::size_t>(i)) - lon;
                const double d2 = dx * dx + dy * dy;
                const std::size_t cell = g.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
                if (d2 <= hit_tol2_) return src_.values[cell];
                // Insertion into the sorted k-best list; ties keep the earlier (row-major) cell.
                if (found == k && d2 >= dist2[k - 1]) continue;
                std::size_t pos = found < k ? found++ : k - 1;
                while (pos > 0 && dist2[pos - 1] > d2) {
                    dist2[pos] = dist2[pos - 1];
                    idx[pos] = idx[pos - 1];
                    --pos;
                }
                dist2[pos] = d2;
                idx[pos] = cell;
            }
        }
        double num = 0.0, den = 0.0;
        const double half_power = 0.5 * cfg_.power;
        for (std::size_t n = 0; n < found; ++n) {
            const double w = half_power == 1.0 ? 1.0 / dist2[n] : std::pow(dist2[n], -half_power);
            num += w * src_.values[idx[n]];
            den += w;
        }
        return den > 0.0 ? num / den : 0.0;
    }

    static constexpr std::size_t kMaxK = 64;

private:
    const Plume& src_;
    IdwConfig cfg_;
    long reach_i_ = 1;
    long reach_j_ = 1;
    double hit_tol2_ = 0.0;
};

void report_misses(std::size_t misses, std::size_t total, const char* what) {
    if (misses == 0) return;
    std::clog << "warning: " << what << ": " << misses << " of " << total
              << " target cells lie outside the source extent and were set to 0\n";
}

}  // namespace

Plume idw_resample(const Plume& p, const GridSpec& target, const IdwConfig& cfg) {
    IdwSampler sample(p, cfg);
    Plume out = p;
    out.grid = target;
    out.values.assign(target.size(), 0.0);
    std::size_t misses = 0;
    for (std::size_t j = 0; j < target.n_lat; ++j)
        for (std::size_t i = 0; i < target.n_lon; ++i) {
            auto v = sample(target.center_lon(i), target.center_lat(j));
            if (v)
                out.values[target.index(i, j)] = *v;
            else
                ++misses;
        }
    if (cfg.warn_on_miss) report_misses(misses, target.size(), "idw_resample");
    return out;
}

Plume rotate_to_canonical(const Plume& p, double angle, const IdwConfig& cfg) {
    if (!std::isfinite(angle)) throw ConfigError("rotate_to_canonical: angle must be finite");
    IdwSampler sample(p, cfg);
    const GridSpec target = p.grid.centered_on(0.0, 0.0);
    const double c = std::cos(angle), s = std::sin(angle);
    Plume out = p;
    out.grid = target;
    out.origin = {0.0, 0.0};
    if (p.departure_angle) out.departure_angle = wrap_angle(*p.departure_angle - angle);
    out.values.assign(target.size(), 0.0);
    for (std::size_t j = 0; j < target.n_lat; ++j) {
        const double y = target.center_lat(j);
        for (std::size_t i = 0; i < target.n_lon; ++i) {
            const double x = target.center_lon(i);
            auto v = sample(p.origin.lon + c * x - s * y, p.origin.lat + s * x + c * y);
            if (v) out.values[target.index(i, j)] = *v;
        }
    }
    return out;
}

Plume translate_to_site(const Plume& p, LonLat site) {
    Plume out = p;
    out.grid.lon_min += site.lon - p.origin.lon;
    out.grid.lat_min += site.lat - p.origin.lat;
    out.origin = site;
    return out;
}

GridSpec canonical_grid(const GridSpec& source, std::size_t target_res) {
    const GridSpec centered = source.centered_on(0.0, 0.0);
    if (target_res == source.n_lon && target_res == source.n_lat) return centered;
    return centered.with_resolution(target_res, target_res);
}

CanonicalSet preprocess(const PlumeSet& set, const PreprocessConfig& cfg) {
    if (set.empty()) throw ConfigError("preprocess: empty plume set");
    std::vector<std::size_t> kept_index;
    if (cfg.apply_filter) {
        kept_index = strong_signal_indices(set, cfg.filter_quantile, cfg.filter_min_cells);
    } else {
        kept_index.resize(set.size());
        for (std::size_t i = 0; i < set.size(); ++i) kept_index[i] = i;
    }

    CanonicalSet out;
    out.images.grid = canonical_grid(set.grid, cfg.target_res);
    IdwConfig quiet = cfg.idw;
    quiet.warn_on_miss = false;
    std::size_t undetermined = 0;
    for (std::size_t n = 0; n < kept_index.size(); ++n) {
        const Plume& p = set.plumes[kept_index[n]];
        auto est = estimate_departure_angle(p, cfg.angle);
        if (!est) {
            ++undetermined;
            continue;
        }
        Plume canon = rotate_to_canonical(p, est->angle, quiet);
        canon.departure_angle = 0.0;
        if (!(canon.grid == out.images.grid)) canon = idw_resample(canon, out.images.grid, quiet);
        out.images.plumes.push_back(std::move(canon));
        out.meta.push_back(PlumeMeta{p.origin, p.time, *est});
        out.source_index.push_back(kept_index[n]);
    }
    if (undetermined)
        std::clog << "warning: preprocess: dropped " << undetermined
                  << " plume(s) with no positive value in the angle annulus\n";
    return out;
}

PlumeSet canonical_to_plumeset(const CanonicalSet& set) {
    PlumeSet out;
    out.grid = set.images.grid;
    for (std::size_t i = 0; i < set.images.size(); ++i) {
        Plume p = set.images.plumes[i];
        p.origin = set.meta[i].site;
        p.time = set.meta[i].time;
        p.departure_angle = set.meta[i].angle.angle;
        out.plumes.push_back(std::move(p));
    }
    return out;
}

CanonicalSet canonical_from_plumeset(const PlumeSet& set) {
    CanonicalSet out;
    out.images.grid = set.grid;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const Plume& src = set.plumes[i];
        Plume p = src;
        p.origin = {0.0, 0.0};
        p.departure_angle = 0.0;
        out.images.plumes.push_back(std::move(p));
        out.meta.push_back(PlumeMeta{src.origin, src.time, AngleEstimate::from_angle(src.departure_angle.value_or(0.0))});
        out.source_index.push_back(i);
    }
    return out;
}

}  // namespace plumeemu
