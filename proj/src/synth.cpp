#include "plumeemu/synth.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <random>
#include <vector>

#include "plumeemu/error.hpp"

namespace plumeemu {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Phases {
    double drift_a, drift_b, warp_x, warp_y, speed;
};

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Phases phases(std::uint64_t seed) {
    auto next = [&seed] { return kTwoPi * static_cast<double>(splitmix64(seed) >> 11) * 0x1.0p-53; };
    Phases p{};
    p.drift_a = next();
    p.drift_b = next();
    p.warp_x = next();
    p.warp_y = next();
    p.speed = next();
    return p;
}

std::mt19937_64 indexed_rng(std::uint64_t seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace

void WindField::validate() const {
    if (!(base_speed > 0.0)) throw ConfigError("wind: base_speed must be positive");
    if (!(drift_period > 0.0)) throw ConfigError("wind: drift_period must be positive");
    if (!(warp_wavelength > 0.0)) throw ConfigError("wind: warp_wavelength must be positive");
    if (!(speed_modulation >= 0.0 && speed_modulation < 1.0))
        throw ConfigError("wind: speed_modulation must lie in [0, 1)");
    if (!std::isfinite(base_direction) || !std::isfinite(direction_drift_amplitude) || !std::isfinite(warp_amplitude))
        throw ConfigError("wind: direction parameters must be finite");
}

double WindField::direction(double lon, double lat, double hours) const {
    const auto ph = phases(seed);
    const double w = kTwoPi / drift_period;
    const double drift = 0.6 * std::sin(w * hours + ph.drift_a) +
                         0.4 * std::sin(w * std::numbers::phi * hours + ph.drift_b);
    const double k = kTwoPi / warp_wavelength;
    const double warp = std::sin(k * lon + ph.warp_x) * std::cos(k * lat + ph.warp_y);
    return base_direction + direction_drift_amplitude * drift + warp_amplitude * warp;
}

double WindField::speed(double, double, double hours) const {
    const auto ph = phases(seed);
    return base_speed * (1.0 + speed_modulation * std::sin(kTwoPi * hours / (drift_period * std::numbers::sqrt2) +
                                                           ph.speed));
}

void PlumeShape::validate() const {
    if (!(duration > 0.0) || !(step > 0.0)) throw ConfigError("plume shape: duration and step must be positive");
    if (!(sigma0 > 0.0) || !(spread >= 0.0)) throw ConfigError("plume shape: widths must be positive");
    if (!(decay > 0.0)) throw ConfigError("plume shape: decay must be positive");
    if (!(mass_budget > 0.0)) throw ConfigError("plume shape: mass_budget must be positive");
}

Plume generate_plume(LonLat origin, std::int64_t time, const WindField& wind, const GridSpec& grid,
                     const PlumeShape& shape) {
    wind.validate();
    shape.validate();
    grid.validate();
    if (!grid.contains(origin.lon, origin.lat))
        throw DimensionError("generate_plume: origin (" + std::to_string(origin.lon) + ", " +
                             std::to_string(origin.lat) + ") lies outside the grid");

    const double t0 = static_cast<double>(time) / 3600.0;
    const auto steps = static_cast<std::size_t>(std::ceil(shape.duration / shape.step));

    struct Deposit {
        double lon, lat, sigma, weight;
    };
    std::vector<Deposit> deposits;
    deposits.reserve(steps + 1);
    double lon = origin.lon, lat = origin.lat, weight_sum = 0.0;
    for (std::size_t s = 0; s <= steps; ++s) {
        const double tau = static_cast<double>(s) * shape.step;
        const double w = std::exp(-tau / shape.decay);
        deposits.push_back({lon, lat, shape.sigma0 + shape.spread * std::sqrt(tau), w});
        weight_sum += w;
        // Midpoint integration of the path.
        const double t = t0 + tau;
        const double a1 = wind.direction(lon, lat, t), v1 = wind.speed(lon, lat, t);
        const double mlon = lon + 0.5 * shape.step * v1 * std::cos(a1);
        const double mlat = lat + 0.5 * shape.step * v1 * std::sin(a1);
        const double tm = t + 0.5 * shape.step;
        const double a2 = wind.direction(mlon, mlat, tm), v2 = wind.speed(mlon, mlat, tm);
        lon += shape.step * v2 * std::cos(a2);
        lat += shape.step * v2 * std::sin(a2);
    }

    Plume p = Plume::zeros(grid, origin, time);
    p.departure_angle = std::remainder(wind.direction(origin.lon, origin.lat, t0), kTwoPi);
    if (*p.departure_angle <= -std::numbers::pi) *p.departure_angle += kTwoPi;
    for (const auto& d : deposits) {
        const double mass = shape.mass_budget * d.weight / weight_sum;
        const double inv2s2 = 1.0 / (2.0 * d.sigma * d.sigma);
        const double reach = 4.0 * d.sigma;
        // Separable weights over the unclipped window; cells off the grid simply lose their share.
        const long i0 = static_cast<long>(std::floor((d.lon - reach - grid.lon_min) / grid.d_lon));
        const long i1 = static_cast<long>(std::floor((d.lon + reach - grid.lon_min) / grid.d_lon));
        const long j0 = static_cast<long>(std::floor((d.lat - reach - grid.lat_min) / grid.d_lat));
        const long j1 = static_cast<long>(std::floor((d.lat + reach - grid.lat_min) / grid.d_lat));
        std::vector<double> wx(static_cast<std::size_t>(i1 - i0 + 1)), wy(static_cast<std::size_t>(j1 - j0 + 1));
        double sx = 0.0, sy = 0.0;
        for (long i = i0; i <= i1; ++i) {
            const double dx = grid.lon_min + (static_cast<double>(i) + 0.5) * grid.d_lon - d.lon;
            sx += wx[static_cast<std::size_t>(i - i0)] = std::exp(-dx * dx * inv2s2);
        }
        for (long j = j0; j <= j1; ++j) {
            const double dy = grid.lat_min + (static_cast<double>(j) + 0.5) * grid.d_lat - d.lat;
            sy += wy[static_cast<std::size_t>(j - j0)] = std::exp(-dy * dy * inv2s2);
        }
        if (sx <= 0.0 || sy <= 0.0) continue;
        const double norm = mass / (sx * sy);
        for (long j = std::max(0L, j0); j <= std::min(static_cast<long>(grid.n_lat) - 1, j1); ++j)
            for (long i = std::max(0L, i0); i <= std::min(static_cast<long>(grid.n_lon) - 1, i1); ++i)
                p.values[grid.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j))] +=
                    norm * wx[static_cast<std::size_t>(i - i0)] * wy[static_cast<std::size_t>(j - j0)];
    }
    return p;
}

RegionBounds central_region(const GridSpec& grid) {
    const double w = grid.lon_max() - grid.lon_min, h = grid.lat_max() - grid.lat_min;
    return RegionBounds{grid.lon_min + 0.25 * w, grid.lon_min + 0.75 * w, grid.lat_min + 0.25 * h,
                        grid.lat_min + 0.75 * h};
}

PlumeSet generate_dataset(std::size_t n, const RegionBounds& region, const TimeRange& times, const WindField& wind,
                          const GridSpec& grid, std::uint64_t seed, const PlumeShape& shape) {
    if (n == 0) throw ConfigError("generate_dataset: n must be at least 1");
    if (!(region.lon_max > region.lon_min) || !(region.lat_max > region.lat_min))
        throw ConfigError("generate_dataset: empty region");
    if (times.end < times.start) throw ConfigError("generate_dataset: time range end precedes start");
    PlumeSet set;
    set.grid = grid;
    set.plumes.resize(n);
    const auto count = static_cast<long>(n);
    std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < count; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        try {
            auto rng = indexed_rng(seed, idx);
            std::uniform_real_distribution<double> ulon(region.lon_min, region.lon_max), ulat(region.lat_min,
                                                                                              region.lat_max);
            std::uniform_int_distribution<std::int64_t> ut(times.start, times.end);
            const LonLat origin{ulon(rng), ulat(rng)};
            set.plumes[idx] = generate_plume(origin, ut(rng), wind, grid, shape);
        } catch (...) {
            errors[idx] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return set;
}

}  // namespace plumeemu
