#pragma once

#include <cstddef>
#include <cstdint>

#include "plumeemu/plume.hpp"

namespace plumeemu {

/// Smooth, time-varying wind. Direction is the base direction plus two
/// incommensurate sinusoidal drifts in time and a smooth spatial warp.
struct WindField {
    /// Degrees per hour.
    double base_speed = 0.5;
    /// Radians counter-clockwise from east.
    double base_direction = 0.0;
    double direction_drift_amplitude = 0.6;
    /// Hours.
    double drift_period = 72.0;
    /// Radians of direction perturbation from the spatial warp.
    double warp_amplitude = 0.2;
    /// Degrees.
    double warp_wavelength = 12.0;
    /// Relative speed modulation amplitude in [0, 1).
    double speed_modulation = 0.2;
    /// Seeds the sinusoid phases.
    std::uint64_t seed = 0;

    void validate() const;
    /// Direction at (lon, lat) and time in hours.
    double direction(double lon, double lat, double hours) const;
    double speed(double lon, double lat, double hours) const;
};

struct PlumeShape {
    /// Hours of path integration.
    double duration = 24.0;
    /// Integration step in hours.
    double step = 0.25;
    /// Gaussian width at the origin, degrees.
    double sigma0 = 0.12;
    /// Width growth: sigma = sigma0 + spread * sqrt(travel hours).
    double spread = 0.12;
    /// e-folding travel time of deposit weight, hours.
    double decay = 10.0;
    /// Total deposited mass before clipping at the grid edge.
    double mass_budget = 1.0;

    void validate() const;
};

/// Origin is (lon, lat); release time is in seconds since the epoch.
Plume generate_plume(LonLat origin, std::int64_t time, const WindField& wind, const GridSpec& grid,
                     const PlumeShape& shape = {});

struct RegionBounds {
    double lon_min = 0.0;
    double lon_max = 1.0;
    double lat_min = 0.0;
    double lat_max = 1.0;
};

/// Middle half of the grid extent in each direction.
RegionBounds central_region(const GridSpec& grid);

struct TimeRange {
    std::int64_t start = 0;
    std::int64_t end = 30 * 86400;
};

/// Plume i draws its origin and time from a generator seeded by (seed, i).
PlumeSet generate_dataset(std::size_t n, const RegionBounds& region, const TimeRange& times, const WindField& wind,
                          const GridSpec& grid, std::uint64_t seed, const PlumeShape& shape = {});

}  // namespace plumeemu
