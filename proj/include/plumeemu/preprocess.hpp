#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "plumeemu/plume.hpp"

namespace plumeemu {

struct ConversionConfig {
    /// Grid-cell volume in m^3.
    double cell_volume = 1.0;
    double molar_mass_air = 28.9644;
    double molar_mass_ch4 = 16.0425;
};

/// Multiplier taking time-summed residence output (s m^3 kg^-1) to ns g^-1:
/// (1 / V) * 1e-3 * (M_air / M_ch4) * 1e9.
double conversion_factor(const ConversionConfig& cfg);

/// Requires a ResidenceTime plume; the result is tagged NsPerGram so a second
/// application is rejected.
Plume convert_units(const Plume& raw, const ConversionConfig& cfg);

/// Linear-interpolated quantile (type 7) of all values pooled across plumes.
double pooled_quantile(const PlumeSet& set, double q);

/// Drops plumes with at most `min_cells` values strictly above the pooled
/// `quantile` of all sensitivities.
PlumeSet weak_signal_filter(const PlumeSet& set, double quantile = 0.995, std::size_t min_cells = 10);

struct AngleConfig {
    double annulus_inner = 0.5;
    double annulus_outer = 1.5;
    double window_radius = 2.0;
};

struct AngleEstimate {
    /// Radians in (-pi, pi], measured counter-clockwise from east.
    double angle = 0.0;
    double east = 1.0;
    double north = 0.0;

    static AngleEstimate from_angle(double angle);
    /// Renormalizes (east, north) onto the unit circle; falls back to east for a zero vector.
    static AngleEstimate from_components(double east, double north);
};

/// Wraps any finite angle into (-pi, pi].
double wrap_angle(double angle);

/// Two-step departure-angle estimate: the direction a to the strongest cell in
/// an annulus around the origin, then the sensitivity-weighted circular mean of
/// cell directions inside (a - pi/4, a + pi/4) and within window_radius.
/// nullopt when the annulus has no positive value.
std::optional<AngleEstimate> estimate_departure_angle(const Plume& p, const AngleConfig& cfg = {});

struct IdwConfig {
    double power = 2.0;
    std::size_t k_neighbors = 4;
    /// Emit one warning line per call when target cells fall outside the source extent.
    bool warn_on_miss = true;
};

/// Inverse-distance-weighted resampling onto `target`. Points outside the source
/// extent get 0. Cells whose center coincides with a source center copy it.
Plume idw_resample(const Plume& p, const GridSpec& target, const IdwConfig& cfg = {});

/// Moves the origin to (0, 0) and rotates by -angle, pulling values back from the
/// source with IDW onto a same-shaped grid centered on (0, 0). Output cells whose
/// pre-image lies outside the source extent are 0.
Plume rotate_to_canonical(const Plume& p, double angle, const IdwConfig& cfg = {});

/// Re-anchors a plume so its origin sits at `site`. Exact: only the grid offset moves.
Plume translate_to_site(const Plume& p, LonLat site);

struct PreprocessConfig {
    AngleConfig angle;
    IdwConfig idw;
    /// Side length of the latent-resolution canonical images.
    std::size_t target_res = 64;
    double filter_quantile = 0.995;
    std::size_t filter_min_cells = 10;
    bool apply_filter = true;
};

/// Per-plume source metadata carried alongside canonical images.
struct PlumeMeta {
    LonLat site;
    std::int64_t time = 0;
    AngleEstimate angle;
};

struct CanonicalSet {
    /// Canonical images at target_res; grid centered on (0, 0).
    PlumeSet images;
    std::vector<PlumeMeta> meta;
    /// Index of each image in the input set.
    std::vector<std::size_t> source_index;
};

/// Canonical grid at target resolution for plumes on `source`.
GridSpec canonical_grid(const GridSpec& source, std::size_t target_res);

/// filter -> estimate angle -> rotate/translate to canonical -> reduce resolution.
/// Plumes whose angle cannot be determined are dropped.
CanonicalSet preprocess(const PlumeSet& set, const PreprocessConfig& cfg = {});

/// Stores a canonical set as PLUMESET1: canonical grid, source site/time/angle as metadata.
PlumeSet canonical_to_plumeset(const CanonicalSet& set);
CanonicalSet canonical_from_plumeset(const PlumeSet& set);

}  // namespace plumeemu
