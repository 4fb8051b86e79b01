#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace plumeemu {

/// Regular lon/lat grid. (lon_min, lat_min) is the outer corner of cell (0, 0);
/// cell centers sit at lon_min + (i + 0.5) * d_lon. Values are stored row-major
/// with longitude varying fastest: index = j * n_lon + i.
struct GridSpec {
    std::size_t n_lon = 128;
    std::size_t n_lat = 128;
    double lon_min = 0.0;
    double lat_min = 0.0;
    double d_lon = 0.352;
    double d_lat = 0.234;

    std::size_t size() const { return n_lon * n_lat; }
    std::size_t index(std::size_t i, std::size_t j) const { return j * n_lon + i; }
    double center_lon(std::size_t i) const { return lon_min + (static_cast<double>(i) + 0.5) * d_lon; }
    double center_lat(std::size_t j) const { return lat_min + (static_cast<double>(j) + 0.5) * d_lat; }
    double lon_max() const { return lon_min + static_cast<double>(n_lon) * d_lon; }
    double lat_max() const { return lat_min + static_cast<double>(n_lat) * d_lat; }
    bool contains(double lon, double lat) const {
        return lon >= lon_min && lon <= lon_max() && lat >= lat_min && lat <= lat_max();
    }

    /// Throws ConfigError unless spacings are positive and the extent is a valid lon/lat box.
    void validate() const;

    /// Grid of the same shape and spacing whose cell (n_lon/2, n_lat/2) is centered on (lon, lat).
    GridSpec centered_on(double lon, double lat) const;
    /// Grid covering the same extent at a different resolution.
    GridSpec with_resolution(std::size_t n_lon_new, std::size_t n_lat_new) const;

    bool operator==(const GridSpec&) const = default;
};

enum class Units {
    /// Time-summed simulator residence output, s m^3 kg^-1.
    ResidenceTime,
    /// Sensitivity, ns g^-1 (mol CH4 / mol air).
    NsPerGram,
};

std::string to_string(Units u);
Units units_from_string(const std::string& s);

struct LonLat {
    double lon = 0.0;
    double lat = 0.0;
    bool operator==(const LonLat&) const = default;
};

struct Plume {
    GridSpec grid;
    std::vector<double> values;
    Units units = Units::NsPerGram;
    LonLat origin;
    /// Seconds since the Unix epoch, UTC.
    std::int64_t time = 0;
    std::optional<double> departure_angle;

    /// Zero-valued plume on `grid`.
    static Plume zeros(const GridSpec& grid, LonLat origin = {}, std::int64_t time = 0);

    std::size_t size() const { return values.size(); }
    double total() const;
    /// Throws DimensionError when values.size() != grid.size().
    void check() const;
};

struct PlumeSet {
    GridSpec grid;
    std::vector<Plume> plumes;

    std::size_t size() const { return plumes.size(); }
    bool empty() const { return plumes.empty(); }
    void add(Plume p);
    /// Throws DimensionError when any plume's grid differs from the shared grid.
    void check() const;
};

struct FluxField {
    GridSpec grid;
    std::vector<double> values;
};

/// Mole fractions y_i = dot(b_i, flux) for every plume.
std::vector<double> apply_sensitivity(const PlumeSet& plumes, const FluxField& flux);

double mse(std::span<const double> a, std::span<const double> b);
double mse(const Plume& a, const Plume& b);
/// Sum over aligned plume pairs of per-plume mse.
double sum_mse(const PlumeSet& a, const PlumeSet& b);

Plume truncate_negatives(Plume p);

/// PLUMESET1 file format: text header then raw little-endian float64 blocks.
void write_plumeset(std::ostream& os, const PlumeSet& set);
PlumeSet read_plumeset(std::istream& is);
void save_plumeset(const std::string& path, const PlumeSet& set);
PlumeSet load_plumeset(const std::string& path);

}  // namespace plumeemu
