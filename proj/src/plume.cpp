#include "plumeemu/plume.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "plumeemu/error.hpp"

namespace plumeemu {

namespace detail {

double parse_double(const std::string& s, const char* what) {
    if (s == "nan") return std::nan("");
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ConfigError(std::string(what) + ": cannot parse number '" + s + "'");
    return v;
}

long long parse_int(const std::string& s, const char* what) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ConfigError(std::string(what) + ": cannot parse integer '" + s + "'");
    return v;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string format_grid(const GridSpec& g) {
    return "grid," + std::to_string(g.n_lon) + ',' + std::to_string(g.n_lat) + ',' + format_double(g.lon_min) +
           ',' + format_double(g.lat_min) + ',' + format_double(g.d_lon) + ',' + format_double(g.d_lat);
}

GridSpec parse_grid(const std::string& line, const char* what) {
    auto f = split(line, ',');
    if (f.size() != 7 || f[0] != "grid") throw ConfigError(std::string(what) + ": malformed grid line");
    GridSpec g;
    const auto n_lon = parse_int(f[1], what), n_lat = parse_int(f[2], what);
    if (n_lon <= 0 || n_lat <= 0) throw ConfigError(std::string(what) + ": invalid grid size");
    g.n_lon = static_cast<std::size_t>(n_lon);
    g.n_lat = static_cast<std::size_t>(n_lat);
    g.lon_min = parse_double(f[3], what);
    g.lat_min = parse_double(f[4], what);
    g.d_lon = parse_double(f[5], what);
    g.d_lat = parse_double(f[6], what);
    if (!(g.d_lon > 0) || !(g.d_lat > 0)) throw ConfigError(std::string(what) + ": invalid grid spacing");
    return g;
}

}  // namespace detail

void GridSpec::validate() const {
    if (n_lon == 0 || n_lat == 0) throw ConfigError("grid: cell counts must be positive");
    if (!(d_lon > 0.0) || !(d_lat > 0.0)) throw ConfigError("grid: spacings must be positive");
    if (lat_min < -90.0 || lat_max() > 90.0) throw ConfigError("grid: latitude extent outside [-90, 90]");
    if (lon_min < -180.0 || lon_max() > 180.0) throw ConfigError("grid: longitude extent outside [-180, 180]");
}

GridSpec GridSpec::centered_on(double lon, double lat) const {
    GridSpec g = *this;
    g.lon_min = lon - (static_cast<double>(n_lon / 2) + 0.5) * d_lon;
    g.lat_min = lat - (static_cast<double>(n_lat / 2) + 0.5) * d_lat;
    return g;
}

GridSpec GridSpec::with_resolution(std::size_t n_lon_new, std::size_t n_lat_new) const {
    if (n_lon_new == 0 || n_lat_new == 0) throw ConfigError("grid: target resolution must be positive");
    GridSpec g = *this;
    g.n_lon = n_lon_new;
    g.n_lat = n_lat_new;
    g.d_lon = d_lon * static_cast<double>(n_lon) / static_cast<double>(n_lon_new);
    g.d_lat = d_lat * static_cast<double>(n_lat) / static_cast<double>(n_lat_new);
    return g;
}

std::string to_string(Units u) {
    switch (u) {
        case Units::ResidenceTime: return "s_m3_per_kg";
        case Units::NsPerGram: return "ns_per_g";
    }
    return "unknown";
}

Units units_from_string(const std::string& s) {
    if (s == "s_m3_per_kg") return Units::ResidenceTime;
    if (s == "ns_per_g") return Units::NsPerGram;
    throw ConfigError("unknown units tag '" + s + "'");
}

Plume Plume::zeros(const GridSpec& grid, LonLat origin, std::int64_t time) {
    Plume p;
    p.grid = grid;
    p.values.assign(grid.size(), 0.0);
    p.origin = origin;
    p.time = time;
    return p;
}

double Plume::total() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
}

void Plume::check() const {
    if (values.size() != grid.size())
        throw DimensionError("plume holds " + std::to_string(values.size()) + " values for a grid of " +
                             std::to_string(grid.size()) + " cells");
}

void PlumeSet::add(Plume p) {
    if (plumes.empty() && grid.size() == 0) grid = p.grid;
    if (!(p.grid == grid)) throw DimensionError("plume set: plume grid differs from the set's grid");
    p.check();
    plumes.push_back(std::move(p));
}

void PlumeSet::check() const {
    for (const auto& p : plumes) {
        if (!(p.grid == grid)) throw DimensionError("plume set: plume grid differs from the set's grid");
        p.check();
    }
}

std::vector<double> apply_sensitivity(const PlumeSet& plumes, const FluxField& flux) {
    if (!(plumes.grid == flux.grid)) throw DimensionError("apply_sensitivity: plume and flux grids differ");
    if (flux.values.size() != flux.grid.size()) throw DimensionError("apply_sensitivity: flux length mismatch");
    plumes.check();
    std::vector<double> out;
    out.reserve(plumes.size());
    for (const auto& p : plumes.plumes) {
        double acc = 0.0;
        for (std::size_t k = 0; k < p.values.size(); ++k) acc += p.values[k] * flux.values[k];
        out.push_back(acc);
    }
    return out;
}

double mse(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty())
        throw DimensionError("mse: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

double mse(const Plume& a, const Plume& b) {
    if (!(a.grid == b.grid)) throw DimensionError("mse: plume grids differ");
    return mse(a.values, b.values);
}

double sum_mse(const PlumeSet& a, const PlumeSet& b) {
    if (a.size() != b.size())
        throw DimensionError("sum_mse: set sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += mse(a.plumes[i], b.plumes[i]);
    return total;
}

Plume truncate_negatives(Plume p) {
    for (auto& v : p.values)
        if (v < 0.0) v = 0.0;
    return p;
}

namespace {
constexpr const char* kPlumeMagic = "PLUMESET1";
}

void write_plumeset(std::ostream& os, const PlumeSet& set) {
    set.check();
    using detail::format_double;
    const auto& g = set.grid;
    os << kPlumeMagic << '\n';
    os << detail::format_grid(g) << '\n';
    os << "count," << set.size() << '\n';
    os << "origin_lon,origin_lat,time,departure_angle,units\n";
    for (const auto& p : set.plumes) {
        os << format_double(p.origin.lon) << ',' << format_double(p.origin.lat) << ',' << p.time << ','
           << (p.departure_angle ? format_double(*p.departure_angle) : std::string("nan")) << ','
           << to_string(p.units) << '\n';
    }
    os << "data\n";
    for (const auto& p : set.plumes) detail::write_f64_le(os, p.values);
    if (!os) throw ConfigError("write_plumeset: stream write failed");
}

PlumeSet read_plumeset(std::istream& is) {
    using detail::parse_double;
    using detail::parse_int;
    using detail::read_line;
    using detail::split;
    constexpr const char* what = "PLUMESET1";
    if (read_line(is, what) != kPlumeMagic) throw ConfigError("not a PLUMESET1 file (bad magic)");
    PlumeSet set;
    set.grid = detail::parse_grid(read_line(is, what), what);
    auto cf = split(read_line(is, what), ',');
    if (cf.size() != 2 || cf[0] != "count") throw ConfigError("PLUMESET1: malformed count line");
    const long long n = parse_int(cf[1], what);
    if (n < 0) throw ConfigError("PLUMESET1: negative plume count");
    read_line(is, what);  // column header
    set.plumes.reserve(static_cast<std::size_t>(n));
    for (long long i = 0; i < n; ++i) {
        auto f = split(read_line(is, what), ',');
        if (f.size() != 5) throw ConfigError("PLUMESET1: malformed plume line " + std::to_string(i));
        Plume p;
        p.grid = set.grid;
        p.origin = {parse_double(f[0], what), parse_double(f[1], what)};
        p.time = parse_int(f[2], what);
        const double angle = parse_double(f[3], what);
        if (!std::isnan(angle)) p.departure_angle = angle;
        p.units = units_from_string(f[4]);
        set.plumes.push_back(std::move(p));
    }
    if (read_line(is, what) != "data") throw ConfigError("PLUMESET1: missing data marker");
    for (auto& p : set.plumes) p.values = detail::read_f64_le(is, set.grid.size(), what);
    return set;
}

void save_plumeset(const std::string& path, const PlumeSet& set) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open '" + path + "' for writing");
    write_plumeset(os, set);
}

PlumeSet load_plumeset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open '" + path + "'");
    return read_plumeset(is);
}

}  // namespace plumeemu
