#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "plumeemu/error.hpp"
#include "plumeemu/plume.hpp"

namespace plumeemu::detail {

inline void write_f64_le(std::ostream& os, std::span<const double> values) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)));
    } else {
        for (double v : values) {
            auto bits = std::bit_cast<std::uint64_t>(v);
            char buf[8];
            for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
            os.write(buf, 8);
        }
    }
}

inline std::vector<double> read_f64_le(std::istream& is, std::size_t count, const char* what) {
    std::vector<double> out(count);
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(count * sizeof(double)));
    } else {
        for (auto& v : out) {
            unsigned char buf[8];
            is.read(reinterpret_cast<char*>(buf), 8);
            std::uint64_t bits = 0;
            for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
            v = std::bit_cast<double>(bits);
        }
    }
    if (!is) throw ConfigError(std::string(what) + ": truncated binary block");
    return out;
}

inline std::string read_line(std::istream& is, const char* what) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError(std::string(what) + ": unexpected end of header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const char* what);
long long parse_int(const std::string& s, const char* what);
/// Shortest round-trip decimal representation.
std::string format_double(double v);

/// "grid,n_lon,n_lat,lon_min,lat_min,d_lon,d_lat"
std::string format_grid(const GridSpec& g);
GridSpec parse_grid(const std::string& line, const char* what);

}  // namespace plumeemu::detail
