#include "mcs3d/geohash.hpp"

#include <cmath>
#include <numbers>

#include "mcs3d/error.hpp"

namespace mcs3d {

namespace {

constexpr std::string_view kAlphabet = "0123456789bcdefghjkmnpqrstuvwxyz";

int char_value(char c) {
    const auto pos = kAlphabet.find(c);
    return pos == std::string_view::npos ? -1 : static_cast<int>(pos);
}

constexpr double kMetersPerDegree = std::numbers::pi * kEarthRadius / 180.0;

}  // namespace

bool GeoBox::contains(LatLon p) const {
    const bool lat_in = p.lat >= lat_lo && (p.lat < lat_hi || (lat_hi == 90.0 && p.lat == 90.0));
    const bool lon_in = p.lon >= lon_lo && (p.lon < lon_hi || (lon_hi == 180.0 && p.lon == 180.0));
    return lat_in && lon_in;
}

GeohashCode::GeohashCode(std::string code) : code_(std::move(code)) {
    if (code_.empty() || code_.size() > 12)
        throw GeohashParseError("geohash length must be 1-12", code_.empty() ? 0 : 12);
    for (std::size_t i = 0; i < code_.size(); ++i)
        if (char_value(code_[i]) < 0)
            throw GeohashParseError(std::string("invalid geohash character '") + code_[i] + "'", i);
}

GeohashCode geohash_encode(double lat, double lon, int precision) {
    if (precision < 1 || precision > 12) throw ParameterError("geohash precision must be 1-12");
    if (!(lat >= -90.0 && lat <= 90.0)) throw ParameterError("latitude out of range");
    if (!(lon >= -180.0 && lon <= 180.0)) throw ParameterError("longitude out of range");
    double lat_lo = -90.0, lat_hi = 90.0, lon_lo = -180.0, lon_hi = 180.0;
    std::string code;
    code.reserve(static_cast<std::size_t>(precision));
    bool even = true;  // even bits refine longitude
    int bits = 0, value = 0;
    while (static_cast<int>(code.size()) < precision) {
        double& lo = even ? lon_lo : lat_lo;
        double& hi = even ? lon_hi : lat_hi;
        const double v = even ? lon : lat;
        const double mid = (lo + hi) / 2.0;
        value <<= 1;
        if (v >= mid) {
            value |= 1;
            lo = mid;
        } else {
            hi = mid;
        }
        even = !even;
        if (++bits == 5) {
            code += kAlphabet[static_cast<std::size_t>(value)];
            bits = 0;
            value = 0;
        }
    }
    return GeohashCode(std::move(code));
}

GeoBox geohash_decode(const GeohashCode& code) {
    GeoBox b{-90.0, 90.0, -180.0, 180.0};
    bool even = true;
    for (char c : code.str()) {
        const int v = char_value(c);
        for (int bit = 4; bit >= 0; --bit) {
            double& lo = even ? b.lon_lo : b.lat_lo;
            double& hi = even ? b.lon_hi : b.lat_hi;
            const double mid = (lo + hi) / 2.0;
            if ((v >> bit) & 1) lo = mid;
            else hi = mid;
            even = !even;
        }
    }
    return b;
}

CellSize cell_dimensions(const GeohashCode& code) {
    const auto b = geohash_decode(code);
    const double lat_c = b.center().lat * std::numbers::pi / 180.0;
    return {(b.lat_hi - b.lat_lo) * kMetersPerDegree, (b.lon_hi - b.lon_lo) * kMetersPerDegree * std::cos(lat_c)};
}

Eigen::Vector2d LocalFrame::to_local(LatLon p) const {
    const double c = std::cos(origin_.lat * std::numbers::pi / 180.0);
    return {(p.lon - origin_.lon) * kMetersPerDegree * c, (p.lat - origin_.lat) * kMetersPerDegree};
}

LatLon LocalFrame::to_geo(const Eigen::Vector2d& xy) const {
    const double c = std::cos(origin_.lat * std::numbers::pi / 180.0);
    return {origin_.lat + xy.y() / kMetersPerDegree, origin_.lon + xy.x() / (kMetersPerDegree * c)};
}

}  // namespace mcs3d
