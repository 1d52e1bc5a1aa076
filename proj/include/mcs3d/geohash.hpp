#pragma once

#include <string>
#include <string_view>

#include <Eigen/Core>

namespace mcs3d {

inline constexpr double kEarthRadius = 6371008.8;  // mean spherical radius, meters
inline constexpr int kDefaultGeohashPrecision = 8;

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;
};

/// Latitude/longitude box of a geohash cell. Intervals are half-open [lo, hi); the +90 latitude
/// and +180 longitude edges belong to the top/east-most cells.
struct GeoBox {
    double lat_lo, lat_hi, lon_lo, lon_hi;

    LatLon center() const { return {(lat_lo + lat_hi) / 2.0, (lon_lo + lon_hi) / 2.0}; }
    bool contains(LatLon p) const;
};

class GeohashCode {
public:
    GeohashCode() = default;
    /// Validates length (1-12) and alphabet; throws GeohashParseError naming the bad position.
    explicit GeohashCode(std::string code);

    const std::string& str() const { return code_; }
    int precision() const { return static_cast<int>(code_.size()); }
    bool empty() const { return code_.empty(); }

    auto operator<=>(const GeohashCode&) const = default;

private:
    std::string code_;
};

GeohashCode geohash_encode(double lat, double lon, int precision);
inline GeohashCode geohash_encode(LatLon p, int precision) { return geohash_encode(p.lat, p.lon, precision); }
GeoBox geohash_decode(const GeohashCode& code);

struct CellSize {
    double height;  // meters, north-south
    double width;   // meters, east-west at the cell's center latitude
};

CellSize cell_dimensions(const GeohashCode& code);

/// Equirectangular tangent-plane frame: x east, y north, meters from `origin`, on the same
/// spherical Earth used for cell sizes.
class LocalFrame {
public:
    LocalFrame() = default;
    explicit LocalFrame(LatLon origin) : origin_(origin) {}

    LatLon origin() const { return origin_; }
    Eigen::Vector2d to_local(LatLon p) const;
    LatLon to_geo(const Eigen::Vector2d& xy) const;

private:
    LatLon origin_{};
};

}  // namespace mcs3d
