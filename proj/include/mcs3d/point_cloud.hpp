#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace mcs3d {

enum class ScalarKind : std::uint8_t { Float32, Uint8, Uint32 };

std::size_t scalar_width(ScalarKind kind);
std::string_view scalar_name(ScalarKind kind);

// Canonical attribute names. Their PLY property spellings live in ply.cpp.
namespace attr {
inline constexpr std::string_view position = "position";
inline constexpr std::string_view color = "color";
inline constexpr std::string_view confidence = "confidence";
inline constexpr std::string_view depth = "depth";
inline constexpr std::string_view orientation = "orientation";
inline constexpr std::string_view angular_velocity = "angular_velocity";
inline constexpr std::string_view device_position = "device_position";
}  // namespace attr

struct Attribute {
    std::string name;
    ScalarKind kind = ScalarKind::Float32;
    int arity = 1;

    std::size_t width() const { return scalar_width(kind) * static_cast<std::size_t>(arity); }
    bool operator==(const Attribute&) const = default;
};

/// True for the seven attribute names with a fixed kind and arity.
bool is_canonical_attribute(std::string_view name);

/// Ordered attribute list; order is serialization order.
class AttributeSchema {
public:
    AttributeSchema() = default;

    /// position, color, confidence, depth, orientation, angular_velocity, device_position.
    static AttributeSchema canonical();
    static AttributeSchema position_only();
    /// Canonical attributes by name, in the order given. Throws ParameterError on unknown names.
    static AttributeSchema of(std::initializer_list<std::string_view> names);

    /// Appends a canonical attribute by name.
    AttributeSchema& add(std::string_view canonical_name);
    /// Appends an opaque float32 scalar attribute.
    AttributeSchema& add_opaque(std::string name);

    bool has(std::string_view name) const;
    const std::vector<Attribute>& attributes() const { return attrs_; }
    std::size_t size() const { return attrs_.size(); }
    std::size_t point_width() const;

    bool operator==(const AttributeSchema&) const = default;

private:
    void push(Attribute a);

    std::vector<Attribute> attrs_;
};

enum class Frame : std::uint8_t { SessionLocal, UdtGlobal };

std::string_view frame_name(Frame f);

struct CloudMeta {
    std::string geohash;
    std::string session_id;
    std::uint64_t sequence = 0;
    double timestamp = 0.0;
    /// Latitude/longitude of the local tangent-plane origin the positions are expressed in.
    std::optional<std::array<double, 2>> origin;

    bool operator==(const CloudMeta&) const = default;
};

using Rgba = std::array<std::uint8_t, 4>;

struct OpaqueColumn {
    std::string name;
    std::vector<float> values;

    bool operator==(const OpaqueColumn&) const = default;
};

/// Column-oriented point storage. A column is populated iff the schema holds the attribute;
/// absent columns stay empty.
struct PointCloud {
    AttributeSchema schema = AttributeSchema::position_only();
    Frame frame = Frame::SessionLocal;
    std::optional<CloudMeta> meta;

    std::vector<Eigen::Vector3f> position;
    std::vector<Rgba> color;
    std::vector<std::uint32_t> confidence;
    std::vector<float> depth;
    std::vector<Eigen::Vector3f> orientation;
    std::vector<Eigen::Vector3f> angular_velocity;
    std::vector<Eigen::Vector3f> device_position;
    std::vector<OpaqueColumn> opaque;

    PointCloud() = default;
    explicit PointCloud(AttributeSchema s, Frame f = Frame::SessionLocal);

    std::size_t size() const { return position.size(); }
    bool empty() const { return position.empty(); }
    bool has(std::string_view name) const { return schema.has(name); }

    void resize(std::size_t n);
    void reserve(std::size_t n);

    /// Appends point `i` of `other`, which must share this cloud's schema.
    void push_from(const PointCloud& other, std::size_t i);
    /// New cloud with the same schema/frame/meta holding the given points in order.
    PointCloud select(std::span<const std::size_t> indices) const;

    /// Checks column lengths and the value-domain invariants; throws ValueError.
    void validate() const;

    bool operator==(const PointCloud&) const = default;
};

/// Byte-level equality of every column (distinguishes -0.0f from 0.0f).
bool bit_equal(const PointCloud& a, const PointCloud& b);

/// Positions widened to double for geometry.
std::vector<Eigen::Vector3d> positions_d(const PointCloud& cloud);

}  // namespace mcs3d
