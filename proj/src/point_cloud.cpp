#include "mcs3d/point_cloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mcs3d/error.hpp"

namespace mcs3d {

std::size_t scalar_width(ScalarKind kind) {
    switch (kind) {
        case ScalarKind::Float32: return 4;
        case ScalarKind::Uint8: return 1;
        case ScalarKind::Uint32: return 4;
    }
    return 0;
}

std::string_view scalar_name(ScalarKind kind) {
    switch (kind) {
        case ScalarKind::Float32: return "float";
        case ScalarKind::Uint8: return "uchar";
        case ScalarKind::Uint32: return "uint";
    }
    return "?";
}

std::string_view frame_name(Frame f) {
    return f == Frame::UdtGlobal ? "udt-global" : "session-local";
}

namespace {

std::optional<Attribute> canonical_attribute(std::string_view name) {
    if (name == attr::position) return Attribute{std::string(name), ScalarKind::Float32, 3};
    if (name == attr::color) return Attribute{std::string(name), ScalarKind::Uint8, 4};
    if (name == attr::confidence) return Attribute{std::string(name), ScalarKind::Uint32, 1};
    if (name == attr::depth) return Attribute{std::string(name), ScalarKind::Float32, 1};
    if (name == attr::orientation) return Attribute{std::string(name), ScalarKind::Float32, 3};
    if (name == attr::angular_velocity) return Attribute{std::string(name), ScalarKind::Float32, 3};
    if (name == attr::device_position) return Attribute{std::string(name), ScalarKind::Float32, 3};
    return std::nullopt;
}

}  // namespace

bool is_canonical_attribute(std::string_view name) { return canonical_attribute(name).has_value(); }

AttributeSchema AttributeSchema::canonical() {
    return of({attr::position, attr::color, attr::confidence, attr::depth, attr::orientation,
               attr::angular_velocity, attr::device_position});
}

AttributeSchema AttributeSchema::position_only() { return of({attr::position}); }

AttributeSchema AttributeSchema::of(std::initializer_list<std::string_view> names) {
    AttributeSchema s;
    for (auto n : names) s.add(n);
    return s;
}

AttributeSchema& AttributeSchema::add(std::string_view canonical_name) {
    auto a = canonical_attribute(canonical_name);
    if (!a) throw ParameterError("not a canonical attribute: " + std::string(canonical_name));
    push(std::move(*a));
    return *this;
}

AttributeSchema& AttributeSchema::add_opaque(std::string name) {
    if (is_canonical_attribute(name))
        throw ParameterError("opaque attribute shadows canonical name: " + name);
    push(Attribute{std::move(name), ScalarKind::Float32, 1});
    return *this;
}

void AttributeSchema::push(Attribute a) {
    if (has(a.name)) throw ParameterError("duplicate attribute: " + a.name);
    attrs_.push_back(std::move(a));
}

bool AttributeSchema::has(std::string_view name) const {
    return std::any_of(attrs_.begin(), attrs_.end(), [&](const Attribute& a) { return a.name == name; });
}

std::size_t AttributeSchema::point_width() const {
    std::size_t w = 0;
    for (const auto& a : attrs_) w += a.width();
    return w;
}

PointCloud::PointCloud(AttributeSchema s, Frame f) : schema(std::move(s)), frame(f) {
    if (!schema.has(attr::position)) throw ParameterError("schema must contain position");
    for (const auto& a : schema.attributes())
        if (!is_canonical_attribute(a.name)) opaque.push_back(OpaqueColumn{a.name, {}});
}

void PointCloud::resize(std::size_t n) {
    position.resize(n, Eigen::Vector3f::Zero());
    if (has(attr::color)) color.resize(n, Rgba{0, 0, 0, 255});
    if (has(attr::confidence)) confidence.resize(n, 0);
    if (has(attr::depth)) depth.resize(n, 0.0f);
    if (has(attr::orientation)) orientation.resize(n, Eigen::Vector3f::Zero());
    if (has(attr::angular_velocity)) angular_velocity.resize(n, Eigen::Vector3f::Zero());
    if (has(attr::device_position)) device_position.resize(n, Eigen::Vector3f::Zero());
    for (auto& c : opaque) c.values.resize(n, 0.0f);
}

void PointCloud::reserve(std::size_t n) {
    position.reserve(n);
    if (has(attr::color)) color.reserve(n);
    if (has(attr::confidence)) confidence.reserve(n);
    if (has(attr::depth)) depth.reserve(n);
    if (has(attr::orientation)) orientation.reserve(n);
    if (has(attr::angular_velocity)) angular_velocity.reserve(n);
    if (has(attr::device_position)) device_position.reserve(n);
    for (auto& c : opaque) c.values.reserve(n);
}

void PointCloud::push_from(const PointCloud& other, std::size_t i) {
    position.push_back(other.position[i]);
    if (!other.color.empty()) color.push_back(other.color[i]);
    if (!other.confidence.empty()) confidence.push_back(other.confidence[i]);
    if (!other.depth.empty()) depth.push_back(other.depth[i]);
    if (!other.orientation.empty()) orientation.push_back(other.orientation[i]);
    if (!other.angular_velocity.empty()) angular_velocity.push_back(other.angular_velocity[i]);
    if (!other.device_position.empty()) device_position.push_back(other.device_position[i]);
    for (std::size_t c = 0; c < opaque.size(); ++c) opaque[c].values.push_back(other.opaque[c].values[i]);
}

PointCloud PointCloud::select(std::span<const std::size_t> indices) const {
    PointCloud out(schema, frame);
    out.meta = meta;
    out.reserve(indices.size());
    for (auto i : indices) out.push_from(*this, i);
    return out;
}

namespace {

bool finite3(const Eigen::Vector3f& v) { return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z()); }

template <typename T>
bool bytes_equal(const std::vector<T>& a, const std::vector<T>& b) {
    return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

}  // namespace

void PointCloud::validate() const {
    const auto n = size();
    auto check_len = [&](std::size_t len, std::string_view name) {
        if (has(name) ? len != n : len != 0)
            throw ValueError("column '" + std::string(name) + "' length does not match schema");
    };
    check_len(color.size(), attr::color);
    check_len(confidence.size(), attr::confidence);
    check_len(depth.size(), attr::depth);
    check_len(orientation.size(), attr::orientation);
    check_len(angular_velocity.size(), attr::angular_velocity);
    check_len(device_position.size(), attr::device_position);
    std::size_t n_opaque = 0;
    for (const auto& a : schema.attributes())
        if (!is_canonical_attribute(a.name)) {
            if (n_opaque >= opaque.size() || opaque[n_opaque].name != a.name || opaque[n_opaque].values.size() != n)
                throw ValueError("opaque column '" + a.name + "' does not match schema");
            ++n_opaque;
        }
    if (n_opaque != opaque.size()) throw ValueError("opaque columns do not match schema");

    for (std::size_t i = 0; i < n; ++i) {
        if (!finite3(position[i])) throw ValueError("non-finite position at point " + std::to_string(i));
    }
    for (std::size_t i = 0; i < confidence.size(); ++i)
        if (confidence[i] > 2)
            throw ValueError("confidence " + std::to_string(confidence[i]) + " outside {0,1,2} at point " +
                             std::to_string(i));
    for (std::size_t i = 0; i < depth.size(); ++i)
        if (!std::isfinite(depth[i]) || depth[i] < 0.0f)
            throw ValueError("invalid depth at point " + std::to_string(i));
    for (const auto* col : {&orientation, &angular_velocity, &device_position})
        for (const auto& v : *col)
            if (!finite3(v)) throw ValueError("non-finite vector attribute");
    for (const auto& c : opaque)
        for (float v : c.values)
            if (!std::isfinite(v)) throw ValueError("non-finite value in '" + c.name + "'");
}

bool bit_equal(const PointCloud& a, const PointCloud& b) {
    if (!(a.schema == b.schema) || a.frame != b.frame || a.meta != b.meta) return false;
    if (!bytes_equal(a.position, b.position) || !bytes_equal(a.color, b.color) ||
        !bytes_equal(a.confidence, b.confidence) || !bytes_equal(a.depth, b.depth) ||
        !bytes_equal(a.orientation, b.orientation) || !bytes_equal(a.angular_velocity, b.angular_velocity) ||
        !bytes_equal(a.device_position, b.device_position) || a.opaque.size() != b.opaque.size())
        return false;
    for (std::size_t c = 0; c < a.opaque.size(); ++c)
        if (a.opaque[c].name != b.opaque[c].name || !bytes_equal(a.opaque[c].values, b.opaque[c].values))
            return false;
    return true;
}

std::vector<Eigen::Vector3d> positions_d(const PointCloud& cloud) {
    std::vector<Eigen::Vector3d> out;
    out.reserve(cloud.size());
    for (const auto& p : cloud.position) out.push_back(p.cast<double>());
    return out;
}

}  // namespace mcs3d
