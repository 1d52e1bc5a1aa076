#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mcs3d/point_cloud.hpp"

namespace mcs3d::ply {

enum class Encoding : std::uint8_t { Text, Binary };

std::string_view encoding_name(Encoding e);
/// Accepts "text"/"ascii" and "binary"; throws ParameterError otherwise.
Encoding parse_encoding(std::string_view s);

/// Parses an ascii 1.0 or binary_little_endian 1.0 PLY holding a single vertex element.
///
/// Canonical properties (x y z, red green blue alpha, confidence, depth, roll pitch yaw,
/// avx avy avz, px py pz) must appear as complete, contiguous groups with their canonical
/// types. Any other property of a supported type (float, uchar, uint) becomes an opaque
/// float32 attribute. Metadata and frame are read from `comment` lines written by write().
PointCloud parse(std::span<const std::uint8_t> bytes);
PointCloud parse(std::string_view bytes);

/// Serializes the cloud. Floats in text bodies use shortest round-trip formatting.
std::string write(const PointCloud& cloud, Encoding encoding);

/// Body size in bytes: exact for binary, a worst-case upper bound for text.
std::uint64_t estimate_size(const AttributeSchema& schema, std::uint64_t count, Encoding encoding);

/// Length of the header, including the end_header line. Throws FormatError when absent.
std::size_t header_length(std::string_view bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace mcs3d::ply
