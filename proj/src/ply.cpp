#include "mcs3d/ply.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>

#include "mcs3d/error.hpp"

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

namespace mcs3d::ply {

namespace {

struct Group {
    std::string_view attribute;
    std::array<std::string_view, 4> props;
    int arity;
    ScalarKind kind;
};

constexpr std::array<Group, 7> kGroups{{
    {attr::position, {"x", "y", "z"}, 3, ScalarKind::Float32},
    {attr::color, {"red", "green", "blue", "alpha"}, 4, ScalarKind::Uint8},
    {attr::confidence, {"confidence"}, 1, ScalarKind::Uint32},
    {attr::depth, {"depth"}, 1, ScalarKind::Float32},
    {attr::orientation, {"roll", "pitch", "yaw"}, 3, ScalarKind::Float32},
    {attr::angular_velocity, {"avx", "avy", "avz"}, 3, ScalarKind::Float32},
    {attr::device_position, {"px", "py", "pz"}, 3, ScalarKind::Float32},
}};

const Group* group_of_attribute(std::string_view name) {
    for (const auto& g : kGroups)
        if (g.attribute == name) return &g;
    return nullptr;
}

const Group* group_containing(std::string_view prop) {
    for (const auto& g : kGroups)
        for (int i = 0; i < g.arity; ++i)
            if (g.props[i] == prop) return &g;
    return nullptr;
}

std::optional<ScalarKind> kind_from_type(std::string_view t) {
    if (t == "float" || t == "float32") return ScalarKind::Float32;
    if (t == "uchar" || t == "uint8") return ScalarKind::Uint8;
    if (t == "uint" || t == "uint32") return ScalarKind::Uint32;
    return std::nullopt;
}

enum class Column : std::uint8_t { Position, Color, Confidence, Depth, Orientation, AngularVelocity, DevicePosition, Opaque };

Column column_of(std::string_view attribute) {
    if (attribute == attr::position) return Column::Position;
    if (attribute == attr::color) return Column::Color;
    if (attribute == attr::confidence) return Column::Confidence;
    if (attribute == attr::depth) return Column::Depth;
    if (attribute == attr::orientation) return Column::Orientation;
    if (attribute == attr::angular_velocity) return Column::AngularVelocity;
    if (attribute == attr::device_position) return Column::DevicePosition;
    return Column::Opaque;
}

// Where one declared property lands in the cloud.
struct Sink {
    Column column;
    int component;       // component within the attribute, or opaque column index
    ScalarKind declared;  // storage kind in the file
    std::string name;
};

struct Header {
    Encoding encoding = Encoding::Text;
    std::size_t count = 0;
    std::size_t length = 0;
    AttributeSchema schema;
    std::vector<Sink> sinks;
    Frame frame = Frame::SessionLocal;
    std::optional<CloudMeta> meta;
};

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

template <typename T>
std::string format_number(T v) {
    std::array<char, 64> buf{};
    auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), p);
}

void apply_meta_comment(Header& h, std::string_view rest, std::size_t offset) {
    auto tokens = split_ws(rest);
    if (tokens.empty()) return;
    const auto key = tokens[0];
    auto value_of = [&]() -> std::string_view {
        auto pos = rest.find(key) + key.size();
        while (pos < rest.size() && (rest[pos] == ' ' || rest[pos] == '\t')) ++pos;
        return rest.substr(pos);
    };
    auto ensure_meta = [&]() -> CloudMeta& {
        if (!h.meta) h.meta.emplace();
        return *h.meta;
    };
    if (key == "frame" && tokens.size() == 2) {
        if (tokens[1] == "udt-global") h.frame = Frame::UdtGlobal;
        else if (tokens[1] == "session-local") h.frame = Frame::SessionLocal;
        else throw FormatError("unknown frame '" + std::string(tokens[1]) + "'", offset);
    } else if (key == "geohash") {
        ensure_meta().geohash = std::string(value_of());
    } else if (key == "session") {
        ensure_meta().session_id = std::string(value_of());
    } else if (key == "sequence" && tokens.size() == 2) {
        if (!parse_number(tokens[1], ensure_meta().sequence)) throw FormatError("bad sequence comment", offset);
    } else if (key == "timestamp" && tokens.size() == 2) {
        if (!parse_number(tokens[1], ensure_meta().timestamp)) throw FormatError("bad timestamp comment", offset);
    } else if (key == "origin" && tokens.size() == 3) {
        std::array<double, 2> o{};
        if (!parse_number(tokens[1], o[0]) || !parse_number(tokens[2], o[1]))
            throw FormatError("bad origin comment", offset);
        ensure_meta().origin = o;
    }
    // Other comments are free text.
}

struct Declared {
    std::string name;
    ScalarKind kind;
    std::size_t offset;
};

Header parse_header(std::string_view bytes) {
    Header h;
    std::size_t pos = 0;
    int line_no = 0;
    bool have_format = false;
    bool have_vertex = false;
    bool done = false;
    std::vector<Declared> declared;

    while (!done) {
        if (pos >= bytes.size()) throw FormatError("header ended without end_header", pos);
        const auto eol = bytes.find('\n', pos);
        if (eol == std::string_view::npos) throw FormatError("header ended without end_header", pos);
        std::string_view line = bytes.substr(pos, eol - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        const std::size_t at = pos;
        pos = eol + 1;
        ++line_no;

        if (line_no == 1) {
            if (line != "ply") throw FormatError("missing 'ply' magic", at);
            continue;
        }
        auto tokens = split_ws(line);
        if (tokens.empty()) continue;
        const auto kw = tokens[0];
        if (kw == "comment") {
            apply_meta_comment(h, line.substr(std::min(line.size(), line.find("comment") + 7)), at);
        } else if (kw == "obj_info") {
            continue;
        } else if (kw == "format") {
            if (tokens.size() != 3 || tokens[2] != "1.0") throw FormatError("malformed format line", at);
            if (tokens[1] == "ascii") h.encoding = Encoding::Text;
            else if (tokens[1] == "binary_little_endian") h.encoding = Encoding::Binary;
            else throw FormatError("unsupported format '" + std::string(tokens[1]) + "'", at);
            have_format = true;
        } else if (kw == "element") {
            if (tokens.size() != 3) throw FormatError("malformed element line", at);
            if (tokens[1] != "vertex") throw FormatError("unsupported element '" + std::string(tokens[1]) + "'", at);
            if (have_vertex) throw FormatError("duplicate vertex element", at);
            if (!parse_number(tokens[2], h.count)) throw FormatError("bad vertex count", at);
            have_vertex = true;
        } else if (kw == "property") {
            if (!have_vertex) throw FormatError("property before element", at);
            if (tokens.size() >= 2 && tokens[1] == "list")
                throw UnsupportedTypeError(tokens.size() > 4 ? std::string(tokens.back()) : "?", "list");
            if (tokens.size() != 3) throw FormatError("malformed property line", at);
            auto kind = kind_from_type(tokens[1]);
            if (!kind) throw UnsupportedTypeError(std::string(tokens[2]), std::string(tokens[1]));
            for (const auto& d : declared)
                if (d.name == tokens[2]) throw FormatError("duplicate property '" + d.name + "'", at);
            declared.push_back({std::string(tokens[2]), *kind, at});
        } else if (kw == "end_header") {
            done = true;
        } else {
            throw FormatError("unexpected header keyword '" + std::string(kw) + "'", at);
        }
    }
    if (!have_format) throw FormatError("missing format line", 0);
    if (!have_vertex) throw FormatError("missing vertex element", 0);
    h.length = pos;

    // Fold declared properties into attribute groups.
    std::vector<std::string> opaque_names;
    for (std::size_t i = 0; i < declared.size();) {
        const auto& d = declared[i];
        const Group* g = group_containing(d.name);
        if (g == nullptr) {
            h.sinks.push_back({Column::Opaque, static_cast<int>(opaque_names.size()), d.kind, d.name});
            opaque_names.push_back(d.name);
            if (is_canonical_attribute(d.name))
                throw FormatError("property name '" + d.name + "' collides with an attribute name", d.offset);
            h.schema.add_opaque(d.name);
            ++i;
            continue;
        }
        if (g->props[0] != d.name) throw FormatError("property '" + d.name + "' outside its attribute group", d.offset);
        if (i + static_cast<std::size_t>(g->arity) > declared.size())
            throw FormatError("incomplete attribute group '" + std::string(g->attribute) + "'", d.offset);
        for (int c = 0; c < g->arity; ++c) {
            const auto& dc = declared[i + c];
            if (dc.name != g->props[c])
                throw FormatError("incomplete attribute group '" + std::string(g->attribute) + "'", dc.offset);
            if (dc.kind != g->kind) throw UnsupportedTypeError(dc.name, std::string(scalar_name(dc.kind)));
            h.sinks.push_back({column_of(g->attribute), c, dc.kind, dc.name});
        }
        if (h.schema.has(g->attribute))
            throw FormatError("duplicate attribute group '" + std::string(g->attribute) + "'", d.offset);
        h.schema.add(g->attribute);
        i += g->arity;
    }
    if (!h.schema.has(attr::position)) throw FormatError("vertex element lacks x y z", 0);
    return h;
}

// Per-point value holder used by both body decoders.
struct Value {
    float f = 0.0f;
    std::uint32_t u = 0;
};

void store(PointCloud& c, const Sink& s, std::size_t i, Value v) {
    switch (s.column) {
        case Column::Position: c.position[i][s.component] = v.f; break;
        case Column::Color: c.color[i][s.component] = static_cast<std::uint8_t>(v.u); break;
        case Column::Confidence: c.confidence[i] = v.u; break;
        case Column::Depth: c.depth[i] = v.f; break;
        case Column::Orientation: c.orientation[i][s.component] = v.f; break;
        case Column::AngularVelocity: c.angular_velocity[i][s.component] = v.f; break;
        case Column::DevicePosition: c.device_position[i][s.component] = v.f; break;
        case Column::Opaque:
            c.opaque[s.component].values[i] = s.declared == ScalarKind::Float32 ? v.f : static_cast<float>(v.u);
            break;
    }
}

void decode_binary(std::string_view body, const Header& h, PointCloud& c) {
    std::size_t width = 0;
    for (const auto& s : h.sinks) width += scalar_width(s.declared);
    const std::size_t expected = width * h.count;
    if (body.size() < expected) throw TruncationError(expected, body.size());
    const char* p = body.data();
    for (std::size_t i = 0; i < h.count; ++i) {
        for (const auto& s : h.sinks) {
            Value v;
            switch (s.declared) {
                case ScalarKind::Float32: std::memcpy(&v.f, p, 4); p += 4; break;
                case ScalarKind::Uint32: std::memcpy(&v.u, p, 4); p += 4; break;
                case ScalarKind::Uint8: v.u = static_cast<std::uint8_t>(*p); p += 1; break;
            }
            store(c, s, i, v);
        }
    }
}

void decode_text(std::string_view body, std::size_t body_offset, const Header& h, PointCloud& c) {
    std::size_t pos = 0;
    std::size_t parsed = 0;
    const std::size_t expected = h.count * h.sinks.size();
    auto is_space = [](char ch) { return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r'; };
    for (std::size_t i = 0; i < h.count; ++i) {
        for (const auto& s : h.sinks) {
            while (pos < body.size() && is_space(body[pos])) ++pos;
            if (pos >= body.size()) throw TruncationError(expected, parsed, "values");
            std::size_t end = pos;
            while (end < body.size() && !is_space(body[end])) ++end;
            const auto tok = body.substr(pos, end - pos);
            Value v;
            bool ok = false;
            if (s.declared == ScalarKind::Float32) {
                ok = parse_number(tok, v.f);
            } else {
                ok = parse_number(tok, v.u) && (s.declared != ScalarKind::Uint8 || v.u <= 255);
            }
            if (!ok) throw FormatError("bad value '" + std::string(tok) + "' for property '" + s.name + "'", body_offset + pos);
            store(c, s, i, v);
            ++parsed;
            pos = end;
        }
    }
}

}  // namespace

std::string_view encoding_name(Encoding e) { return e == Encoding::Binary ? "binary" : "text"; }

Encoding parse_encoding(std::string_view s) {
    if (s == "binary" || s == "binary_little_endian") return Encoding::Binary;
    if (s == "text" || s == "ascii") return Encoding::Text;
    throw ParameterError("unknown PLY encoding: " + std::string(s));
}

std::size_t header_length(std::string_view bytes) { return parse_header(bytes).length; }

PointCloud parse(std::string_view bytes) {
    Header h = parse_header(bytes);
    PointCloud c(h.schema, h.frame);
    c.meta = h.meta;
    c.resize(h.count);
    const auto body = bytes.substr(h.length);
    if (h.encoding == Encoding::Binary) decode_binary(body, h, c);
    else decode_text(body, h.length, h, c);
    c.validate();
    return c;
}

PointCloud parse(std::span<const std::uint8_t> bytes) {
    return parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string write(const PointCloud& cloud, Encoding encoding) {
    std::string out;
    out += "ply\n";
    out += encoding == Encoding::Binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n";
    out += "comment frame ";
    out += frame_name(cloud.frame);
    out += '\n';
    if (cloud.meta) {
        const auto& m = *cloud.meta;
        out += "comment geohash " + m.geohash + "\n";
        out += "comment session " + m.session_id + "\n";
        out += "comment sequence " + std::to_string(m.sequence) + "\n";
        out += "comment timestamp " + format_number(m.timestamp) + "\n";
        if (m.origin) out += "comment origin " + format_number((*m.origin)[0]) + " " + format_number((*m.origin)[1]) + "\n";
    }
    out += "element vertex " + std::to_string(cloud.size()) + "\n";
    for (const auto& a : cloud.schema.attributes()) {
        if (const Group* g = group_of_attribute(a.name)) {
            for (int c = 0; c < g->arity; ++c) {
                out += "property ";
                out += scalar_name(g->kind);
                out += ' ';
                out += g->props[c];
                out += '\n';
            }
        } else {
            out += "property float " + a.name + "\n";
        }
    }
    out += "end_header\n";

    const std::size_t n = cloud.size();
    const auto& attrs = cloud.schema.attributes();
    std::vector<Column> cols;
    std::vector<int> opaque_index;
    int next_opaque = 0;
    for (const auto& a : attrs) {
        cols.push_back(column_of(a.name));
        opaque_index.push_back(cols.back() == Column::Opaque ? next_opaque++ : -1);
    }

    if (encoding == Encoding::Binary) {
        const std::size_t header = out.size();
        out.resize(header + n * cloud.schema.point_width());
        char* p = out.data() + header;
        auto put = [&p](const void* src, std::size_t len) {
            std::memcpy(p, src, len);
            p += len;
        };
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < attrs.size(); ++k) {
                switch (cols[k]) {
                    case Column::Position: put(cloud.position[i].data(), 12); break;
                    case Column::Color: put(cloud.color[i].data(), 4); break;
                    case Column::Confidence: put(&cloud.confidence[i], 4); break;
                    case Column::Depth: put(&cloud.depth[i], 4); break;
                    case Column::Orientation: put(cloud.orientation[i].data(), 12); break;
                    case Column::AngularVelocity: put(cloud.angular_velocity[i].data(), 12); break;
                    case Column::DevicePosition: put(cloud.device_position[i].data(), 12); break;
                    case Column::Opaque: put(&cloud.opaque[opaque_index[k]].values[i], 4); break;
                }
            }
        }
        return out;
    }

    std::array<char, 32> buf{};
    bool first = true;
    auto put_f = [&](float v) {
        if (!first) out += ' ';
        first = false;
        auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
        out.append(buf.data(), p);
    };
    auto put_u = [&](std::uint32_t v) {
        if (!first) out += ' ';
        first = false;
        auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
        out.append(buf.data(), p);
    };
    auto put_v3 = [&](const Eigen::Vector3f& v) {
        put_f(v.x());
        put_f(v.y());
        put_f(v.z());
    };
    for (std::size_t i = 0; i < n; ++i) {
        first = true;
        for (std::size_t k = 0; k < attrs.size(); ++k) {
            switch (cols[k]) {
                case Column::Position: put_v3(cloud.position[i]); break;
                case Column::Color:
                    for (auto ch : cloud.color[i]) put_u(ch);
                    break;
                case Column::Confidence: put_u(cloud.confidence[i]); break;
                case Column::Depth: put_f(cloud.depth[i]); break;
                case Column::Orientation: put_v3(cloud.orientation[i]); break;
                case Column::AngularVelocity: put_v3(cloud.angular_velocity[i]); break;
                case Column::DevicePosition: put_v3(cloud.device_position[i]); break;
                case Column::Opaque: put_f(cloud.opaque[opaque_index[k]].values[i]); break;
            }
        }
        out += '\n';
    }
    return out;
}

std::uint64_t estimate_size(const AttributeSchema& schema, std::uint64_t count, Encoding encoding) {
    if (encoding == Encoding::Binary) return count * schema.point_width();
    // Widest shortest-round-trip float is "-1.23456789e-38"; every value is followed by one
    // separator (space or newline).
    std::uint64_t per_point = 0;
    for (const auto& a : schema.attributes()) {
        std::uint64_t w = 0;
        switch (a.kind) {
            case ScalarKind::Float32: w = 15; break;
            case ScalarKind::Uint8: w = 3; break;
            case ScalarKind::Uint32: w = 10; break;
        }
        per_point += (w + 1) * static_cast<std::uint64_t>(a.arity);
    }
    return count * per_point;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

void write_file(const std::string& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + path);
}

}  // namespace mcs3d::ply
