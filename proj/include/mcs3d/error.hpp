#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mcs3d {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller-supplied argument violates an operation precondition.
class ParameterError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class TruncationError : public Error {
public:
    TruncationError(std::size_t expected, std::size_t available, const std::string& unit = "bytes")
        : Error("truncated PLY body: expected " + std::to_string(expected) + " " + unit + ", " +
                std::to_string(available) + " available"),
          expected_(expected),
          available_(available) {}

    std::size_t expected() const noexcept { return expected_; }
    std::size_t available() const noexcept { return available_; }

private:
    std::size_t expected_;
    std::size_t available_;
};

class UnsupportedTypeError : public Error {
public:
    UnsupportedTypeError(const std::string& property, const std::string& type)
        : Error("unsupported scalar type '" + type + "' for property '" + property + "'"),
          property_(property) {}

    const std::string& property() const noexcept { return property_; }

private:
    std::string property_;
};

/// Parsed values that are well-formed but outside the domain (confidence 3, NaN, ...).
class ValueError : public Error {
public:
    using Error::Error;
};

class MergeError : public Error {
public:
    MergeError(const std::string& what, std::size_t index)
        : Error(what + " (input " + std::to_string(index) + ")"), index_(index) {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

class GeohashParseError : public Error {
public:
    GeohashParseError(const std::string& what, std::size_t position)
        : Error(what + " at position " + std::to_string(position)), position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class InsufficientCorrespondenceError : public Error {
public:
    using Error::Error;
};

}  // namespace mcs3d
