#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cma {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shapes or lengths that do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

// A vector whose norm is too small to normalize or compare by angle.
class DegenerateVectorError : public Error {
public:
    using Error::Error;
};

// NaN/Inf encountered in a loss, gradient or parameter.
class NumericError : public Error {
public:
    using Error::Error;
};

// Bad input data: insufficient class population, unknown ids, invalid configs.
class DataError : public Error {
public:
    using Error::Error;
};

enum class FormatErrorKind {
    io,
    bad_magic,
    unsupported_version,
    truncated_header,
    truncated_payload,
    zero_dimension,
    empty_sequence,
    invalid_label,
    invalid_id,
    duplicate_id,
    non_finite_value,
    trailing_bytes,
    bad_tensor,
};

const char* to_string(FormatErrorKind kind);

// Raised by the CMAF store and model checkpoint readers. `offset` is the byte
// position where the problem was detected.
class FormatError : public Error {
public:
    FormatError(FormatErrorKind kind, std::string detail, std::uint64_t offset = 0);

    FormatErrorKind kind() const noexcept { return kind_; }
    std::uint64_t offset() const noexcept { return offset_; }

private:
    FormatErrorKind kind_;
    std::uint64_t offset_;
};

}  // namespace cma
