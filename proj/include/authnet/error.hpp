#pragma once

#include <stdexcept>
#include <string>

namespace authnet {

// Error taxonomy shared by the whole library. The C API maps each type to a
// status code; the CLI maps them to process exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad argument values (negative sizes, out-of-range options, unknown names).
struct ValueError : Error {
    using Error::Error;
};

// Tensor/layer dimension mismatches.
struct ShapeError : Error {
    using Error::Error;
};

// Operation called before its prerequisite (e.g. backward without forward).
struct StateError : Error {
    using Error::Error;
};

// Filesystem failures: missing file, short read, cannot write.
struct IoError : Error {
    using Error::Error;
};

// Malformed file contents: bad magic, truncation, version or hash mismatch.
struct FormatError : Error {
    using Error::Error;
};

// A loaded artifact violates its declared invariants (key outside its box).
struct ConstraintError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

} // namespace authnet
