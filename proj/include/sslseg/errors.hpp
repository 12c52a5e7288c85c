#pragma once

#include <stdexcept>
#include <string>

namespace sslseg {

// Base class for every error this library raises on purpose.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape mismatch or an operand whose extents make the op undefined.
struct dimension_error : error {
  using error::error;
};

// A value outside the mathematical domain of an op (log of a non-positive
// number, a label outside [0, classes) that is not the ignore index, ...).
struct domain_error : error {
  using error::error;
};

// A NaN or infinity produced by numeric code. Raised at the op that produced
// it rather than being allowed to propagate.
struct numeric_error : error {
  using error::error;
};

// Geometric transform that cannot be satisfied (crop larger than the padded
// source, scaled extent collapsing to zero, ...).
struct geometry_error : error {
  using error::error;
};

// Bad configuration: unknown key, unparsable value, inconsistent settings.
// The command line maps this to exit code 1.
struct config_error : error {
  using error::error;
};

// Filesystem problem: missing file, unreadable path, short read/write.
// The command line maps this (and format_error) to exit code 2.
struct io_error : error {
  using error::error;
};

// A file that exists but does not parse: wrong magic, malformed header,
// truncated payload.
struct format_error : io_error {
  using io_error::io_error;
};

}  // namespace sslseg
