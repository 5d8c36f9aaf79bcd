#pragma once

#include <stdexcept>
#include <string>

namespace spectra {

// Base of every error thrown by the library. The CLI maps the subclasses
// onto exit codes: FormatError/IoError/InvalidArgument -> 2, ShapeError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed container file, bad header, unsupported dtype, non-finite data.
class FormatError : public Error {
 public:
  using Error::Error;
};

// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// Two operands that must agree in shape do not.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Precondition violated by a caller-supplied value (rank out of range, q not in (0,1), ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Jacobi sweeps exhausted without reaching the orthogonality threshold.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace spectra
