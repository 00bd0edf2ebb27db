#pragma once

#include <stdexcept>
#include <string>

namespace mpcs {

// Validation failures (bad geometry, out-of-range arguments, malformed input).
struct DimensionError : std::invalid_argument {
  explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct InvalidLevelsError : std::invalid_argument {
  explicit InvalidLevelsError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct RangeError : std::invalid_argument {
  explicit RangeError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct ZeroSignalError : std::invalid_argument {
  explicit ZeroSignalError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct EmptyInputError : std::invalid_argument {
  explicit EmptyInputError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct MissingInputError : std::invalid_argument {
  explicit MissingInputError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Numerical failures.
struct ConvergenceError : std::runtime_error {
  explicit ConvergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateError : std::runtime_error {
  explicit DegenerateError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SolveError : std::runtime_error {
  explicit SolveError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / serialization failures.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mpcs
