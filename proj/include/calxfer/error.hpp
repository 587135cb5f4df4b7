#pragma once

#include <stdexcept>
#include <string>

namespace calxfer {

/// Base error for everything thrown by the library. `module()` names the
/// subsystem that raised it so the CLI can surface it with context.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

/// Malformed input file; row/column are 1-based file coordinates (0 = unknown).
class LoadError : public Error {
 public:
  LoadError(const std::string& message, int row, int column)
      : Error("dataset", message + " at (" + std::to_string(row) + "," + std::to_string(column) + ")"),
        row_(row),
        column_(column) {}

  int row() const noexcept { return row_; }
  int column() const noexcept { return column_; }

 private:
  int row_;
  int column_;
};

/// Evaluation too close to a pole or singular point of a map.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Quad is collinear or has coincident points.
class DegenerateQuadError : public Error {
 public:
  explicit DegenerateQuadError(const std::string& message) : Error("moebius", message) {}
};

}  // namespace calxfer
