#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace metatune {

/// Base class for every error raised by the library. `context()` names the
/// operation, file or field that failed; `what()` carries the full message.
class Error : public std::runtime_error {
 public:
  Error(std::string context, const std::string& message)
      : std::runtime_error(context.empty() ? message : context + ": " + message),
        context_(std::move(context)) {}

  const std::string& context() const noexcept { return context_; }

 private:
  std::string context_;
};

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, const std::vector<std::size_t>& a,
             const std::vector<std::size_t>& b)
      : Error(op, "shape mismatch " + shape_str(a) + " vs " + shape_str(b)),
        lhs(a),
        rhs(b) {}
  ShapeError(const std::string& op, const std::vector<std::size_t>& a,
             const std::string& expected)
      : Error(op, "bad shape " + shape_str(a) + ", expected " + expected), lhs(a) {}

  std::vector<std::size_t> lhs;
  std::vector<std::size_t> rhs;
};

class ValueError : public Error {
 public:
  using Error::Error;
};

/// Raised when a loss or gradient turns NaN/Inf. `index` is the step or pair
/// index the caller was processing (or npos when not applicable).
class NonFiniteError : public Error {
 public:
  NonFiniteError(std::string context, const std::string& message,
                 std::size_t idx = npos)
      : Error(std::move(context), message), index(idx) {}

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t index;
};

class IoError : public Error {
 public:
  IoError(const std::string& file, const std::string& field, const std::string& message)
      : Error(file + (field.empty() ? "" : " [" + field + "]"), message),
        path(file),
        field_name(field) {}

  std::string path;
  std::string field_name;
};

}  // namespace metatune
