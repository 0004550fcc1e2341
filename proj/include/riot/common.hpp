#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>

namespace riot {

using Index = std::int64_t;

/// Logical extent of a 2-D array. Vectors are rows x 1.
///
/// Zero extents are allowed for degenerate results (an empty gather is 0 x 1);
/// user-created matrices always have rows, cols >= 1.
struct Shape {
  Index rows = 1;
  Index cols = 1;

  Index size() const { return rows * cols; }
  bool is_vector() const { return cols == 1; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);
inline std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << to_string(s); }

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem or on-disk format failures. The CLI maps these to exit code 2.
class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Every frame of the buffer pool is pinned. Always a planner bug.
class PoolExhausted : public Error {
 public:
  using Error::Error;
};

class BudgetError : public Error {
 public:
  using Error::Error;
};

inline Index ceil_div(Index a, Index b) { return (a + b - 1) / b; }

}  // namespace riot
