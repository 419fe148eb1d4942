#pragma once

#include <stdexcept>
#include <string>

namespace srkit {

// Error buckets map 1:1 onto CLI exit codes: usage=1, data=2, numeric=3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// Shape/group mismatches surface as data errors at the CLI boundary.
class ShapeError : public DataError {
 public:
  explicit ShapeError(const std::string& msg) : DataError(msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace srkit
