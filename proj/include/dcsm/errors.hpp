#pragma once

#include <stdexcept>
#include <string>

namespace dcsm {

// Malformed or degenerate input: bad CSV cells, schema violations, empty
// data, dimension mismatches. The CLI maps these to exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure: non-finite losses, root brackets without a sign change.
// The CLI maps these to exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dcsm
