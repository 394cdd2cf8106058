#ifndef TRAJDIFF_ERRORS_HPP
#define TRAJDIFF_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace trajdiff {

// Exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Exit code 3. Malformed files, schema violations, hash mismatches.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Exit code 4. NaN/Inf anywhere in a computation aborts with this.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace trajdiff

#endif  // TRAJDIFF_ERRORS_HPP
