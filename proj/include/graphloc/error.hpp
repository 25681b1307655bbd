#pragma once

#include <stdexcept>
#include <string>

namespace graphloc {

/// Input violates a documented contract (bad config, malformed file, broken
/// invariant). The CLI maps it to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Referenced data is missing or inconsistent with other data (unknown node,
/// missing environment, truncated payload). The CLI maps it to exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace graphloc
