#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace pretext {

// Error taxonomy. The CLI maps the three runtime categories to exit codes:
//   ConfigError -> 2, DataError -> 3, NumericError -> 4.
// Contract violations (shape/domain/value) derive from std::logic_error and
// surface as a generic nonzero exit; hitting one is a bug in the caller.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class DomainError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ValueError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <class E, class... Parts>
[[noreturn]] void raise(Parts&&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  throw E(os.str());
}

}  // namespace pretext
