#pragma once

#include <stdexcept>
#include <string>

namespace fulsim {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (bad shape, empty input, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// An operation was attempted from the wrong lifecycle state.
class StateError : public Error {
 public:
  using Error::Error;
};

/// A lookup key (client id, sample id, digest, algorithm) does not exist.
class NotFound : public Error {
 public:
  using Error::Error;
};

/// Stored bytes no longer hash to the digest they were filed under.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// A revoked request could not be rolled back to its pre-unlearning state.
class ReversibilityError : public Error {
 public:
  using Error::Error;
};

/// Scenario configuration failed validation. `what()` lists every problem.
class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

}  // namespace detail
}  // namespace fulsim
