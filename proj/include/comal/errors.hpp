#pragma once

#include <stdexcept>
#include <string>

namespace comal {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (non-positive length, bad id, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Two vehicles overlap, or the IDM was asked to evaluate a non-positive gap.
class CollisionError : public Error {
 public:
  using Error::Error;
};

/// Missing API key, malformed endpoint, unreadable scenario file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The remote endpoint could not produce an answer within the retry budget.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// The replay backend was asked for a turn the recording does not contain.
class ReplayMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace comal
