#pragma once

#include <stdexcept>
#include <string>

namespace vlmq {

// Base of everything the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke an operation's precondition (empty answer, bad index, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// Missing or inconsistent configuration (unknown model id, no backend kind).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A backend answered, but with something outside its contract.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// A backend could not be reached, or gave up after retries.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool retryable, int status = 0)
      : Error(what), retryable_(retryable), status_(status) {}
  bool retryable() const noexcept { return retryable_; }
  int status() const noexcept { return status_; }

 private:
  bool retryable_;
  int status_;
};

// On-disk cache entry whose content does not match its digest.
class CacheCorruption : public Error {
 public:
  using Error::Error;
};

// Judge output that could not be parsed (distinct from an empty result).
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace vlmq
