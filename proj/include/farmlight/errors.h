#pragma once

#include <stdexcept>
#include <string>

namespace farmlight {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition was not met by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// A tensor produced NaN or Inf. `tensor()` names the first offender.
class NumericFault : public Error {
 public:
  explicit NumericFault(std::string tensor)
      : Error("numeric fault in tensor '" + tensor + "'"), tensor_(std::move(tensor)) {}
  const std::string& tensor() const noexcept { return tensor_; }

 private:
  std::string tensor_;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class TruncationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(std::string path, const std::string& what)
      : Error(what + ": " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// The edge runtime has no model snapshot or no observation to act on.
class NotReady : public Error {
 public:
  using Error::Error;
};

/// The ingest queue is at capacity; the producer must retry later.
class Backpressure : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

/// A state-machine transition that is not in the declared set.
class Conflict : public Error {
 public:
  using Error::Error;
};

}  // namespace farmlight
