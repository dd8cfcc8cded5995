#pragma once

#include <stdexcept>
#include <string>

namespace cdssl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: configs, manifests, arguments. The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or version-incompatible file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Architecture/config fingerprint disagreement between a checkpoint and its consumer.
class FingerprintError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered during training or a numeric probe.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Another run holds the output directory.
class LockError : public Error {
 public:
  using Error::Error;
};

}  // namespace cdssl
