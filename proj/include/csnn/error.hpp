#pragma once

#include <stdexcept>
#include <string>

namespace csnn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Convolution/pooling geometry that cannot be realized.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Malformed arguments: mismatched lengths, NaN inputs, bad labels.
class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Corrupt, truncated or version-mismatched checkpoint / representation files.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Missing or malformed dataset files.
class DataError : public Error {
 public:
  using Error::Error;
};

// A NaN/Inf showed up where the learning rules must keep values finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace csnn
