#pragma once

#include <stdexcept>
#include <string>

namespace uatlas {

// Base for every error raised by the library. Callers that only need a
// message can catch this; tests and the CLI discriminate on the subclass.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not line up. Carries the offending layer id when the
// failure happened inside a model.
class DimensionError : public Error {
 public:
  DimensionError(std::string layer_id, const std::string& what)
      : Error(layer_id.empty() ? what : "layer '" + layer_id + "': " + what),
        layer_id_(std::move(layer_id)) {}
  const std::string& layer_id() const noexcept { return layer_id_; }

 private:
  std::string layer_id_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ModelValidationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ChecksumError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class TruncationError : public Error {
 public:
  using Error::Error;
};

class SizeMismatchError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t epoch, const std::string& what)
      : Error("diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key.empty() ? what : "config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace uatlas
