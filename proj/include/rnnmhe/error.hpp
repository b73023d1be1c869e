#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rnnmhe {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector or matrix sizes that disagree with a ModelSpec or with each other.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value produced while simulating or differentiating a model.
/// `step()` is the index of the failing time step, or npos when the failure
/// is not tied to a step.
class NumericalError : public Error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  explicit NumericalError(const std::string& what, std::size_t step = npos)
      : Error(what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Invalid configuration. `field()` holds a dotted path such as "mhe.horizon".
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Plant state left its validity domain (H2 <= 0 or T2 <= 0).
class PlantDomainError : public Error {
 public:
  using Error::Error;
};

/// A sample stream delivered non-contiguous time indices.
class StreamGapError : public Error {
 public:
  StreamGapError(const std::string& what, std::size_t position)
      : Error(what), position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Missing or corrupt artifact on disk.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace rnnmhe
