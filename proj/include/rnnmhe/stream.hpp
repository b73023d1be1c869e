#pragma once

#include <optional>

#include "rnnmhe/model.hpp"

namespace rnnmhe {

/// Incremental source of time-indexed samples. Implementations may be
/// unbounded (a simulated plant) or backed by a file.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  /// Next sample, or nullopt at the end of the stream.
  virtual std::optional<IOSample> next() = 0;
};

}  // namespace rnnmhe
