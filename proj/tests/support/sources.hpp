#pragma once

#include <deque>
#include <map>
#include <optional>
#include <vector>

#include "rnnmhe/model.hpp"
#include "rnnmhe/random.hpp"
#include "rnnmhe/stream.hpp"

namespace testsupport {

using namespace rnnmhe;

/// Replays a fixed list of samples.
class VectorSource : public SampleSource {
 public:
  explicit VectorSource(std::vector<IOSample> samples) : samples_(std::move(samples)) {}
  std::optional<IOSample> next() override {
    if (i_ >= samples_.size()) return std::nullopt;
    return samples_[i_++];
  }

 private:
  std::vector<IOSample> samples_;
  std::size_t i_ = 0;
};

/// A model standing in for the plant: uniform random inputs held for `hold`
/// steps, outputs from the model itself. Keeps the last `keep` states so a
/// matched-twin run can ask for x_{k-N}.
class ModelTwin : public SampleSource {
 public:
  ModelTwin(ParamVector truth, std::uint64_t seed, std::size_t hold = 5, std::size_t keep = 64,
            std::optional<std::size_t> limit = std::nullopt)
      : truth_(std::move(truth)), rng_(seed), hold_(hold), keep_(keep), limit_(limit),
        x_(zero_state(truth_.spec())), u_(truth_.spec().n_u) {}

  std::optional<IOSample> next() override {
    if (limit_ && static_cast<std::size_t>(k_) >= *limit_) return std::nullopt;
    if (k_ % static_cast<std::int64_t>(hold_) == 0) {
      for (double& v : u_) v = uniform(rng_, -1.0, 1.0);
    }
    states_[k_] = x_;
    if (states_.size() > keep_) states_.erase(states_.begin());
    const StepResult r = forward_step(truth_, x_, u_);
    IOSample s{u_, r.y, k_};
    x_ = r.next_state;
    ++k_;
    return s;
  }

  std::optional<ModelState> state_at(std::int64_t t) const {
    auto it = states_.find(t);
    if (it == states_.end()) return std::nullopt;
    return it->second;
  }

 private:
  ParamVector truth_;
  Rng rng_;
  std::size_t hold_, keep_;
  std::optional<std::size_t> limit_;
  ModelState x_;
  std::vector<double> u_;
  std::int64_t k_ = 0;
  std::map<std::int64_t, ModelState> states_;
};

}  // namespace testsupport
