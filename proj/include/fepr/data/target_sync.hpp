#pragma once

#include <cstdint>

#include "fepr/errors.hpp"
#include "fepr/nn/layers.hpp"

namespace fepr::data {

// Counts environment steps and copies online weights into the target network every
// `period` steps. Between copies the target is left untouched.
class TargetSync {
 public:
  explicit TargetSync(int period = 50) : period_(period) {
    if (period <= 0) throw ConfigError("target sync period must be positive");
  }

  // Advances the counter; true when the new count is a multiple of the period.
  bool tick() { return ++steps_ % period_ == 0; }

  template <typename T>
  bool step(const nn::StateRefs<T>& online, const nn::StateRefs<T>& target) {
    if (!tick()) return false;
    nn::copy_state(online, target);
    return true;
  }

  std::int64_t steps() const { return steps_; }
  int period() const { return period_; }

 private:
  int period_;
  std::int64_t steps_ = 0;
};

}  // namespace fepr::data
