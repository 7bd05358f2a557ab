#pragma once

#include <cstdint>
#include <random>

#include "fepr/env/car_racing.hpp"

namespace fepr::env {

// Pure-pursuit controller that reads the simulator's true state. Used to produce
// demonstration runs and to drive the environment tests around full laps.
struct DriverConfig {
  int lookahead_tiles = 3;
  double target_speed = 1.0;
  double epsilon = 0.0;  // probability of a uniformly random action instead
};

class ScriptedDriver {
 public:
  explicit ScriptedDriver(DriverConfig config = {}, std::uint64_t seed = 0) : config_(config), rng_(seed) {}

  int act(const CarRacing& env);

 private:
  DriverConfig config_;
  std::mt19937_64 rng_;
};

int nearest_tile(const Track& track, Vec2 p);

}  // namespace fepr::env
