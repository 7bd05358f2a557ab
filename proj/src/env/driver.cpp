#include "fepr/env/driver.hpp"

#include <cmath>
#include <limits>

namespace fepr::env {

int nearest_tile(const Track& track, Vec2 p) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < track.size(); ++k) {
    const double d = (track.centerline[static_cast<std::size_t>(k)] - p).norm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

int ScriptedDriver::act(const CarRacing& env) {
  if (config_.epsilon > 0.0) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng_) < config_.epsilon) {
      std::uniform_int_distribution<int> pick(0, kNumActions - 1);
      return pick(rng_);
    }
  }
  const Track& track = env.track();
  const CarState& car = env.car();
  const int k = nearest_tile(track, car.position);
  const Vec2 target = track.centerline[static_cast<std::size_t>((k + config_.lookahead_tiles) % track.size())];
  const Vec2 to_target = target - car.position;
  const Vec2 forward{std::cos(car.heading), std::sin(car.heading)};
  // positive: target lies to the left
  const double angle = std::atan2(forward.cross(to_target), forward.dot(to_target));

  if (car.speed > 0.05) {
    if (angle > 0.25) return 1;
    if (angle < -0.25) return 3;
    if (angle > 0.06) return 2;
    if (angle < -0.06) return 4;
  }
  if (car.speed > config_.target_speed * 1.2) return 9;
  if (car.speed < config_.target_speed) return 5;
  return 0;
}

}  // namespace fepr::env
