#pragma once

#include <cstdint>

#include <nlohmann/json_fwd.hpp>

namespace fepr::env {

struct TrackConfig {
  enum class Mode { random, circle };
  Mode mode = Mode::random;
  int min_tiles = 150;
  int max_tiles = 280;
  int circle_tiles = 60;  // exact tile count in circle mode
  int control_points = 12;
  double min_radius = 55.0;
  double max_radius = 110.0;
  double tile_length = 3.0;
  double road_half_width = 3.5;
  int max_retries = 32;
};

struct PhysicsConfig {
  double accel_gain = 0.025;  // speed gained per step at full throttle
  double brake_gain = 0.05;
  double road_drag = 0.02;    // fraction of speed lost per step on the road
  double grass_drag = 0.08;
  double max_speed = 1.5;
  double wheelbase = 2.0;
  double max_wheel_angle = 0.42;  // radians at |steer| = 1
};

struct EnvConfig {
  TrackConfig track;
  PhysicsConfig physics;
  int max_steps = 1000;
  std::uint64_t seed = 0;
  double pixels_per_unit = 3.0;
};

void to_json(nlohmann::json& j, const TrackConfig& c);
void from_json(const nlohmann::json& j, TrackConfig& c);
void to_json(nlohmann::json& j, const PhysicsConfig& c);
void from_json(const nlohmann::json& j, PhysicsConfig& c);
void to_json(nlohmann::json& j, const EnvConfig& c);
void from_json(const nlohmann::json& j, EnvConfig& c);

// Throws ConfigError on out-of-range values.
void validate(const EnvConfig& config);

}  // namespace fepr::env
