#include "fepr/env/config.hpp"

#include <nlohmann/json.hpp>

#include "fepr/errors.hpp"

namespace fepr::env {

void to_json(nlohmann::json& j, const TrackConfig::Mode& m) { j = m == TrackConfig::Mode::circle ? "circle" : "random"; }

void from_json(const nlohmann::json& j, TrackConfig::Mode& m) {
  const std::string s = j.get<std::string>();
  if (s == "circle") {
    m = TrackConfig::Mode::circle;
  } else if (s == "random") {
    m = TrackConfig::Mode::random;
  } else {
    throw ConfigError("unknown track mode '" + s + "' (random or circle)");
  }
}

void to_json(nlohmann::json& j, const TrackConfig& c) {
  j = {{"mode", c.mode},
       {"min_tiles", c.min_tiles},
       {"max_tiles", c.max_tiles},
       {"circle_tiles", c.circle_tiles},
       {"control_points", c.control_points},
       {"min_radius", c.min_radius},
       {"max_radius", c.max_radius},
       {"tile_length", c.tile_length},
       {"road_half_width", c.road_half_width},
       {"max_retries", c.max_retries}};
}

void from_json(const nlohmann::json& j, TrackConfig& c) {
  const TrackConfig d;
  c.mode = j.value("mode", d.mode);
  c.min_tiles = j.value("min_tiles", d.min_tiles);
  c.max_tiles = j.value("max_tiles", d.max_tiles);
  c.circle_tiles = j.value("circle_tiles", d.circle_tiles);
  c.control_points = j.value("control_points", d.control_points);
  c.min_radius = j.value("min_radius", d.min_radius);
  c.max_radius = j.value("max_radius", d.max_radius);
  c.tile_length = j.value("tile_length", d.tile_length);
  c.road_half_width = j.value("road_half_width", d.road_half_width);
  c.max_retries = j.value("max_retries", d.max_retries);
}

void to_json(nlohmann::json& j, const PhysicsConfig& c) {
  j = {{"accel_gain", c.accel_gain}, {"brake_gain", c.brake_gain}, {"road_drag", c.road_drag},
       {"grass_drag", c.grass_drag}, {"max_speed", c.max_speed},   {"wheelbase", c.wheelbase},
       {"max_wheel_angle", c.max_wheel_angle}};
}

void from_json(const nlohmann::json& j, PhysicsConfig& c) {
  const PhysicsConfig d;
  c.accel_gain = j.value("accel_gain", d.accel_gain);
  c.brake_gain = j.value("brake_gain", d.brake_gain);
  c.road_drag = j.value("road_drag", d.road_drag);
  c.grass_drag = j.value("grass_drag", d.grass_drag);
  c.max_speed = j.value("max_speed", d.max_speed);
  c.wheelbase = j.value("wheelbase", d.wheelbase);
  c.max_wheel_angle = j.value("max_wheel_angle", d.max_wheel_angle);
}

void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = {{"track", c.track},
       {"physics", c.physics},
       {"max_steps", c.max_steps},
       {"seed", c.seed},
       {"pixels_per_unit", c.pixels_per_unit}};
}

void from_json(const nlohmann::json& j, EnvConfig& c) {
  const EnvConfig d;
  c.track = j.value("track", d.track);
  c.physics = j.value("physics", d.physics);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.seed = j.value("seed", d.seed);
  c.pixels_per_unit = j.value("pixels_per_unit", d.pixels_per_unit);
}

void validate(const EnvConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("env config: ") + what);
  };
  require(c.max_steps > 0, "max_steps must be positive");
  require(c.track.min_tiles >= 16, "min_tiles must be >= 16");
  require(c.track.max_tiles >= c.track.min_tiles, "max_tiles must be >= min_tiles");
  require(c.track.circle_tiles >= 16, "circle_tiles must be >= 16");
  require(c.track.control_points >= 4, "control_points must be >= 4");
  require(c.track.min_radius > 0 && c.track.max_radius >= c.track.min_radius, "invalid radius range");
  require(c.track.tile_length > 0 && c.track.road_half_width > 0, "tile_length and road_half_width must be positive");
  require(c.track.max_retries >= 0, "max_retries must be >= 0");
  require(c.physics.max_speed > 0 && c.physics.wheelbase > 0, "max_speed and wheelbase must be positive");
  require(c.physics.accel_gain >= 0 && c.physics.brake_gain >= 0, "gains must be non-negative");
  require(c.physics.road_drag >= 0 && c.physics.road_drag < 1 && c.physics.grass_drag >= 0 &&
              c.physics.grass_drag < 1,
          "drag must lie in [0, 1)");
  require(c.physics.max_wheel_angle > 0 && c.physics.max_wheel_angle < 1.5, "max_wheel_angle must lie in (0, 1.5)");
  require(c.pixels_per_unit > 0, "pixels_per_unit must be positive");
}

}  // namespace fepr::env
