#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fepr/env/actions.hpp"
#include "fepr/env/config.hpp"
#include "fepr/env/track.hpp"

namespace fepr::env {

// 96x96 RGB, row-major, 3 bytes per pixel. The bottom kHudRows rows hold the HUD strip.
class Frame {
 public:
  static constexpr int kWidth = 96;
  static constexpr int kHeight = 96;
  static constexpr int kHudRows = 12;
  static constexpr int kBytes = kWidth * kHeight * 3;

  Frame() : rgb_(kBytes, 0) {}
  explicit Frame(std::vector<std::uint8_t> rgb);

  std::uint8_t* pixel(int row, int col) { return rgb_.data() + (static_cast<std::size_t>(row) * kWidth + col) * 3; }
  const std::uint8_t* pixel(int row, int col) const {
    return rgb_.data() + (static_cast<std::size_t>(row) * kWidth + col) * 3;
  }
  const std::vector<std::uint8_t>& bytes() const { return rgb_; }

  bool operator==(const Frame&) const = default;

 private:
  std::vector<std::uint8_t> rgb_;
};

struct Rgb {
  std::uint8_t r, g, b;
  bool operator==(const Rgb&) const = default;
};

namespace palette {
inline constexpr Rgb kGrassDark{0, 28, 0};
inline constexpr Rgb kGrassLight{0, 44, 0};
inline constexpr Rgb kRoadEven{236, 236, 236};
inline constexpr Rgb kRoadOdd{222, 222, 222};
inline constexpr Rgb kCar{255, 0, 0};
inline constexpr Rgb kHudBackground{0, 0, 0};
inline constexpr Rgb kHudBar{255, 255, 255};
}  // namespace palette

struct CarState {
  Vec2 position;
  double heading = 0.0;      // radians, counter-clockwise from +x
  double speed = 0.0;        // world units per step, >= 0
  double wheel_angle = 0.0;  // radians, positive turns right
};

struct StepInfo {
  int tiles_visited = 0;
  int step_index = 0;  // number of steps taken so far in this episode
  bool on_road = false;
  bool out_of_bounds = false;
  bool lap_complete = false;
};

struct StepResult {
  Frame frame;
  float reward = 0.f;
  bool done = false;
  StepInfo info;
};

// Camera geometry shared by the renderer and its tests: the car sits at (kCameraRow,
// kCameraCol) in continuous pixel coordinates with its heading pointing up the screen.
inline constexpr double kCameraRow = 60.0;
inline constexpr double kCameraCol = 48.0;
inline constexpr double kCarWidth = 1.6;   // world units
inline constexpr double kCarLength = 3.2;

// Top-down racing simulator. Reward per step is 1000/N for each newly visited tile minus
// 0.1. The start tile is marked visited at reset; its 1000/N share is paid when the lap
// completes, so a full lap's tile rewards sum to 1000. An episode ends when every tile
// is visited, the car leaves the playfield, or max_steps steps have been taken.
class CarRacing {
 public:
  explicit CarRacing(EnvConfig config);

  Frame reset(std::uint64_t seed);
  StepResult step(int action_index);
  Frame render() const;

  const EnvConfig& config() const noexcept { return config_; }
  const Track& track() const noexcept { return track_; }
  const CarState& car() const noexcept { return car_; }
  bool done() const noexcept { return done_; }
  int step_index() const noexcept { return steps_; }
  int tiles_visited() const noexcept { return visited_count_; }
  double cumulative_reward() const noexcept { return cumulative_reward_; }
  bool on_road() const;
  bool out_of_bounds() const;
  // Maps continuous pixel coordinates to world coordinates for the current car pose.
  Vec2 pixel_to_world(double row, double col) const;

  // Places the car directly; intended for tests and tooling. Does not touch tile state.
  void place_car(const CarState& car);

 private:
  StepInfo info() const;

  EnvConfig config_;
  Track track_;
  CarState car_;
  int steps_ = 0;
  int visited_count_ = 0;
  double cumulative_reward_ = 0.0;
  bool done_ = false;
  bool ready_ = false;
  Vec2 playfield_center_;
  double playfield_half_extent_ = 0.0;
};

}  // namespace fepr::env
