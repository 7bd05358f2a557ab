#include "fepr/env/car_racing.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "fepr/errors.hpp"

namespace fepr::env {

Controls decode_action(int index) {
  if (index < 0 || index >= kNumActions) {
    throw std::out_of_range("action index " + std::to_string(index) + " outside 0.." + std::to_string(kNumActions - 1));
  }
  return kActionTable[static_cast<std::size_t>(index)].controls;
}

Frame::Frame(std::vector<std::uint8_t> rgb) : rgb_(std::move(rgb)) {
  if (rgb_.size() != static_cast<std::size_t>(kBytes)) {
    throw std::invalid_argument("frame must hold exactly 96x96x3 bytes, got " + std::to_string(rgb_.size()));
  }
}

CarRacing::CarRacing(EnvConfig config) : config_(std::move(config)) { validate(config_); }

Frame CarRacing::reset(std::uint64_t seed) {
  track_ = generate_track(seed, config_.track);
  const Vec2 a = track_.centerline[0];
  const Vec2 b = track_.centerline[1];
  const Vec2 dir = b - a;
  car_ = CarState{};
  car_.position = (a + b) * 0.5;
  car_.heading = std::atan2(dir.y, dir.x);
  track_.tiles[0].visited = true;
  visited_count_ = 1;
  steps_ = 0;
  cumulative_reward_ = 0.0;
  done_ = false;
  ready_ = true;
  const Bounds& box = track_.bounds;
  playfield_center_ = (box.min + box.max) * 0.5;
  playfield_half_extent_ = std::max(box.max.x - box.min.x, box.max.y - box.min.y);
  return render();
}

bool CarRacing::on_road() const {
  return std::any_of(track_.tiles.begin(), track_.tiles.end(),
                     [&](const Tile& t) { return t.contains(car_.position); });
}

bool CarRacing::out_of_bounds() const {
  const Vec2 d = car_.position - playfield_center_;
  return std::abs(d.x) > playfield_half_extent_ || std::abs(d.y) > playfield_half_extent_;
}

void CarRacing::place_car(const CarState& car) {
  if (!ready_) throw ContractError("place_car() before reset()");
  car_ = car;
}

StepInfo CarRacing::info() const {
  StepInfo info;
  info.tiles_visited = visited_count_;
  info.step_index = steps_;
  info.on_road = on_road();
  info.out_of_bounds = out_of_bounds();
  info.lap_complete = visited_count_ == track_.size();
  return info;
}

StepResult CarRacing::step(int action_index) {
  if (!ready_) throw ContractError("step() called before reset()");
  if (done_) throw ContractError("step() called on a finished episode; call reset()");
  const Controls controls = decode_action(action_index);
  const PhysicsConfig& phys = config_.physics;

  const double drag = on_road() ? phys.road_drag : phys.grass_drag;
  car_.wheel_angle = controls.steer * phys.max_wheel_angle;
  car_.speed += controls.accelerate * phys.accel_gain - controls.brake * phys.brake_gain - car_.speed * drag;
  car_.speed = std::clamp(car_.speed, 0.0, phys.max_speed);
  car_.heading -= car_.speed * std::tan(car_.wheel_angle) / phys.wheelbase;
  car_.position = car_.position + Vec2{std::cos(car_.heading), std::sin(car_.heading)} * car_.speed;
  ++steps_;

  const int n = track_.size();
  int newly_visited = 0;
  for (Tile& tile : track_.tiles) {
    if (!tile.visited && tile.contains(car_.position)) {
      tile.visited = true;
      ++newly_visited;
    }
  }
  visited_count_ += newly_visited;
  const bool lap_complete = visited_count_ == n;
  const int paid_tiles = newly_visited + (lap_complete ? 1 : 0);

  StepResult result;
  result.reward = static_cast<float>(paid_tiles * 1000.0 / n - 0.1);
  cumulative_reward_ += result.reward;
  done_ = lap_complete || out_of_bounds() || steps_ >= config_.max_steps;
  result.done = done_;
  result.info = info();
  result.frame = render();
  return result;
}

Vec2 CarRacing::pixel_to_world(double row, double col) const {
  const double s = config_.pixels_per_unit;
  const double forward = (kCameraRow - row) / s;
  const double left = (kCameraCol - col) / s;
  const Vec2 f{std::cos(car_.heading), std::sin(car_.heading)};
  const Vec2 l{-f.y, f.x};
  return car_.position + f * forward + l * left;
}

namespace {

void put(Frame& frame, int row, int col, Rgb c) {
  std::uint8_t* p = frame.pixel(row, col);
  p[0] = c.r;
  p[1] = c.g;
  p[2] = c.b;
}

bool inside_quad(const std::array<Vec2, 4>& q, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = 3; i < 4; j = i++) {
    if ((q[i].y > y) != (q[j].y > y)) {
      const double x_cross = q[i].x + (y - q[i].y) * (q[j].x - q[i].x) / (q[j].y - q[i].y);
      if (x < x_cross) inside = !inside;
    }
  }
  return inside;
}

}  // namespace

Frame CarRacing::render() const {
  if (!ready_) throw ContractError("render() before reset()");
  constexpr int kPlayRows = Frame::kHeight - Frame::kHudRows;
  constexpr double kChecker = 4.0;
  Frame frame;
  const double s = config_.pixels_per_unit;
  const Vec2 f{std::cos(car_.heading), std::sin(car_.heading)};
  const Vec2 l{-f.y, f.x};

  // Grass checkerboard in world coordinates, so motion is visible off the road.
  for (int row = 0; row < kPlayRows; ++row) {
    for (int col = 0; col < Frame::kWidth; ++col) {
      const Vec2 w = car_.position + f * ((kCameraRow - row - 0.5) / s) + l * ((kCameraCol - col - 0.5) / s);
      const auto cell = static_cast<long long>(std::floor(w.x / kChecker)) + static_cast<long long>(std::floor(w.y / kChecker));
      put(frame, row, col, (cell & 1) ? palette::kGrassLight : palette::kGrassDark);
    }
  }

  // Road tiles rasterized in screen space (x = column, y = row).
  for (int k = 0; k < track_.size(); ++k) {
    const Tile& tile = track_.tiles[static_cast<std::size_t>(k)];
    std::array<Vec2, 4> q;
    double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
    for (std::size_t i = 0; i < 4; ++i) {
      const Vec2 rel = tile.corners[i] - car_.position;
      q[i] = {kCameraCol - rel.dot(l) * s, kCameraRow - rel.dot(f) * s};
      min_x = std::min(min_x, q[i].x);
      max_x = std::max(max_x, q[i].x);
      min_y = std::min(min_y, q[i].y);
      max_y = std::max(max_y, q[i].y);
    }
    const int c0 = std::max(0, static_cast<int>(std::floor(min_x)));
    const int c1 = std::min(Frame::kWidth - 1, static_cast<int>(std::ceil(max_x)));
    const int r0 = std::max(0, static_cast<int>(std::floor(min_y)));
    const int r1 = std::min(kPlayRows - 1, static_cast<int>(std::ceil(max_y)));
    if (c0 > c1 || r0 > r1) continue;
    const Rgb color = (k % 2 == 0) ? palette::kRoadEven : palette::kRoadOdd;
    for (int row = r0; row <= r1; ++row) {
      for (int col = c0; col <= c1; ++col) {
        if (inside_quad(q, col + 0.5, row + 0.5)) put(frame, row, col, color);
      }
    }
  }

  // Car: axis-aligned on screen because the camera rotates with it.
  const double half_w = kCarWidth * s / 2.0;
  const double half_l = kCarLength * s / 2.0;
  for (int row = 0; row < kPlayRows; ++row) {
    const double y = row + 0.5;
    if (y < kCameraRow - half_l || y >= kCameraRow + half_l) continue;
    for (int col = 0; col < Frame::kWidth; ++col) {
      const double x = col + 0.5;
      if (x >= kCameraCol - half_w && x < kCameraCol + half_w) put(frame, row, col, palette::kCar);
    }
  }

  // HUD: black strip with a speed bar.
  for (int row = kPlayRows; row < Frame::kHeight; ++row) {
    for (int col = 0; col < Frame::kWidth; ++col) put(frame, row, col, palette::kHudBackground);
  }
  const int bar = static_cast<int>(std::lround(car_.speed / config_.physics.max_speed * (Frame::kWidth - 8)));
  for (int row = kPlayRows + 4; row < kPlayRows + 8; ++row) {
    for (int col = 4; col < 4 + bar; ++col) put(frame, row, col, palette::kHudBar);
  }
  return frame;
}

}  // namespace fepr::env
