#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "fepr/env/config.hpp"

namespace fepr::env {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const;
  bool operator==(const Vec2&) const = default;
};

// Road segment between centerline points k and k + 1. Corners run
// left(k), right(k), right(k+1), left(k+1).
struct Tile {
  std::array<Vec2, 4> corners;
  bool visited = false;

  bool contains(Vec2 p) const;
};

struct Bounds {
  Vec2 min;
  Vec2 max;
};

struct Track {
  std::vector<Vec2> centerline;  // one point per tile, closed loop
  std::vector<Tile> tiles;
  double half_width = 0.0;
  Bounds bounds;  // axis-aligned box around all tile corners
  std::uint64_t seed = 0;  // seed the geometry was actually generated from

  int size() const { return static_cast<int>(tiles.size()); }
  Vec2 tangent(int k) const;  // unit direction from point k to point k + 1
};

// Deterministic in (seed, config). Random mode retries with derived seeds when the
// spline self-intersects or turns tighter than the road width allows; throws
// std::runtime_error once max_retries is exhausted.
Track generate_track(std::uint64_t seed, const TrackConfig& config);

// Geometry check used by the generator: non-neighbouring centerline points must be at
// least one road width apart, and consecutive segments must not fold over.
bool track_is_valid(const Track& track, const TrackConfig& config);

}  // namespace fepr::env
