#include "fepr/env/track.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "fepr/errors.hpp"

namespace fepr::env {

double Vec2::norm() const { return std::hypot(x, y); }

bool Tile::contains(Vec2 p) const {
  // Crossing-number test; robust for the mildly non-convex quads on tight bends.
  bool inside = false;
  for (std::size_t i = 0, j = corners.size() - 1; i < corners.size(); j = i++) {
    const Vec2 a = corners[i];
    const Vec2 b = corners[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

Vec2 Track::tangent(int k) const {
  const int n = size();
  const Vec2 d = centerline[static_cast<std::size_t>((k + 1) % n)] - centerline[static_cast<std::size_t>(k % n)];
  const double len = d.norm();
  return len > 0 ? d * (1.0 / len) : Vec2{1.0, 0.0};
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, int attempt) {
  if (attempt == 0) return seed;
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(attempt);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Vec2 catmull_rom(Vec2 p0, Vec2 p1, Vec2 p2, Vec2 p3, double t) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  return (p1 * 2.0 + (p2 - p0) * t + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2 + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * t3) *
         0.5;
}

// Resamples a closed polyline into n points equally spaced by arc length.
std::vector<Vec2> resample_closed(const std::vector<Vec2>& dense, int n, double& total_length) {
  std::vector<double> cumulative(dense.size() + 1, 0.0);
  for (std::size_t i = 0; i < dense.size(); ++i) {
    cumulative[i + 1] = cumulative[i] + (dense[(i + 1) % dense.size()] - dense[i]).norm();
  }
  total_length = cumulative.back();
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(n));
  std::size_t seg = 0;
  for (int k = 0; k < n; ++k) {
    const double s = total_length * k / n;
    while (seg + 1 < cumulative.size() - 1 && cumulative[seg + 1] <= s) ++seg;
    const double span = cumulative[seg + 1] - cumulative[seg];
    const double t = span > 0 ? (s - cumulative[seg]) / span : 0.0;
    const Vec2 a = dense[seg];
    const Vec2 b = dense[(seg + 1) % dense.size()];
    out.push_back(a + (b - a) * t);
  }
  return out;
}

Track build_tiles(std::vector<Vec2> centerline, double half_width, std::uint64_t seed) {
  Track track;
  track.centerline = std::move(centerline);
  track.half_width = half_width;
  track.seed = seed;
  const int n = static_cast<int>(track.centerline.size());
  std::vector<Vec2> left(static_cast<std::size_t>(n));
  std::vector<Vec2> right(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const Vec2 prev = track.centerline[static_cast<std::size_t>((k + n - 1) % n)];
    const Vec2 next = track.centerline[static_cast<std::size_t>((k + 1) % n)];
    Vec2 t = next - prev;
    t = t * (1.0 / t.norm());
    const Vec2 normal{-t.y, t.x};
    left[static_cast<std::size_t>(k)] = track.centerline[static_cast<std::size_t>(k)] + normal * half_width;
    right[static_cast<std::size_t>(k)] = track.centerline[static_cast<std::size_t>(k)] - normal * half_width;
  }
  track.bounds.min = {1e300, 1e300};
  track.bounds.max = {-1e300, -1e300};
  for (int k = 0; k < n; ++k) {
    const auto a = static_cast<std::size_t>(k);
    const auto b = static_cast<std::size_t>((k + 1) % n);
    Tile tile;
    tile.corners = {left[a], right[a], right[b], left[b]};
    for (const Vec2& c : tile.corners) {
      track.bounds.min = {std::min(track.bounds.min.x, c.x), std::min(track.bounds.min.y, c.y)};
      track.bounds.max = {std::max(track.bounds.max.x, c.x), std::max(track.bounds.max.y, c.y)};
    }
    track.tiles.push_back(tile);
  }
  return track;
}

Track random_track(std::uint64_t seed, const TrackConfig& config) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> radius(config.min_radius, config.max_radius);
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  const int m = config.control_points;
  std::vector<Vec2> control;
  for (int i = 0; i < m; ++i) {
    const double angle = 2.0 * std::numbers::pi * (i + jitter(rng)) / m;
    const double r = radius(rng);
    control.push_back({r * std::cos(angle), r * std::sin(angle)});
  }
  constexpr int kSamplesPerSegment = 64;
  std::vector<Vec2> dense;
  for (int i = 0; i < m; ++i) {
    const Vec2 p0 = control[static_cast<std::size_t>((i + m - 1) % m)];
    const Vec2 p1 = control[static_cast<std::size_t>(i)];
    const Vec2 p2 = control[static_cast<std::size_t>((i + 1) % m)];
    const Vec2 p3 = control[static_cast<std::size_t>((i + 2) % m)];
    for (int s = 0; s < kSamplesPerSegment; ++s) dense.push_back(catmull_rom(p0, p1, p2, p3, s / double(kSamplesPerSegment)));
  }
  double length = 0.0;
  resample_closed(dense, 1, length);
  const int n = std::clamp(static_cast<int>(std::lround(length / config.tile_length)), config.min_tiles, config.max_tiles);
  return build_tiles(resample_closed(dense, n, length), config.road_half_width, seed);
}

Track circle_track(const TrackConfig& config, std::uint64_t seed) {
  const int n = config.circle_tiles;
  const double r = n * config.tile_length / (2.0 * std::numbers::pi);
  std::vector<Vec2> points;
  for (int k = 0; k < n; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / n;
    points.push_back({r * std::cos(angle), r * std::sin(angle)});
  }
  return build_tiles(std::move(points), config.road_half_width, seed);
}

}  // namespace

bool track_is_valid(const Track& track, const TrackConfig& config) {
  const int n = track.size();
  if (n < 3) return false;
  const double clearance = 2.0 * track.half_width + config.tile_length;
  const int window = static_cast<int>(std::ceil(1.5 * clearance / config.tile_length));
  const double max_turn = config.tile_length / (1.5 * track.half_width);
  for (int i = 0; i < n; ++i) {
    const Vec2 a = track.tangent((i + n - 1) % n);
    const Vec2 b = track.tangent(i);
    if (std::atan2(a.cross(b), a.dot(b)) > max_turn || std::atan2(a.cross(b), a.dot(b)) < -max_turn) return false;
    for (int j = i + 1; j < n; ++j) {
      const int cyclic = std::min(j - i, n - (j - i));
      if (cyclic <= window) continue;
      if ((track.centerline[static_cast<std::size_t>(i)] - track.centerline[static_cast<std::size_t>(j)]).norm() <
          clearance) {
        return false;
      }
    }
  }
  return true;
}

Track generate_track(std::uint64_t seed, const TrackConfig& config) {
  if (config.mode == TrackConfig::Mode::circle) {
    if (config.circle_tiles < 16) throw ConfigError("circle track needs at least 16 tiles");
    return circle_track(config, seed);
  }
  if (config.min_tiles < 16 || config.max_tiles < config.min_tiles) {
    throw ConfigError("track tile bounds must satisfy 16 <= min_tiles <= max_tiles");
  }
  for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
    Track track = random_track(derive_seed(seed, attempt), config);
    if (track_is_valid(track, config)) return track;
  }
  throw std::runtime_error("could not generate a valid track from seed " + std::to_string(seed) + " after " +
                           std::to_string(config.max_retries + 1) + " attempts");
}

}  // namespace fepr::env
