#pragma once

#include <array>
#include <string_view>

namespace fepr::env {

inline constexpr int kNumActions = 11;

struct Controls {
  float steer = 0.f;       // [-1, 1], negative is left
  float accelerate = 0.f;  // [0, 1]
  float brake = 0.f;       // [0, 1]

  bool operator==(const Controls&) const = default;
};

struct ActionEntry {
  std::string_view label;
  Controls controls;
};

inline constexpr std::array<ActionEntry, kNumActions> kActionTable{{
    {"do nothing", {0.f, 0.f, 0.f}},
    {"steer sharp left", {-1.f, 0.f, 0.f}},
    {"steer left", {-0.5f, 0.f, 0.f}},
    {"steer sharp right", {1.f, 0.f, 0.f}},
    {"steer right", {0.5f, 0.f, 0.f}},
    {"accelerate 100%", {0.f, 1.f, 0.f}},
    {"accelerate 50%", {0.f, 0.5f, 0.f}},
    {"accelerate 25%", {0.f, 0.25f, 0.f}},
    {"brake 100%", {0.f, 0.f, 1.f}},
    {"brake 50%", {0.f, 0.f, 0.5f}},
    {"brake 25%", {0.f, 0.f, 0.25f}},
}};

// Throws std::out_of_range for indices outside 0..10.
Controls decode_action(int index);

}  // namespace fepr::env
