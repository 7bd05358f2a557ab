#pragma once

#include <array>
#include <memory>
#include <vector>

#include "fepr/env/car_racing.hpp"
#include "fepr/nn/tensor.hpp"

namespace fepr::data {

inline constexpr int kObsSide = 42;
inline constexpr int kObsSize = kObsSide * kObsSide;
inline constexpr int kStackSize = 8;

// Crop geometry applied before pooling: the HUD rows and a symmetric side margin go.
inline constexpr int kCropBottom = 12;
inline constexpr int kCropSide = 6;

// 42x42 grayscale, row-major, values in [0, 1].
struct Observation {
  std::array<float, kObsSize> values{};

  float at(int row, int col) const { return values[static_cast<std::size_t>(row * kObsSide + col)]; }
  bool operator==(const Observation&) const = default;
};

using ObservationPtr = std::shared_ptr<const Observation>;

// Crop to 84x84, BT.601 luma, 2x2 mean pool, scale to [0, 1].
Observation preprocess(const env::Frame& frame);
// Raw-byte variant; throws std::invalid_argument unless rgb holds 96*96*3 bytes.
Observation preprocess(const std::vector<std::uint8_t>& rgb);

// Eight observations, index 0 oldest and index 7 newest. Frames are shared between
// consecutive stacks, so replaying stacks costs one observation per step.
class ObservationStack {
 public:
  ObservationStack() = default;
  // Episode start: the first observation repeated eight times.
  static ObservationStack filled(ObservationPtr first);

  // Drops the oldest frame and appends obs as the newest.
  ObservationStack pushed(ObservationPtr obs) const;

  const Observation& frame(int i) const { return *frames_.at(static_cast<std::size_t>(i)); }
  const ObservationPtr& shared_frame(int i) const { return frames_.at(static_cast<std::size_t>(i)); }
  const Observation& newest() const { return *frames_.back(); }
  bool valid() const;

  // Writes kStackSize * kObsSize floats in channel order oldest..newest.
  void copy_to(float* dst) const;

 private:
  std::array<ObservationPtr, kStackSize> frames_{};
};

// Packs stacks into an (B, 8, 42, 42) tensor; channel c of sample b is frame(c).
nn::Tensor<float> stack_batch(const std::vector<const ObservationStack*>& stacks);
nn::Tensor<float> stack_tensor(const ObservationStack& stack);

// Sliding windows of eight consecutive observations: n observations give n - 7 stacks.
std::vector<ObservationStack> sliding_stacks(const std::vector<ObservationPtr>& observations);

}  // namespace fepr::data
