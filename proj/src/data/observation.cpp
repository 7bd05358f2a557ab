#include "fepr/data/observation.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>

#include "fepr/errors.hpp"

namespace fepr::data {

namespace {

constexpr int kFrameSide = 96;
constexpr int kCropped = kFrameSide - kCropBottom;
static_assert(kCropped == 2 * kObsSide && kFrameSide - 2 * kCropSide == 2 * kObsSide);

double luma(const std::uint8_t* p) { return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]; }

}  // namespace

Observation preprocess(const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(kFrameSide * kFrameSide * 3)) {
    throw std::invalid_argument("preprocess expects a 96x96x3 frame, got " + std::to_string(rgb.size()) + " bytes");
  }
  Observation obs;
  for (int r = 0; r < kObsSide; ++r) {
    for (int c = 0; c < kObsSide; ++c) {
      double sum = 0.0;
      for (int dr = 0; dr < 2; ++dr) {
        for (int dc = 0; dc < 2; ++dc) {
          const int row = 2 * r + dr;
          const int col = kCropSide + 2 * c + dc;
          sum += luma(rgb.data() + (static_cast<std::size_t>(row) * kFrameSide + col) * 3);
        }
      }
      obs.values[static_cast<std::size_t>(r * kObsSide + c)] = static_cast<float>(std::clamp(sum / (4.0 * 255.0), 0.0, 1.0));
    }
  }
  return obs;
}

Observation preprocess(const env::Frame& frame) { return preprocess(frame.bytes()); }

ObservationStack ObservationStack::filled(ObservationPtr first) {
  if (!first) throw ContractError("ObservationStack::filled needs an observation");
  ObservationStack s;
  s.frames_.fill(first);
  return s;
}

ObservationStack ObservationStack::pushed(ObservationPtr obs) const {
  if (!obs) throw ContractError("ObservationStack::pushed needs an observation");
  if (!valid()) throw ContractError("push onto an empty ObservationStack; start with filled()");
  ObservationStack s;
  std::copy(frames_.begin() + 1, frames_.end(), s.frames_.begin());
  s.frames_.back() = std::move(obs);
  return s;
}

bool ObservationStack::valid() const {
  return std::all_of(frames_.begin(), frames_.end(), [](const ObservationPtr& p) { return p != nullptr; });
}

void ObservationStack::copy_to(float* dst) const {
  for (const ObservationPtr& f : frames_) {
    std::memcpy(dst, f->values.data(), sizeof(float) * kObsSize);
    dst += kObsSize;
  }
}

nn::Tensor<float> stack_batch(const std::vector<const ObservationStack*>& stacks) {
  if (stacks.empty()) throw ConfigError("stack_batch needs at least one stack");
  nn::Tensor<float> out(nn::Shape{static_cast<int>(stacks.size()), kStackSize, kObsSide, kObsSide});
  float* dst = out.data();
  for (const ObservationStack* s : stacks) {
    if (!s->valid()) throw ContractError("stack_batch: incomplete stack");
    s->copy_to(dst);
    dst += kStackSize * kObsSize;
  }
  return out;
}

nn::Tensor<float> stack_tensor(const ObservationStack& stack) { return stack_batch({&stack}); }

std::vector<ObservationStack> sliding_stacks(const std::vector<ObservationPtr>& observations) {
  std::vector<ObservationStack> out;
  if (observations.size() < static_cast<std::size_t>(kStackSize)) return out;
  ObservationStack s = ObservationStack::filled(observations[0]);
  for (int i = 1; i < kStackSize; ++i) s = s.pushed(observations[static_cast<std::size_t>(i)]);
  out.push_back(s);
  for (std::size_t i = kStackSize; i < observations.size(); ++i) {
    s = s.pushed(observations[i]);
    out.push_back(s);
  }
  return out;
}

}  // namespace fepr::data
