#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "fepr/data/observation.hpp"

namespace fepr::data {

inline constexpr std::uint32_t kDemoVersion = 1;

// One step of a recording: the observation the action was chosen on, the action, and
// the reward/done that followed it. Pixels are value * 255 rounded.
struct DemoRecord {
  std::uint8_t action = 0;
  float reward = 0.f;
  bool done = false;
  std::array<std::uint8_t, kObsSize> pixels{};

  bool operator==(const DemoRecord&) const = default;
};

struct Demo {
  std::uint32_t n_screens = kStackSize;
  std::vector<DemoRecord> records;

  bool operator==(const Demo&) const = default;
};

std::array<std::uint8_t, kObsSize> quantize(const Observation& obs);
Observation dequantize(const std::array<std::uint8_t, kObsSize>& pixels);

// "FEPD", u32 version, u32 n_screens, then per record: u8 action, f32 reward,
// u8 done, 1764 u8 pixels. Little-endian.
std::string encode_demo(const Demo& demo);
Demo decode_demo(const std::string& bytes);  // throws ParseError with the byte offset
void write_demo(const std::string& path, const Demo& demo);
Demo read_demo(const std::string& path);

// Streams records to disk as they arrive, so a session can be stopped at any time.
class DemoWriter {
 public:
  DemoWriter(const std::string& path, std::uint32_t n_screens = kStackSize);

  void append(const DemoRecord& record);
  std::size_t count() const { return count_; }
  const std::string& path() const { return path_; }
  void close();

 private:
  std::string path_;
  std::ofstream out_;
  std::size_t count_ = 0;
};

}  // namespace fepr::data
