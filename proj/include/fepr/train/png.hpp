#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fepr/env/car_racing.hpp"

namespace fepr::train {

// 8-bit RGB PNG of the frame, in memory.
std::string encode_png(const env::Frame& frame);
// Inverse of encode_png for 96x96 RGB images; throws std::runtime_error otherwise.
env::Frame decode_png(const std::string& bytes);

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

}  // namespace fepr::train
