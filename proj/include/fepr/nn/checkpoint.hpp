#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fepr/nn/layers.hpp"

namespace fepr::nn {

// On-disk layout (all integers u32 little-endian):
//   "FEPR" | version | { name_len | name (UTF-8) | rank | dims[rank] | f32 payload }*
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::string& bytes);

NamedTensors snapshot(const StateRefs<float>& state);

// Copies tensors whose names appear in `state`; every entry of `state` must be present
// with a matching shape unless allow_missing is set.
void restore(const NamedTensors& tensors, const StateRefs<float>& state, bool allow_missing = false);

bool has_prefix(const NamedTensors& tensors, const std::string& prefix);

}  // namespace fepr::nn
