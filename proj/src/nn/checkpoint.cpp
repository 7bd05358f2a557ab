#include "fepr/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <unordered_map>

namespace fepr::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'F', 'E', 'P', 'R'};

void put_u32(std::string& out, std::uint32_t v) {
  char bytes[4];
  std::memcpy(bytes, &v, 4);
  out.append(bytes, 4);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t offset() const { return pos_; }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void floats(float* dst, std::size_t n, const char* what) {
    need(n * 4, what);
    std::memcpy(dst, bytes_.data() + pos_, n * 4);
    pos_ += n * 4;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("checkpoint truncated while reading ") + what, pos_);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const NamedTensors& tensors) {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (const auto& [name, tensor] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (int d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(tensor.data()), tensor.size() * sizeof(float));
  }
  return out;
}

NamedTensors decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.str(4, "magic") != std::string(kMagic, 4)) throw ParseError("not a checkpoint (bad magic)", 0);
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  NamedTensors tensors;
  while (!in.done()) {
    const std::size_t record_start = in.offset();
    const std::uint32_t name_len = in.u32("name length");
    std::string name = in.str(name_len, "name");
    const std::uint32_t rank = in.u32("rank");
    if (rank == 0 || rank > 8) throw ParseError("invalid rank " + std::to_string(rank) + " for " + name, record_start);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = in.u32("dims");
      if (d == 0 || d > (1u << 28)) throw ParseError("invalid dimension in " + name, in.offset() - 4);
      shape.push_back(static_cast<int>(d));
    }
    Tensor<float> tensor(shape);
    in.floats(tensor.data(), tensor.size(), "payload");
    tensors.emplace_back(std::move(name), std::move(tensor));
  }
  return tensors;
}

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_checkpoint(tensors);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

NamedTensors read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

NamedTensors snapshot(const StateRefs<float>& state) {
  NamedTensors out;
  for (const auto& [name, tensor] : state.named()) out.emplace_back(name, *tensor);
  return out;
}

void restore(const NamedTensors& tensors, const StateRefs<float>& state, bool allow_missing) {
  std::unordered_map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, tensor] : tensors) by_name[name] = &tensor;
  for (const auto& [name, target] : state.named()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      if (allow_missing) continue;
      throw ConfigError("checkpoint is missing tensor '" + name + "'");
    }
    if (it->second->shape() != target->shape()) {
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_string(it->second->shape()) +
                        ", expected " + shape_string(target->shape()));
    }
    *target = *it->second;
  }
}

bool has_prefix(const NamedTensors& tensors, const std::string& prefix) {
  for (const auto& entry : tensors) {
    if (entry.first.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

}  // namespace fepr::nn
