#include "fepr/data/demo_file.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <iterator>

#include "fepr/env/actions.hpp"
#include "fepr/errors.hpp"

namespace fepr::data {

static_assert(std::endian::native == std::endian::little, "demo I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'F', 'E', 'P', 'D'};
constexpr std::size_t kRecordBytes = 1 + 4 + 1 + kObsSize;

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_record(std::string& out, const DemoRecord& r) {
  out.push_back(static_cast<char>(r.action));
  char b[4];
  std::memcpy(b, &r.reward, 4);
  out.append(b, 4);
  out.push_back(r.done ? 1 : 0);
  out.append(reinterpret_cast<const char*>(r.pixels.data()), r.pixels.size());
}

}  // namespace

std::array<std::uint8_t, kObsSize> quantize(const Observation& obs) {
  std::array<std::uint8_t, kObsSize> out{};
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float v = std::clamp(obs.values[i], 0.f, 1.f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.f));
  }
  return out;
}

Observation dequantize(const std::array<std::uint8_t, kObsSize>& pixels) {
  Observation obs;
  for (std::size_t i = 0; i < pixels.size(); ++i) obs.values[i] = pixels[i] / 255.f;
  return obs;
}

std::string encode_demo(const Demo& demo) {
  std::string out(kMagic, 4);
  put_u32(out, kDemoVersion);
  put_u32(out, demo.n_screens);
  out.reserve(out.size() + demo.records.size() * kRecordBytes);
  for (const DemoRecord& r : demo.records) put_record(out, r);
  return out;
}

Demo decode_demo(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError("not a demo file (bad magic)", 0);
  if (bytes.size() < 12) throw ParseError("demo header truncated", bytes.size());
  std::uint32_t version, n_screens;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&n_screens, bytes.data() + 8, 4);
  if (version != kDemoVersion) throw ParseError("unsupported demo version " + std::to_string(version), 4);
  if (n_screens == 0) throw ParseError("demo n_screens must be positive", 8);
  Demo demo;
  demo.n_screens = n_screens;
  std::size_t pos = 12;
  const std::size_t body = bytes.size() - pos;
  if (body % kRecordBytes != 0) {
    throw ParseError("demo truncated inside a record", pos + (body / kRecordBytes) * kRecordBytes);
  }
  demo.records.reserve(body / kRecordBytes);
  while (pos < bytes.size()) {
    DemoRecord r;
    r.action = static_cast<std::uint8_t>(bytes[pos]);
    if (r.action >= env::kNumActions) throw ParseError("demo action out of range", pos);
    std::memcpy(&r.reward, bytes.data() + pos + 1, 4);
    if (!std::isfinite(r.reward)) throw ParseError("demo reward not finite", pos + 1);
    const auto done = static_cast<std::uint8_t>(bytes[pos + 5]);
    if (done > 1) throw ParseError("demo done flag must be 0 or 1", pos + 5);
    r.done = done == 1;
    std::memcpy(r.pixels.data(), bytes.data() + pos + 6, kObsSize);
    demo.records.push_back(r);
    pos += kRecordBytes;
  }
  return demo;
}

void write_demo(const std::string& path, const Demo& demo) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open demo file for writing: " + path);
  const std::string bytes = encode_demo(demo);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

Demo read_demo(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open demo file: " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_demo(bytes);
}

DemoWriter::DemoWriter(const std::string& path, std::uint32_t n_screens) : path_(path) {
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot open demo file for writing: " + path);
  std::string header(kMagic, 4);
  put_u32(header, kDemoVersion);
  put_u32(header, n_screens);
  out_.write(header.data(), static_cast<std::streamsize>(header.size()));
  out_.flush();
}

void DemoWriter::append(const DemoRecord& record) {
  if (!out_.is_open()) throw ContractError("DemoWriter::append after close");
  if (record.action >= env::kNumActions) throw std::out_of_range("demo action out of range");
  std::string buf;
  put_record(buf, record);
  out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out_.flush();
  if (!out_) throw std::runtime_error("write failed: " + path_);
  ++count_;
}

void DemoWriter::close() {
  if (out_.is_open()) out_.close();
}

}  // namespace fepr::data
