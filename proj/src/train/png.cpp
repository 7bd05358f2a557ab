#include "fepr/train/png.hpp"

#include <cstring>
#include <stdexcept>

#include <boost/beast/core/detail/base64.hpp>
#include <png.h>

namespace fepr::train {

namespace {

void write_to_string(png_structp png, png_bytep data, png_size_t length) {
  static_cast<std::string*>(png_get_io_ptr(png))->append(reinterpret_cast<const char*>(data), length);
}

void flush_noop(png_structp) {}

struct ReadCursor {
  const std::string* bytes;
  std::size_t offset;
};

void read_from_string(png_structp png, png_bytep out, png_size_t length) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + length > cur->bytes->size()) png_error(png, "truncated png");
  std::memcpy(out, cur->bytes->data() + cur->offset, length);
  cur->offset += length;
}

}  // namespace

std::string encode_png(const env::Frame& frame) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::string out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png encoding failed");
  }
  png_set_write_fn(png, &out, write_to_string, flush_noop);
  png_set_IHDR(png, info, env::Frame::kWidth, env::Frame::kHeight, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int row = 0; row < env::Frame::kHeight; ++row) {
    png_write_row(png, const_cast<png_bytep>(frame.pixel(row, 0)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

env::Frame decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
    throw std::runtime_error("not a png");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{&bytes, 0};
  env::Frame frame;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png decoding failed");
  }
  png_set_read_fn(png, &cursor, read_from_string);
  png_read_info(png, info);
  if (png_get_image_width(png, info) != env::Frame::kWidth || png_get_image_height(png, info) != env::Frame::kHeight ||
      png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("expected a 96x96 8-bit RGB png");
  }
  for (int row = 0; row < env::Frame::kHeight; ++row) png_read_row(png, frame.pixel(row, 0), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return frame;
}

std::string base64_encode(const std::string& bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::string base64_decode(const std::string& text) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::decoded_size(text.size()), '\0');
  const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  if (read != text.size()) throw std::runtime_error("invalid base64");
  out.resize(written);
  return out;
}

}  // namespace fepr::train
