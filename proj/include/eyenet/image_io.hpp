#pragma once

// 8-bit grayscale PNG read/write through libpng's simplified API.

#include <png.h>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eyenet/errors.hpp"
#include "eyenet/labels.hpp"

namespace eyenet {

struct Image8 {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> data;

  Image8() = default;
  Image8(std::size_t h_, std::size_t w_, std::uint8_t fill = 0) : h(h_), w(w_), data(h_ * w_, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * w + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * w + x]; }

  friend bool operator==(const Image8&, const Image8&) = default;
};

// Decodes any PNG to 8-bit gray. Throws DataError naming the path.
inline Image8 read_png_gray(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw DataError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  img.format = PNG_FORMAT_GRAY;
  Image8 out(img.height, img.width);
  if (!png_image_finish_read(&img, nullptr, out.data.data(), static_cast<png_int_32>(img.width), nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  return out;
}

inline void write_png_gray(const std::filesystem::path& path, const Image8& im) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(im.w);
  img.height = static_cast<png_uint_32>(im.h);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, im.data.data(), static_cast<png_int_32>(im.w), nullptr)) {
    throw DataError("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

// Label PNGs store raw class ids {0, 1, 2, 3}.
inline LabelMap read_label_png(const std::filesystem::path& path) {
  Image8 im = read_png_gray(path);
  LabelMap m(im.h, im.w);
  m.data = std::move(im.data);
  try {
    validate_labels(m);
  } catch (const DataError& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
  return m;
}

inline void write_label_png(const std::filesystem::path& path, const LabelMap& m) {
  Image8 im(m.h, m.w);
  im.data = m.data;
  write_png_gray(path, im);
}

}  // namespace eyenet
