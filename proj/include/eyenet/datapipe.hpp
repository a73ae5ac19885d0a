#pragma once

// Image/mask ingestion, normalization, resizing and augmentation.
//
// Geometry uses pixel-center coordinates: pixel i covers [i, i+1) and its
// center is i + 0.5. Images are sampled bilinearly, masks by nearest
// neighbour so labels survive every transform.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "eyenet/errors.hpp"
#include "eyenet/image_io.hpp"
#include "eyenet/labels.hpp"
#include "eyenet/rng.hpp"
#include "eyenet/tensor.hpp"

namespace eyenet {

struct Sample {
  Tensor4<float> image;  // (1, 1, h, w), values in [0, 1]
  LabelMap mask;
  std::string id;
};

struct AugmentConfig {
  double zoom_factor = 1.5;
  double noise_mean = 10.0;
  double noise_variance = 10.0;
  double rotation_min_deg = -10.0;
  double rotation_max_deg = 10.0;
  std::uint64_t seed = 0;
  // Dataset size after augmentation; 0 disables augmentation.
  std::size_t target_count = 0;
};

inline Tensor4<float> normalize(const Image8& raw) {
  Tensor4<float> out(Shape{1, 1, raw.h, raw.w});
  for (std::size_t i = 0; i < raw.data.size(); ++i) out[i] = static_cast<float>(raw.data[i] / 255.0);
  return out;
}

// Inverse of normalize, rounding to the nearest level.
inline Image8 to_image8(const Tensor4<float>& x, std::size_t n = 0, std::size_t c = 0) {
  Image8 out(x.shape().h, x.shape().w);
  const float* p = x.plane(n, c);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(double(p[i]) * 255.0), 0L, 255L));
  }
  return out;
}

namespace detail {

// Bilinear sample of one plane at continuous pixel-index coordinates
// (sy, sx), clamped to the border.
inline double bilinear(const float* plane, std::size_t h, std::size_t w, double sy, double sx) {
  sy = std::clamp(sy, 0.0, double(h - 1));
  sx = std::clamp(sx, 0.0, double(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(sy));
  const auto x0 = static_cast<std::size_t>(std::floor(sx));
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - double(y0), fx = sx - double(x0);
  const double top = double(plane[y0 * w + x0]) * (1 - fx) + double(plane[y0 * w + x1]) * fx;
  const double bot = double(plane[y1 * w + x0]) * (1 - fx) + double(plane[y1 * w + x1]) * fx;
  return top * (1 - fy) + bot * fy;
}

inline std::size_t nearest_index(double center_coord, std::size_t extent) {
  const auto i = static_cast<std::ptrdiff_t>(std::floor(center_coord));
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(extent) - 1));
}

}  // namespace detail

// Bilinear resize of every (n, c) plane to height x width.
inline Tensor4<float> resize(const Tensor4<float>& x, std::size_t width, std::size_t height) {
  const Shape& s = x.shape();
  if (width == 0 || height == 0) throw ConfigError("resize: target dims must be >= 1");
  if (s.h == 0 || s.w == 0) throw ContractError("resize: empty source");
  Tensor4<float> out(Shape{s.n, s.c, height, width});
  const double ry = double(s.h) / double(height), rx = double(s.w) / double(width);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const float* src = x.plane(n, c);
      float* dst = out.plane(n, c);
      for (std::size_t y = 0; y < height; ++y) {
        const double sy = (double(y) + 0.5) * ry - 0.5;
        for (std::size_t xx = 0; xx < width; ++xx) {
          dst[y * width + xx] = static_cast<float>(detail::bilinear(src, s.h, s.w, sy, (double(xx) + 0.5) * rx - 0.5));
        }
      }
    }
  }
  return out;
}

inline LabelMap resize_mask(const LabelMap& m, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw ConfigError("resize_mask: target dims must be >= 1");
  if (m.h == 0 || m.w == 0) throw ContractError("resize_mask: empty source");
  LabelMap out(height, width);
  const double ry = double(m.h) / double(height), rx = double(m.w) / double(width);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = detail::nearest_index((double(y) + 0.5) * ry, m.h);
    for (std::size_t x = 0; x < width; ++x) out.at(y, x) = m.at(sy, detail::nearest_index((double(x) + 0.5) * rx, m.w));
  }
  return out;
}

inline Sample resize_sample(const Sample& s, std::size_t width, std::size_t height) {
  return Sample{resize(s.image, width, height), resize_mask(s.mask, width, height), s.id};
}

// Scales image and mask about the center by `factor` and crops the central
// window back to the original dims.
inline Sample zoom_clipped(const Sample& s, double factor) {
  if (!(factor > 1.0)) throw ContractError("zoom_clipped: factor must be > 1");
  const std::size_t h = s.mask.h, w = s.mask.w;
  Sample out{Tensor4<float>(s.image.shape()), LabelMap(h, w), s.id};
  const double cy = double(h) / 2.0, cx = double(w) / 2.0;
  for (std::size_t y = 0; y < h; ++y) {
    const double sy = (double(y) + 0.5 - cy) / factor + cy;  // source position in pixel units
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = (double(x) + 0.5 - cx) / factor + cx;
      out.image.at(0, 0, y, x) = static_cast<float>(detail::bilinear(s.image.plane(0, 0), h, w, sy - 0.5, sx - 0.5));
      out.mask.at(y, x) = s.mask.at(detail::nearest_index(sy, h), detail::nearest_index(sx, w));
    }
  }
  return out;
}

// Adds N(mean, variance) noise per pixel on the 8-bit scale, clamps to
// [0, 255] and renormalizes. The mask is untouched.
inline Sample gaussian_noise(const Sample& s, double mean, double variance, std::uint64_t seed) {
  if (variance < 0.0) throw ContractError("gaussian_noise: variance must be >= 0");
  SplitMix64 rng(seed);
  Sample out = s;
  for (std::size_t i = 0; i < out.image.size(); ++i) {
    const double v = double(s.image[i]) * 255.0 + rng.normal(mean, variance);
    out.image[i] = static_cast<float>(std::clamp(v, 0.0, 255.0) / 255.0);
  }
  return out;
}

// Rotation about the image center; positive degrees turn the content
// counter-clockwise on screen. Pixels mapped from outside the frame are 0.
inline Sample rotate(const Sample& s, double degrees) {
  const std::size_t h = s.mask.h, w = s.mask.w;
  Sample out{Tensor4<float>(s.image.shape()), LabelMap(h, w), s.id};
  const double th = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double cy = double(h) / 2.0, cx = double(w) / 2.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = double(x) + 0.5 - cx;
      const double dy = double(y) + 0.5 - cy;
      // Inverse map (y axis points down, so screen-CCW is +th here).
      const double sx = cs * dx - sn * dy + cx;
      const double sy = sn * dx + cs * dy + cy;
      if (sx < 0.0 || sy < 0.0 || sx >= double(w) || sy >= double(h)) continue;
      out.image.at(0, 0, y, x) = static_cast<float>(detail::bilinear(s.image.plane(0, 0), h, w, sy - 0.5, sx - 0.5));
      out.mask.at(y, x) = s.mask.at(detail::nearest_index(sy, h), detail::nearest_index(sx, w));
    }
  }
  return out;
}

// Grows `samples` to cfg.target_count by appending augmented copies of
// uniformly drawn samples; each copy gets one of zoom / noise / rotation.
inline std::vector<Sample> augment_dataset(std::vector<Sample> samples, const AugmentConfig& cfg) {
  if (samples.empty() || cfg.target_count <= samples.size()) return samples;
  SplitMix64 rng(cfg.seed);
  const std::size_t original = samples.size();
  for (std::size_t k = 0; samples.size() < cfg.target_count; ++k) {
    const Sample& src = samples[rng.below(original)];
    Sample aug;
    switch (rng.below(3)) {
      case 0:
        aug = zoom_clipped(src, cfg.zoom_factor);
        break;
      case 1:
        aug = gaussian_noise(src, cfg.noise_mean, cfg.noise_variance, rng());
        break;
      default:
        aug = rotate(src, rng.uniform(cfg.rotation_min_deg, cfg.rotation_max_deg));
        break;
    }
    aug.id = src.id + "#aug" + std::to_string(k);
    samples.push_back(std::move(aug));
  }
  return samples;
}

namespace detail {

inline std::map<std::string, std::filesystem::path> png_stems(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: '" + dir.string() + "'");
  std::map<std::string, std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.emplace(e.path().stem().string(), e.path());
  }
  return out;
}

}  // namespace detail

// Reads an optional manifest: one sample id per line, '#' comments.
inline std::vector<std::string> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos || line[a] == '#') continue;
    const auto b = line.find_last_not_of(" \t\r");
    ids.push_back(line.substr(a, b - a + 1));
  }
  return ids;
}

// Pairs <stem>.png images with <stem>.png masks; lexicographic order, or the
// manifest's order when given.
inline std::vector<Sample> load_dataset(const std::filesystem::path& image_dir, const std::filesystem::path& mask_dir,
                                        const std::optional<std::filesystem::path>& manifest = std::nullopt) {
  const auto images = detail::png_stems(image_dir);
  const auto masks = detail::png_stems(mask_dir);
  std::vector<std::string> ids;
  if (manifest) {
    ids = read_manifest(*manifest);
  } else {
    std::set<std::string> orphans;
    for (const auto& [stem, _] : images)
      if (!masks.contains(stem)) orphans.insert("image '" + stem + "' has no mask");
    for (const auto& [stem, _] : masks)
      if (!images.contains(stem)) orphans.insert("mask '" + stem + "' has no image");
    if (!orphans.empty()) {
      std::string msg = "unpaired files:";
      for (const auto& o : orphans) msg += " " + o + ";";
      throw DataError(msg);
    }
    for (const auto& [stem, _] : images) ids.push_back(stem);
  }
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto ii = images.find(id);
    auto mi = masks.find(id);
    if (ii == images.end() || mi == masks.end()) throw DataError("manifest id '" + id + "' lacks an image or mask");
    Sample s{normalize(read_png_gray(ii->second)), read_label_png(mi->second), id};
    if (s.mask.h != s.image.shape().h || s.mask.w != s.image.shape().w) {
      throw DataError("'" + id + "': image and mask dims differ");
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace eyenet
