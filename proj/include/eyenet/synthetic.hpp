#pragma once

// Synthetic eye images: nested ellipse/disks (background > sclera > iris >
// pupil) with distinct gray levels and light texture noise. Used by the
// overfit sanity run, the demo and tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "eyenet/datapipe.hpp"
#include "eyenet/rng.hpp"

namespace eyenet {

struct RingGeometry {
  double cy, cx;         // eye center
  double eye_ry, eye_rx; // sclera ellipse radii
  double iris_r;
  double pupil_r;
  double iris_dy, iris_dx;  // iris offset from eye center
};

inline Sample make_ring_sample(std::size_t h, std::size_t w, const RingGeometry& g, std::uint64_t noise_seed,
                               std::string id) {
  Sample s{Tensor4<float>(Shape{1, 1, h, w}), LabelMap(h, w), std::move(id)};
  SplitMix64 rng(noise_seed);
  constexpr double level[4] = {0.70, 0.92, 0.40, 0.08};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double py = double(y) + 0.5, px = double(x) + 0.5;
      const double ey = (py - g.cy) / g.eye_ry, ex = (px - g.cx) / g.eye_rx;
      const double iy = py - (g.cy + g.iris_dy), ix = px - (g.cx + g.iris_dx);
      const double rr = std::sqrt(iy * iy + ix * ix);
      std::uint8_t label = 0;
      if (ey * ey + ex * ex <= 1.0) label = 1;
      if (label == 1 && rr <= g.iris_r) label = 2;
      if (label == 2 && rr <= g.pupil_r) label = 3;
      s.mask.at(y, x) = label;
      const double v = level[label] + rng.normal(0.0, 0.0009);  // sd 0.03
      s.image.at(0, 0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return s;
}

// `count` samples with geometry jittered under `seed`.
inline std::vector<Sample> make_ring_dataset(std::size_t count, std::size_t h, std::size_t w, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < count; ++i) {
    RingGeometry g;
    g.cy = double(h) * rng.uniform(0.42, 0.58);
    g.cx = double(w) * rng.uniform(0.42, 0.58);
    g.eye_ry = double(h) * rng.uniform(0.28, 0.36);
    g.eye_rx = double(w) * rng.uniform(0.34, 0.42);
    g.iris_r = g.eye_ry * rng.uniform(0.62, 0.78);
    g.pupil_r = g.iris_r * rng.uniform(0.35, 0.5);
    g.iris_dy = rng.uniform(-0.08, 0.08) * g.eye_ry;
    g.iris_dx = rng.uniform(-0.2, 0.2) * g.eye_rx;
    out.push_back(make_ring_sample(h, w, g, rng(), "ring" + std::to_string(i)));
  }
  return out;
}

}  // namespace eyenet
