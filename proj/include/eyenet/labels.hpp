#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "eyenet/errors.hpp"
#include "eyenet/tensor.hpp"

namespace eyenet {

enum class EyeClass : std::uint8_t { background = 0, sclera = 1, iris = 2, pupil = 3 };

inline constexpr std::size_t kNumClasses = 4;
inline constexpr const char* kClassNames[kNumClasses] = {"background", "sclera", "iris", "pupil"};

// Rank-2 map of class ids, row-major.
struct LabelMap {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(std::size_t h_, std::size_t w_, std::uint8_t fill = 0) : h(h_), w(w_), data(h_ * w_, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * w + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * w + x]; }
  std::size_t size() const { return data.size(); }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

// Throws DataError naming the first pixel with a label >= n_classes.
inline void validate_labels(const LabelMap& m, std::size_t n_classes = kNumClasses) {
  for (std::size_t y = 0; y < m.h; ++y) {
    for (std::size_t x = 0; x < m.w; ++x) {
      if (m.at(y, x) >= n_classes) {
        throw DataError("label " + std::to_string(m.at(y, x)) + " out of range at (row " + std::to_string(y) +
                        ", col " + std::to_string(x) + ")");
      }
    }
  }
}

// One-hot target tensor (n, n_classes, h, w) for a batch of label maps.
template <typename T = float>
Tensor4<T> one_hot(std::span<const LabelMap> batch, std::size_t n_classes = kNumClasses) {
  if (batch.empty()) throw ContractError("one_hot: empty batch");
  const std::size_t h = batch[0].h, w = batch[0].w;
  Tensor4<T> out(Shape{batch.size(), n_classes, h, w});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const LabelMap& m = batch[n];
    if (m.h != h || m.w != w) throw ShapeError("one_hot: label maps in a batch must share dims");
    validate_labels(m, n_classes);
    for (std::size_t p = 0; p < m.size(); ++p) out.plane(n, m.data[p])[p] = T(1);
  }
  return out;
}

template <typename T = float>
Tensor4<T> one_hot(const LabelMap& m, std::size_t n_classes = kNumClasses) {
  return one_hot<T>(std::span<const LabelMap>(&m, 1), n_classes);
}

// Per-pixel argmax over channels for batch item n; ties go to the lowest
// class index.
template <typename T>
LabelMap argmax_channels(const Tensor4<T>& x, std::size_t n = 0) {
  const Shape& s = x.shape();
  LabelMap out(s.h, s.w);
  for (std::size_t p = 0; p < s.plane(); ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < s.c; ++c) {
      if (x.plane(n, c)[p] > x.plane(n, best)[p]) best = c;
    }
    out.data[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace eyenet
