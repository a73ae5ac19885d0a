#pragma once

// Mask clean-up after argmax:
//   1. binarize eye (sclera|iris|pupil) vs background, keep the largest
//      8-connected eye component, everything else becomes background;
//   2. same filtering on the iris label alone;
//   3. fill holes of the pupil and iris regions; precedence pupil > iris >
//      existing label.
// Holes are 4-connected background components that do not touch the border
// (dual of 8-connected foreground).

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <vector>

#include "eyenet/errors.hpp"
#include "eyenet/labels.hpp"

namespace eyenet {

struct BinaryMask {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> data;  // 0 or 1

  BinaryMask() = default;
  BinaryMask(std::size_t h_, std::size_t w_) : h(h_), w(w_), data(h_ * w_, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * w + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * w + x]; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(data.begin(), data.end(), 1)); }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

inline BinaryMask binarize(const LabelMap& m, std::uint8_t label) {
  BinaryMask b(m.h, m.w);
  for (std::size_t i = 0; i < m.size(); ++i) b.data[i] = m.data[i] == label ? 1 : 0;
  return b;
}

struct Component {
  std::size_t label = 0;              // 1-based, in raster discovery order
  std::size_t area = 0;
  std::vector<std::size_t> pixels;    // row-major indices, ascending
};

namespace detail {

// Labels connected components of pixels whose value equals `value`;
// returns per-pixel component ids (0 = not part of any) and the count.
inline std::vector<std::size_t> label_components(const BinaryMask& m, std::uint8_t value, bool eight,
                                                 std::size_t& n_components) {
  std::vector<std::size_t> ids(m.data.size(), 0);
  n_components = 0;
  std::deque<std::size_t> queue;
  const auto H = static_cast<std::ptrdiff_t>(m.h);
  const auto W = static_cast<std::ptrdiff_t>(m.w);
  for (std::size_t start = 0; start < m.data.size(); ++start) {
    if (m.data[start] != value || ids[start] != 0) continue;
    const std::size_t id = ++n_components;
    ids[start] = id;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop_front();
      const auto y = static_cast<std::ptrdiff_t>(p / m.w);
      const auto x = static_cast<std::ptrdiff_t>(p % m.w);
      for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          if (!eight && dy != 0 && dx != 0) continue;
          const std::ptrdiff_t ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= H || nx >= W) continue;
          const auto q = static_cast<std::size_t>(ny * W + nx);
          if (m.data[q] == value && ids[q] == 0) {
            ids[q] = id;
            queue.push_back(q);
          }
        }
      }
    }
  }
  return ids;
}

}  // namespace detail

// Maximal 8-connected foreground components, largest first; equal areas
// keep raster order of their first pixel.
inline std::vector<Component> connected_components_8(const BinaryMask& m) {
  std::size_t n = 0;
  const auto ids = detail::label_components(m, 1, true, n);
  std::vector<Component> comps(n);
  for (std::size_t i = 0; i < n; ++i) comps[i].label = i + 1;
  for (std::size_t p = 0; p < ids.size(); ++p) {
    if (ids[p] == 0) continue;
    Component& c = comps[ids[p] - 1];
    c.pixels.push_back(p);
    ++c.area;
  }
  std::stable_sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) { return a.area > b.area; });
  return comps;
}

inline BinaryMask keep_largest(const BinaryMask& m, std::size_t k) {
  if (k == 0) throw ContractError("keep_largest: k must be >= 1");
  BinaryMask out(m.h, m.w);
  const auto comps = connected_components_8(m);
  for (std::size_t i = 0; i < std::min(k, comps.size()); ++i) {
    for (std::size_t p : comps[i].pixels) out.data[p] = 1;
  }
  return out;
}

inline BinaryMask fill_holes(const BinaryMask& m) {
  std::size_t n = 0;
  const auto ids = detail::label_components(m, 0, false, n);
  std::vector<bool> touches_border(n + 1, false);
  for (std::size_t y = 0; y < m.h; ++y) {
    for (std::size_t x = 0; x < m.w; ++x) {
      if (y == 0 || x == 0 || y + 1 == m.h || x + 1 == m.w) touches_border[ids[y * m.w + x]] = true;
    }
  }
  BinaryMask out = m;
  for (std::size_t p = 0; p < ids.size(); ++p) {
    if (m.data[p] == 0 && !touches_border[ids[p]]) out.data[p] = 1;
  }
  return out;
}

namespace detail {

inline LabelMap clean_mask_pass(const LabelMap& in) {
  LabelMap out = in;
  const auto iris = static_cast<std::uint8_t>(EyeClass::iris);
  const auto pupil = static_cast<std::uint8_t>(EyeClass::pupil);

  BinaryMask eye(out.h, out.w);
  for (std::size_t i = 0; i < out.size(); ++i) eye.data[i] = out.data[i] != 0 ? 1 : 0;
  const BinaryMask eye_kept = keep_largest(eye, 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (eye.data[i] && !eye_kept.data[i]) out.data[i] = 0;
  }

  const BinaryMask iris_bin = binarize(out, iris);
  const BinaryMask iris_kept = keep_largest(iris_bin, 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (iris_bin.data[i] && !iris_kept.data[i]) out.data[i] = 0;
  }

  const BinaryMask pupil_filled = fill_holes(binarize(out, pupil));
  const BinaryMask iris_filled = fill_holes(binarize(out, iris));
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (pupil_filled.data[i]) {
      out.data[i] = pupil;
    } else if (iris_filled.data[i]) {
      out.data[i] = iris;
    }
  }
  return out;
}

}  // namespace detail

// Runs the three-stage pass until the mask stops changing (one pass nearly
// always suffices; removing an iris bridge can expose a new eye speck), so
// the result is a fixed point.
inline LabelMap clean_mask(const LabelMap& pred) {
  validate_labels(pred);
  LabelMap cur = pred;
  for (int pass = 0; pass < 16; ++pass) {
    LabelMap next = detail::clean_mask_pass(cur);
    if (next == cur) break;
    cur = std::move(next);
  }
  return cur;
}

}  // namespace eyenet
