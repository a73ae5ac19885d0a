#include <gtest/gtest.h>

#include <random>
#include <set>

#include "eyenet/postproc.hpp"
#include "eyenet/synthetic.hpp"
#include "test_util.hpp"

using namespace eyenet;
using eyenet::testing::union_find_component_sizes;

namespace {

BinaryMask mask_from(std::size_t h, std::size_t w, const std::vector<std::string>& rows) {
  BinaryMask m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) m.at(y, x) = rows[y][x] == '#' ? 1 : 0;
  return m;
}

BinaryMask disk(std::size_t h, std::size_t w, double cy, double cx, double r) {
  BinaryMask m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = double(y) - cy, dx = double(x) - cx;
      m.at(y, x) = dy * dy + dx * dx <= r * r ? 1 : 0;
    }
  return m;
}

void paint(BinaryMask& m, std::size_t y0, std::size_t x0, std::size_t hh, std::size_t ww) {
  for (std::size_t y = y0; y < y0 + hh; ++y)
    for (std::size_t x = x0; x < x0 + ww; ++x) m.at(y, x) = 1;
}

// Noise-free concentric eye mask.
LabelMap concentric(std::size_t h, std::size_t w, std::uint64_t seed) {
  return make_ring_dataset(1, h, w, seed)[0].mask;
}

}  // namespace

// ---------------------------------------------------------------- components

TEST(Components, EmptyMask) { EXPECT_TRUE(connected_components_8(BinaryMask(5, 5)).empty()); }

TEST(Components, DiagonalNeighboursJoin) {
  const auto c = connected_components_8(mask_from(2, 2, {"#.", ".#"}));
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].area, 2u);
}

TEST(Components, CheckerboardIsOneComponent) {
  const auto c = connected_components_8(mask_from(4, 4, {"#.#.", ".#.#", "#.#.", ".#.#"}));
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].area, 8u);
}

TEST(Components, SortedBySizeThenRasterOrder) {
  const auto c = connected_components_8(mask_from(3, 7, {"#...#.#", "....#..", "##....."}));
  ASSERT_EQ(c.size(), 4u);
  EXPECT_EQ(c[0].area, 2u);
  EXPECT_EQ(c[0].pixels.front(), 4u);  // the column at x=4 comes first in raster order
  EXPECT_EQ(c[1].area, 2u);
  EXPECT_EQ(c[1].pixels.front(), 14u);
  EXPECT_EQ(c[2].pixels.front(), 0u);
  EXPECT_EQ(c[3].pixels.front(), 6u);
}

TEST(Components, MatchUnionFindOnRandomMasks) {
  std::mt19937 gen(11);
  for (int i = 0; i < 300; ++i) {
    std::bernoulli_distribution d(0.2 + 0.5 * (i % 5) / 4.0);
    BinaryMask m(16, 16);
    for (auto& v : m.data) v = d(gen) ? 1 : 0;
    const auto comps = connected_components_8(m);
    std::vector<std::size_t> sizes;
    std::size_t total = 0;
    std::vector<int> owner(256, 0);
    for (const auto& c : comps) {
      sizes.push_back(c.area);
      total += c.area;
      for (std::size_t p : c.pixels) {
        EXPECT_EQ(m.data[p], 1);
        ++owner[p];
      }
    }
    ASSERT_EQ(sizes, union_find_component_sizes(m.data, 16, 16));
    EXPECT_EQ(total, m.count());
    for (std::size_t p = 0; p < 256; ++p) EXPECT_EQ(owner[p], m.data[p]);
  }
}

// ---------------------------------------------------------------- keep_largest

TEST(KeepLargest, SingleComponentUnchanged) {
  const auto m = disk(12, 12, 6, 6, 4);
  for (std::size_t k : {1u, 2u, 5u}) EXPECT_EQ(keep_largest(m, k), m);
  EXPECT_THROW(keep_largest(m, 0), ContractError);
}

TEST(KeepLargest, DropsSmallestSpeck) {
  BinaryMask m(20, 30);
  paint(m, 0, 0, 10, 10);   // 100
  paint(m, 15, 15, 2, 5);   // 10
  paint(m, 19, 29, 1, 1);   // 1
  const auto k = keep_largest(m, 2);
  EXPECT_EQ(k.count(), 110u);
  EXPECT_EQ(k.at(19, 29), 0);
  EXPECT_EQ(keep_largest(k, 2), k);
  EXPECT_EQ(keep_largest(m, 1).count(), 100u);
}

TEST(KeepLargest, LargestAreaNeverShrinks) {
  std::mt19937 gen(12);
  std::bernoulli_distribution d(0.45);
  for (int i = 0; i < 100; ++i) {
    BinaryMask m(16, 16);
    for (auto& v : m.data) v = d(gen) ? 1 : 0;
    const auto before = union_find_component_sizes(m.data, 16, 16);
    const auto kept = keep_largest(m, 1);
    if (before.empty()) {
      EXPECT_EQ(kept.count(), 0u);
    } else {
      EXPECT_EQ(kept.count(), before[0]);
    }
  }
}

// ---------------------------------------------------------------- fill_holes

TEST(FillHoles, RingBecomesDisk) {
  auto ring = disk(15, 15, 7, 7, 6);
  const auto inner = disk(15, 15, 7, 7, 3);
  for (std::size_t i = 0; i < ring.data.size(); ++i)
    if (inner.data[i]) ring.data[i] = 0;
  EXPECT_EQ(fill_holes(ring), disk(15, 15, 7, 7, 6));
}

TEST(FillHoles, BayOpenToBorderSurvives) {
  const auto m = mask_from(5, 5, {"#.###", "#.#.#", "#...#", "#####", "....."});
  // The open column reaches the top border, so the whole pocket is kept.
  EXPECT_EQ(fill_holes(m), m);
}

TEST(FillHoles, DiagonalGapStillEnclosesWithFourConnectedBackground) {
  // The hole at (2,2) touches the outside only diagonally.
  const auto m = mask_from(5, 5, {".....", ".###.", ".#.#.", "..##.", "....."});
  const auto f = fill_holes(m);
  EXPECT_EQ(f.at(2, 2), 1);
  EXPECT_EQ(f.count(), m.count() + 1);
}

TEST(FillHoles, Idempotent) {
  std::mt19937 gen(13);
  std::bernoulli_distribution d(0.6);
  for (int i = 0; i < 100; ++i) {
    BinaryMask m(12, 12);
    for (auto& v : m.data) v = d(gen) ? 1 : 0;
    const auto f = fill_holes(m);
    EXPECT_EQ(fill_holes(f), f);
    for (std::size_t p = 0; p < m.data.size(); ++p) EXPECT_GE(f.data[p], m.data[p]);
  }
}

// ---------------------------------------------------------------- clean_mask

TEST(CleanMask, ConcentricMaskIsFixedPoint) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto m = concentric(48, 64, s);
    EXPECT_EQ(clean_mask(m), m) << s;
  }
}

TEST(CleanMask, RemovesIrisSpeckInCorner) {
  auto m = concentric(48, 64, 3);
  ASSERT_EQ(m.at(0, 63), 0);
  m.at(0, 63) = 2;
  m.at(0, 62) = 2;
  m.at(1, 63) = 2;
  const auto c = clean_mask(m);
  EXPECT_EQ(c.at(0, 63), 0);
  EXPECT_EQ(c.at(0, 62), 0);
  EXPECT_EQ(c.at(1, 63), 0);
  EXPECT_EQ(c, concentric(48, 64, 3));
}

TEST(CleanMask, RemovesSecondIrisInsideSclera) {
  LabelMap m(20, 30, 0);
  for (std::size_t y = 2; y < 18; ++y)
    for (std::size_t x = 2; x < 28; ++x) m.at(y, x) = 1;
  for (std::size_t y = 6; y < 14; ++y)
    for (std::size_t x = 6; x < 14; ++x) m.at(y, x) = 2;
  m.at(10, 24) = 2;  // stray iris blob in the sclera
  const auto c = clean_mask(m);
  // Suppressed pixels go to background.
  EXPECT_EQ(c.at(10, 24), 0);
  EXPECT_EQ(c.at(10, 10), 2);
}

TEST(CleanMask, FillsOnePixelIrisHole) {
  auto m = concentric(48, 64, 5);
  // Find an iris pixel whose 8 neighbours are all iris.
  std::size_t hy = 0, hx = 0;
  bool found = false;
  for (std::size_t y = 1; y + 1 < 48 && !found; ++y)
    for (std::size_t x = 1; x + 1 < 64 && !found; ++x) {
      bool all = true;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) all = all && m.at(y + dy, x + dx) == 2;
      if (all) {
        hy = y;
        hx = x;
        found = true;
      }
    }
  ASSERT_TRUE(found);
  const auto clean = m;
  m.at(hy, hx) = 1;  // a sclera pixel inside the iris annulus
  EXPECT_EQ(clean_mask(m), clean);
  m.at(hy, hx) = 0;  // or a background pixel
  EXPECT_EQ(clean_mask(m), clean);
}

TEST(CleanMask, PupilWinsOverIrisWhenFilling) {
  // Pupil ring with an iris-coloured interior: the interior becomes pupil.
  LabelMap m(11, 11, 0);
  for (std::size_t y = 1; y < 10; ++y)
    for (std::size_t x = 1; x < 10; ++x) m.at(y, x) = 2;
  for (std::size_t y = 3; y < 8; ++y)
    for (std::size_t x = 3; x < 8; ++x) m.at(y, x) = 3;
  m.at(5, 5) = 2;
  const auto c = clean_mask(m);
  EXPECT_EQ(c.at(5, 5), 3);
}

TEST(CleanMask, OutOfRangeLabelIsDataError) {
  LabelMap m(3, 3, 0);
  m.at(1, 1) = 4;
  EXPECT_THROW(clean_mask(m), DataError);
}

TEST(CleanMask, IdempotentAndLabelPreservingOnNoisyCorpus) {
  std::mt19937 gen(21);
  for (int i = 0; i < 500; ++i) {
    auto m = concentric(32, 40, std::uint64_t(i));
    // Sprinkle random label flips.
    std::uniform_int_distribution<std::size_t> pix(0, m.size() - 1);
    std::uniform_int_distribution<int> lab(0, 3);
    const int flips = 1 + i % 40;
    for (int f = 0; f < flips; ++f) m.data[pix(gen)] = std::uint8_t(lab(gen));
    const auto once = clean_mask(m);
    ASSERT_EQ(clean_mask(once), once) << i;
    std::set<std::uint8_t> in(m.data.begin(), m.data.end()), out(once.data.begin(), once.data.end());
    in.insert(0);
    for (auto v : out) EXPECT_TRUE(in.contains(v)) << int(v);
    // At most one eye region and one iris region remain.
    BinaryMask eye(m.h, m.w);
    for (std::size_t p = 0; p < m.size(); ++p) eye.data[p] = once.data[p] != 0;
    EXPECT_LE(connected_components_8(eye).size(), 1u);
    EXPECT_LE(connected_components_8(binarize(once, 2)).size(), 1u);
  }
}

TEST(CleanMask, IdempotentOnUniformNoise) {
  std::mt19937 gen(22);
  for (int i = 0; i < 200; ++i) {
    const auto m = eyenet::testing::random_labels(12, 12, gen);
    const auto once = clean_mask(m);
    ASSERT_EQ(clean_mask(once), once) << i;
  }
}
