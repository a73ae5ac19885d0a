#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "eyenet/metrics.hpp"
#include "test_util.hpp"

using namespace eyenet;
using eyenet::testing::random_labels;

namespace {

LabelMap from(std::size_t h, std::size_t w, std::vector<std::uint8_t> v) {
  LabelMap m(h, w);
  m.data = std::move(v);
  return m;
}

// Per-pixel recount that never builds a confusion matrix.
struct Oracle {
  double miou, pa, ma;
  std::array<double, 4> iou, dice;
  std::array<bool, 4> present;
};

Oracle recount(const LabelMap& pred, const LabelMap& truth) {
  Oracle o{};
  std::size_t correct = 0;
  double iou_sum = 0, acc_sum = 0;
  std::size_t iou_n = 0, acc_n = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred.data[i] == c, t = truth.data[i] == c;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    o.present[c] = tp + fp + fn > 0;
    o.iou[c] = o.present[c] ? double(tp) / double(tp + fp + fn) : 0.0;
    o.dice[c] = o.present[c] ? 2.0 * double(tp) / double(2 * tp + fp + fn) : 0.0;
    if (o.present[c]) {
      iou_sum += o.iou[c];
      ++iou_n;
    }
    if (tp + fn > 0) {
      acc_sum += double(tp) / double(tp + fn);
      ++acc_n;
    }
  }
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred.data[i] == truth.data[i];
  o.miou = iou_sum / double(iou_n);
  o.pa = double(correct) / double(pred.size());
  o.ma = acc_sum / double(acc_n);
  return o;
}

}  // namespace

TEST(Confusion, HandCountedExample) {
  const auto truth = from(2, 2, {0, 0, 1, 1}), pred = from(2, 2, {0, 1, 1, 1});
  const auto cm = confusion(pred, truth);
  EXPECT_EQ(cm.counts[0][0], 1u);
  EXPECT_EQ(cm.counts[0][1], 1u);
  EXPECT_EQ(cm.counts[1][1], 2u);
  EXPECT_EQ(cm.total(), 4u);
  EXPECT_DOUBLE_EQ(class_iou(cm, 0), 0.5);
  EXPECT_DOUBLE_EQ(class_iou(cm, 1), 2.0 / 3.0);
  EXPECT_NEAR(miou(cm), 7.0 / 12.0, 1e-15);
  EXPECT_NEAR(pixel_accuracy(cm), 0.75, 1e-15);
  EXPECT_NEAR(mean_accuracy(cm), 0.75, 1e-15);
}

TEST(Confusion, PerfectIsDiagonal) {
  std::mt19937 gen(1);
  const auto m = random_labels(9, 9, gen);
  const auto cm = confusion(m, m);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t p = 0; p < 4; ++p)
      if (t != p) {
        EXPECT_EQ(cm.counts[t][p], 0u);
      }
  EXPECT_EQ(miou(cm), 1.0);
  EXPECT_EQ(pixel_accuracy(cm), 1.0);
  EXPECT_EQ(mean_accuracy(cm), 1.0);
  for (const auto& s : per_class_scores(cm)) {
    if (!s.present) continue;
    EXPECT_EQ(s.iou, 1.0);
    EXPECT_EQ(s.dice, 1.0);
  }
}

TEST(Confusion, AllWrongGivesZeroAccuracy) {
  const auto truth = from(1, 4, {0, 1, 2, 3}), pred = from(1, 4, {1, 2, 3, 0});
  const auto cm = confusion(pred, truth);
  EXPECT_EQ(pixel_accuracy(cm), 0.0);
  EXPECT_EQ(miou(cm), 0.0);
}

TEST(Confusion, DisjointClassScoresZero) {
  const auto truth = from(1, 4, {2, 2, 0, 0}), pred = from(1, 4, {0, 0, 2, 2});
  const auto s = per_class_scores(confusion(pred, truth));
  EXPECT_TRUE(s[2].present);
  EXPECT_EQ(s[2].iou, 0.0);
  EXPECT_EQ(s[2].dice, 0.0);
}

TEST(Confusion, SwappingTransposes) {
  std::mt19937 gen(2);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_labels(8, 8, gen), b = random_labels(8, 8, gen);
    const auto x = confusion(a, b), y = confusion(b, a);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(x.counts[t][p], y.counts[p][t]);
  }
}

TEST(Confusion, Errors) {
  LabelMap a(2, 2), b(2, 3);
  EXPECT_THROW(confusion(a, b), ShapeError);
  LabelMap bad(2, 2);
  bad.data[3] = 7;
  try {
    confusion(bad, a);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
  ConfusionMatrix empty;
  EXPECT_THROW(miou(empty), ContractError);
  EXPECT_THROW(pixel_accuracy(empty), ContractError);
  EXPECT_THROW(mean_accuracy(empty), ContractError);
  EXPECT_THROW(per_class_scores(empty), ContractError);
}

TEST(Metrics, BruteForceOracleOnRandomPairs) {
  std::mt19937 gen(42);
  for (int i = 0; i < 1000; ++i) {
    // Bias towards fewer classes sometimes so absent-class paths are hit.
    const int maxl = i % 4 == 0 ? 1 + i % 3 : 3;
    const auto pred = random_labels(8, 8, gen, maxl), truth = random_labels(8, 8, gen, maxl);
    const auto cm = confusion(pred, truth);
    const auto o = recount(pred, truth);
    ASSERT_EQ(miou(cm), o.miou);
    ASSERT_EQ(pixel_accuracy(cm), o.pa);
    ASSERT_EQ(mean_accuracy(cm), o.ma);
    const auto s = per_class_scores(cm);
    for (std::size_t c = 0; c < 4; ++c) {
      ASSERT_EQ(s[c].present, o.present[c]);
      ASSERT_EQ(s[c].iou, o.iou[c]);
      ASSERT_EQ(s[c].dice, o.dice[c]);
    }
  }
}

TEST(Metrics, DiceIouIdentity) {
  std::mt19937 gen(7);
  std::uniform_int_distribution<int> d(0, 50);
  for (int i = 0; i < 1000; ++i) {
    ConfusionMatrix cm;
    for (auto& row : cm.counts)
      for (auto& v : row) v = std::uint64_t(d(gen));
    for (const auto& s : per_class_scores(cm)) {
      if (!s.present) continue;
      EXPECT_NEAR(s.dice, 2.0 * s.iou / (1.0 + s.iou), 1e-9);
      EXPECT_GE(s.iou, 0.0);
      EXPECT_LE(s.dice, 1.0);
    }
  }
}

TEST(Metrics, PooledMetricsAreAdditive) {
  std::mt19937 gen(3);
  const auto a1 = random_labels(4, 8, gen), a2 = random_labels(4, 8, gen);
  const auto b1 = random_labels(4, 8, gen), b2 = random_labels(4, 8, gen);
  // Stack the two images vertically.
  LabelMap pa(8, 8), pb(8, 8);
  std::copy(a1.data.begin(), a1.data.end(), pa.data.begin());
  std::copy(a2.data.begin(), a2.data.end(), pa.data.begin() + 32);
  std::copy(b1.data.begin(), b1.data.end(), pb.data.begin());
  std::copy(b2.data.begin(), b2.data.end(), pb.data.begin() + 32);
  const auto whole = confusion(pa, pb);
  EXPECT_EQ(whole, confusion(a1, b1) + confusion(a2, b2));
  const std::vector<LabelMap> preds{a1, a2}, truths{b1, b2};
  const auto r = evaluate(preds, truths);
  EXPECT_EQ(r.miou, miou(whole));
  EXPECT_EQ(r.pixel_total, 64u);
  EXPECT_EQ(r.images, 2u);
}

TEST(Metrics, AccumulatorMergeMatchesSequential) {
  std::mt19937 gen(4);
  MetricAccumulator all, left, right;
  for (int i = 0; i < 10; ++i) {
    const auto p = random_labels(6, 6, gen), t = random_labels(6, 6, gen);
    all.add(p, t);
    (i < 5 ? left : right).add(p, t);
  }
  left.merge(right);
  const auto a = all.report(), b = left.report();
  EXPECT_EQ(a.miou, b.miou);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(a.per_class[c].jaccard, b.per_class[c].jaccard, 1e-15);
}

TEST(Metrics, PerImageJaccardDiffersFromPooledIou) {
  // Image 1: sclera perfect on 1 pixel; image 2: sclera 1 of 3 pixels right.
  const auto t1 = from(1, 4, {1, 0, 0, 0}), p1 = t1;
  const auto t2 = from(1, 4, {1, 1, 1, 0}), p2 = from(1, 4, {1, 0, 0, 0});
  const std::vector<LabelMap> preds{p1, p2}, truths{t1, t2};
  const auto r = evaluate(preds, truths);
  EXPECT_DOUBLE_EQ(r.per_class[1].iou, 2.0 / 4.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].jaccard, (1.0 + 1.0 / 3.0) / 2.0);
}

TEST(Metrics, PixelPermutationInvariant) {
  std::mt19937 gen(5);
  const auto p = random_labels(8, 8, gen), t = random_labels(8, 8, gen);
  LabelMap pp(8, 8), tp(8, 8);
  for (std::size_t i = 0; i < 64; ++i) {
    pp.data[i] = p.data[(i * 29 + 5) % 64];
    tp.data[i] = t.data[(i * 29 + 5) % 64];
  }
  EXPECT_EQ(confusion(p, t), confusion(pp, tp));
}

TEST(Report, KeyValueLinesParse) {
  const auto truth = from(2, 2, {0, 0, 1, 1}), pred = from(2, 2, {0, 1, 1, 1});
  const std::vector<LabelMap> preds{pred}, truths{truth};
  std::ostringstream os;
  print_key_values(os, evaluate(preds, truths));
  std::map<std::string, std::string> kv;
  std::istringstream in(os.str());
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    ASSERT_NE(eq, std::string::npos) << line;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  EXPECT_NEAR(std::stod(kv.at("miou")), 7.0 / 12.0, 1e-15);
  EXPECT_EQ(kv.at("pixel_accuracy"), "0.75");
  EXPECT_EQ(kv.at("pixel_total"), "4");
  EXPECT_EQ(kv.at("iris.present"), "0");
  EXPECT_EQ(kv.at("sclera.present"), "1");
  std::ostringstream table;
  print_table(table, evaluate(preds, truths));
  EXPECT_NE(table.str().find("MIOU 0.5833"), std::string::npos) << table.str();
}
