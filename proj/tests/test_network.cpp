#include <gtest/gtest.h>

#include <chrono>
#include <cstring>

#include "block_gradcheck.hpp"
#include "eyenet/checkpoint.hpp"
#include "eyenet/loss.hpp"
#include "eyenet/network.hpp"

using namespace eyenet;
using eyenet::testing::check_block;
using eyenet::testing::random_tensor;

namespace {

std::size_t conv_count(std::size_t in, std::size_t out, std::size_t k) { return k * k * in * out + out; }

// Closed form of the default architecture, written out layer by layer.
std::size_t hand_count_default() {
  std::size_t n = conv_count(3, 5, 3);  // stem on image + 2 coordinate channels
  const std::size_t enc[3] = {24, 32, 48};
  std::size_t in = 5;
  for (std::size_t c : enc) {
    n += conv_count(in, c, 3);                                        // strided down conv
    n += 2 * (conv_count(c, c, 3) * 2 + conv_count(c, c, 1));         // two residual units
    in = c;
  }
  n += 48 * 6 + 6 + 6 * 48 + 2 * 49 + 1;  // CBAM, r = 8, 7x7 spatial
  const std::size_t dec[3] = {32, 16, 16};
  const std::size_t skip[2] = {32, 24};
  in = 96;
  for (std::size_t k = 0; k < 3; ++k) {
    n += conv_count(in, dec[k], 3) + conv_count(dec[k], dec[k], 3) + conv_count(in, dec[k], 1);
    n += dec[k] + 1;                                  // CS-SE squeeze
    n += conv_count(dec[k], 4, 1) + conv_count(4, 4, 3);  // side classify + refine
    if (k < 2) {
      n += conv_count(dec[k] + skip[k], dec[k], 3);  // merge with the skip
      in = dec[k];
    }
  }
  n += conv_count(12, 4, 1);
  return n;
}

}  // namespace

TEST(Network, DefaultParameterCountMatchesClosedForm) {
  const NetworkSpec spec;
  const auto store = build(spec, 0);
  EXPECT_EQ(store.parameter_count(), hand_count_default());
  EXPECT_EQ(store.parameter_count(), expected_parameter_count(spec));
  EXPECT_GE(store.parameter_count(), 240000u);
  EXPECT_LE(store.parameter_count(), 260000u);
}

TEST(Network, ParameterCountOfSingleConv) { EXPECT_EQ(conv_count(4, 8, 3), 296u); }

TEST(Network, ReducedSpecCountMatchesClosedForm) {
  const auto spec = reduced_spec();
  EXPECT_EQ(build(spec, 0).parameter_count(), expected_parameter_count(spec));
}

TEST(Network, BuildIsDeterministicPerSeed) {
  const auto spec = reduced_spec();
  EXPECT_TRUE(build(spec, 3) == build(spec, 3));
  EXPECT_FALSE(build(spec, 3) == build(spec, 4));
}

TEST(Network, BudgetViolationNamesTheCount) {
  NetworkSpec spec;
  spec.max_parameters = 200000;
  try {
    build(spec, 0);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(std::to_string(hand_count_default())), std::string::npos) << e.what();
  }
}

TEST(Network, InvalidSpecsAreRejected) {
  NetworkSpec s;
  s.cbam_ratio = 5;
  EXPECT_THROW(build(s, 0), ConfigError);
  s = NetworkSpec{};
  s.n_classes = 3;
  EXPECT_THROW(build(s, 0), ConfigError);
  s = NetworkSpec{};
  s.enc_channels[1] = 0;
  EXPECT_THROW(build(s, 0), ConfigError);
}

TEST(Network, OutputShapesAtDefaultResolution) {
  const NetworkSpec spec;
  const auto store = build(spec, 1);
  const auto out = forward(Tensor4<float>(Shape{1, 1, 384, 640}), store, spec);
  for (const auto& t : out.all()) EXPECT_EQ(t.shape(), (Shape{1, 4, 384, 640}));
  for (float v : out.fused.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Network, SmallInputIsFast) {
  const NetworkSpec spec;
  const auto store = build(spec, 1);
  const auto x = random_tensor<float>(Shape{1, 1, 48, 64}, 3, 0.0, 1.0);
  const auto t0 = std::chrono::steady_clock::now();
  const auto out = forward(x, store, spec);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(out.fused.shape(), (Shape{1, 4, 48, 64}));
  EXPECT_LT(secs, 1.0);
}

TEST(Network, IndivisibleDimsAreShapeErrors) {
  const auto spec = reduced_spec();
  const auto store = build(spec, 0);
  EXPECT_THROW(forward(Tensor4<float>(Shape{1, 1, 20, 16}), store, spec), ShapeError);
  EXPECT_THROW(forward(Tensor4<float>(Shape{1, 1, 16, 12}), store, spec), ShapeError);
  EXPECT_THROW(forward(Tensor4<float>(Shape{1, 2, 16, 16}), store, spec), ShapeError);
}

TEST(Network, BatchItemsAreIndependent) {
  const auto spec = reduced_spec();
  const auto store = build(spec, 2);
  const auto a = random_tensor<float>(Shape{1, 1, 16, 24}, 5, 0.0, 1.0);
  const auto b = random_tensor<float>(Shape{1, 1, 16, 24}, 6, 0.0, 1.0);
  Tensor4<float> ab(Shape{2, 1, 16, 24}), ba(Shape{2, 1, 16, 24});
  std::copy_n(a.plane(0, 0), 384, ab.plane(0, 0));
  std::copy_n(b.plane(0, 0), 384, ab.plane(1, 0));
  std::copy_n(b.plane(0, 0), 384, ba.plane(0, 0));
  std::copy_n(a.plane(0, 0), 384, ba.plane(1, 0));
  const auto o1 = forward(ab, store, spec).fused, o2 = forward(ba, store, spec).fused;
  const std::size_t per = 4 * 384;
  for (std::size_t i = 0; i < per; ++i) {
    EXPECT_EQ(o1[i], o2[per + i]);
    EXPECT_EQ(o1[per + i], o2[i]);
  }
  const auto single = forward(a, store, spec).fused;
  for (std::size_t i = 0; i < per; ++i) EXPECT_EQ(single[i], o1[i]);
}

TEST(Network, EveryParameterReceivesGradient) {
  const auto spec = reduced_spec();
  auto store = build(spec, 7);
  std::mt19937 gen(7);
  const auto x = random_tensor<float>(Shape{2, 1, 16, 16}, 7, 0.0, 1.0);
  std::vector<LabelMap> masks{eyenet::testing::random_labels(16, 16, gen), eyenet::testing::random_labels(16, 16, gen)};
  Tape<float> tape;
  const auto out = forward(tape, tape.constant(x), store, spec);
  const auto loss = total_loss(out, one_hot<float>(std::span<const LabelMap>(masks)));
  tape.backward(loss.total);
  store.zero_grad();
  tape.accumulate_param_grads(store);
  for (const auto& e : store.entries()) {
    bool any = false;
    for (float g : e.grad.data()) any = any || g != 0.0f;
    EXPECT_TRUE(any) << e.name;
  }
}

// Each side head hangs off its own decoder stage: a loss on side k must not
// reach later decoder stages or the fusion layer.
TEST(Network, SideHeadsTapOnlyEarlierStages) {
  const auto spec = reduced_spec();
  const auto x = random_tensor<float>(Shape{1, 1, 16, 16}, 9, 0.0, 1.0);
  for (std::size_t k = 0; k < 3; ++k) {
    auto store = build(spec, 9);
    Tape<float> tape;
    const auto out = forward(tape, tape.constant(x), store, spec);
    std::size_t side_nodes = 0;
    for (const auto& n : tape.nodes()) side_nodes += n.scope == "dec" + std::to_string(k + 1) + "/side";
    EXPECT_GT(side_nodes, 0u);
    tape.backward(sum(out.all()[k]));
    store.zero_grad();
    tape.accumulate_param_grads(store);
    for (const auto& e : store.entries()) {
      bool any = false;
      for (float g : e.grad.data()) any = any || g != 0.0f;
      bool later = e.name.rfind("fuse", 0) == 0;
      for (std::size_t j = k + 1; j < 3; ++j) later = later || e.name.rfind("dec" + std::to_string(j + 1), 0) == 0;
      if (later) {
        EXPECT_FALSE(any) << "side" << k + 1 << " reached " << e.name;
      }
    }
  }
}

class NetworkGradient : public ::testing::TestWithParam<std::uint32_t> {};

TEST_P(NetworkGradient, AllHeadsAgainstFiniteDifferences) {
  const std::uint32_t seed = GetParam();
  const auto spec = reduced_spec();
  auto store = build<double>(spec, seed);
  // Nonzero biases so the check does not sit on a symmetric point.
  std::uint32_t s = seed * 131u;
  for (auto& e : store.entries()) {
    if (e.name.size() > 2 && e.name.ends_with(".b")) e.value = random_tensor<double>(e.value.shape(), ++s, -0.1, 0.1);
  }
  const auto x = random_tensor<double>(Shape{1, 1, 16, 16}, seed, 0.0, 1.0);
  // Narrower probe than for single blocks: the whole net has far more kinks.
  const auto res = check_block(
      [&](Tape<double>& t, const ParamStore<double>& st, Var<double> v) {
        const auto o = forward(t, v, st, spec);
        return concat_channels(concat_channels(o.side1, o.side2), concat_channels(o.side3, o.fused));
      },
      store, x, seed, 6, true, 1e-5);
  const auto w = res.worst();
  EXPECT_TRUE(w.passes(2e-3)) << "err " << w.max_rel_error << " analytic " << w.worst_analytic << " numeric "
                              << w.worst_numeric;
  EXPECT_LT(w.excluded_fraction(), 0.2);
}

INSTANTIATE_TEST_SUITE_P(Seeds, NetworkGradient, ::testing::Values(1u, 2u, 3u, 4u, 5u));

// ---------------------------------------------------------------- checkpoints

namespace {

ParamStore<float> trained_like_store() {
  auto s = build(reduced_spec(), 11);
  std::uint32_t k = 0;
  for (auto& e : s.entries()) {
    e.m = random_tensor<float>(e.value.shape(), ++k, -1.0, 1.0);
    e.v = random_tensor<float>(e.value.shape(), ++k, 0.0, 1.0);
  }
  s.step = 1234;
  return s;
}

void fix_crc(std::vector<std::uint8_t>& bytes) {
  const std::size_t body = bytes.size() - 4;
  const std::uint32_t crc = detail::crc32_of(bytes.data(), body);
  for (std::size_t i = 0; i < 4; ++i) bytes[body + i] = std::uint8_t(crc >> (8 * i));
}

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  const auto s = trained_like_store();
  const auto bytes = serialize_checkpoint(s);
  const auto back = deserialize_checkpoint(bytes);
  EXPECT_TRUE(back == s);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = eyenet::testing::scratch_dir("ckpt");
  const auto s = trained_like_store();
  checkpoint_save(s, dir / "a.eynt");
  EXPECT_TRUE(checkpoint_load(dir / "a.eynt") == s);
  EXPECT_FALSE(std::filesystem::exists(dir / "a.eynt.tmp"));
  EXPECT_THROW(checkpoint_load(dir / "missing.eynt"), DataError);
}

TEST(Checkpoint, CorruptionIsDetected) {
  auto bytes = serialize_checkpoint(trained_like_store());
  bytes[bytes.size() / 2] ^= 0x10;
  try {
    deserialize_checkpoint(bytes);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
}

TEST(Checkpoint, TruncationIsDetected) {
  const auto bytes = serialize_checkpoint(trained_like_store());
  for (std::size_t keep : {std::size_t{3}, std::size_t{30}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + long(keep));
    EXPECT_THROW(deserialize_checkpoint(cut), CheckpointError) << keep;
    // Even with a valid checksum the structure is still incomplete.
    if (keep > 24) {
      fix_crc(cut);
      EXPECT_THROW(deserialize_checkpoint(cut), CheckpointError) << keep;
    }
  }
}

TEST(Checkpoint, BadMagicAndVersion) {
  auto bytes = serialize_checkpoint(trained_like_store());
  auto m = bytes;
  m[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(m), CheckpointError);
  auto v = bytes;
  v[4] = 9;
  fix_crc(v);
  EXPECT_THROW(deserialize_checkpoint(v), CheckpointError);
}

TEST(Checkpoint, LowerRankEntriesArePadded) {
  ParamStore<float> s;
  s.add("bias", random_tensor<float>(Shape{1, 1, 1, 5}, 1));
  auto bytes = serialize_checkpoint(s);
  // header 12 | name len 2 | "bias" 4 | rank | dims n c h w
  const std::size_t rank_at = 12 + 2 + 4;
  ASSERT_EQ(bytes[rank_at], 4);
  bytes[rank_at] = 1;
  bytes.erase(bytes.begin() + long(rank_at + 1), bytes.begin() + long(rank_at + 1 + 12));
  fix_crc(bytes);
  const auto back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.at("bias").value.shape(), (Shape{1, 1, 1, 5}));
  EXPECT_EQ(back.at("bias").value, s.at("bias").value);
}

TEST(Checkpoint, StructuralMismatchNamesTheEntry) {
  const auto ref = build(reduced_spec(), 0);
  ParamStore<float> missing;
  for (const auto& e : ref.entries())
    if (e.name != "fuse.w") missing.add(e.name, e.value);
  try {
    check_against(missing, ref);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("fuse.w"), std::string::npos);
  }
  EXPECT_THROW(check_against(build(NetworkSpec{}, 0), ref), CheckpointError);
  EXPECT_NO_THROW(check_against(build(reduced_spec(), 5), ref));
}
