#pragma once

// Full EyeNet assembly.
//
//   x (n,1,H,W) || normalized coords (n,2,H,W)
//   stem     : 3x3 conv -> stem_channels, leaky relu                      (H)
//   encoder k: 3x3 stride-2 conv (dilation d_k), residual unit x2         (H/2, H/4, H/8)
//   bottleneck: e3 || cbam(e3)
//   decoder k: upsample x2, residual unit, CS-SE, [side head k],       (H/4, H/2, H)
//              then for k < 3: concat mirror skip (e2, e1), 3x3 conv + leaky relu
//              (decoder 3 feeds only its side head, so it has no merge conv)
//   side head k: 1x1 conv -> classes, upsample to H, 3x3 avg pool (stride 1), 3x3 conv
//   fused    : 1x1 conv over side1 || side2 || side3

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "eyenet/blocks.hpp"
#include "eyenet/errors.hpp"
#include "eyenet/param_store.hpp"
#include "eyenet/rng.hpp"
#include "eyenet/tape.hpp"

namespace eyenet {

struct NetworkSpec {
  std::size_t input_channels = 1;
  std::size_t stem_channels = 5;
  std::array<std::size_t, 3> enc_channels{24, 32, 48};
  std::array<std::size_t, 3> dec_channels{32, 16, 16};
  std::array<std::size_t, 3> enc_dilations{1, 2, 4};
  std::array<std::size_t, 3> dec_dilations{4, 2, 1};
  std::size_t cbam_ratio = 8;
  std::size_t cbam_kernel = 7;
  std::size_t n_classes = 4;
  std::array<std::size_t, 3> side_scales{4, 2, 1};
  double slope = 0.1;
  std::size_t max_parameters = 260000;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// Small widths used for gradient checks and desk-scale training.
inline NetworkSpec reduced_spec() {
  NetworkSpec s;
  s.stem_channels = 4;
  s.enc_channels = {8, 8, 8};
  s.dec_channels = {8, 8, 8};
  s.cbam_ratio = 4;
  return s;
}

inline void validate(const NetworkSpec& s) {
  if (s.n_classes != 4) throw ConfigError("n_classes must be 4 (background, sclera, iris, pupil)");
  if (s.input_channels == 0 || s.stem_channels == 0) throw ConfigError("channel widths must be positive");
  for (std::size_t k = 0; k < 3; ++k) {
    if (s.enc_channels[k] == 0 || s.dec_channels[k] == 0) throw ConfigError("channel widths must be positive");
    if (s.enc_dilations[k] == 0 || s.dec_dilations[k] == 0) throw ConfigError("dilations must be positive");
  }
  const std::array<std::size_t, 3> expect{4, 2, 1};
  if (s.side_scales != expect) {
    throw ConfigError("side_scales must be 4,2,1 (decoder outputs sit at H/4, H/2, H)");
  }
  if (s.cbam_ratio == 0 || s.enc_channels[2] % s.cbam_ratio != 0) {
    throw ConfigError("cbam_ratio " + std::to_string(s.cbam_ratio) + " must divide bottleneck width " +
                      std::to_string(s.enc_channels[2]));
  }
}

// Every parameterized layer of the network, in registration order.
struct NetworkLayout {
  ConvSpec stem;
  std::array<ConvSpec, 3> down;
  std::array<std::array<ResidualUnitParams, 2>, 3> enc_units;
  CbamParams cbam;
  std::array<ResidualUnitParams, 3> dec_units;
  std::array<CsseParams, 3> dec_csse;
  std::array<ConvSpec, 2> dec_merge;
  std::array<ConvSpec, 3> side_classify;
  std::array<ConvSpec, 3> side_refine;
  ConvSpec fuse;
};

inline NetworkLayout make_layout(const NetworkSpec& s) {
  validate(s);
  NetworkLayout L;
  L.stem = make_conv("stem", s.input_channels + 2, s.stem_channels, 3);
  std::size_t prev = s.stem_channels;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::string p = "enc" + std::to_string(k + 1);
    const std::size_t c = s.enc_channels[k];
    L.down[k] = make_conv(p + ".down", prev, c, 3, s.enc_dilations[k], 2);
    L.enc_units[k][0] = make_residual_unit(p + ".ru1", c, c, s.enc_dilations[k]);
    L.enc_units[k][1] = make_residual_unit(p + ".ru2", c, c, s.enc_dilations[k]);
    prev = c;
  }
  L.cbam = make_cbam("cbam", s.enc_channels[2], s.cbam_ratio, s.cbam_kernel);
  prev = 2 * s.enc_channels[2];
  const std::array<std::size_t, 2> skips{s.enc_channels[1], s.enc_channels[0]};
  for (std::size_t k = 0; k < 3; ++k) {
    const std::string p = "dec" + std::to_string(k + 1);
    const std::size_t d = s.dec_channels[k];
    L.dec_units[k] = make_residual_unit(p + ".ru", prev, d, s.dec_dilations[k]);
    L.dec_csse[k] = make_csse(p + ".csse", d);
    if (k < 2) L.dec_merge[k] = make_conv(p + ".merge", d + skips[k], d, 3, s.dec_dilations[k]);
    const std::string sp = "side" + std::to_string(k + 1);
    L.side_classify[k] = make_conv(sp + ".classify", d, s.n_classes, 1);
    L.side_refine[k] = make_conv(sp + ".refine", s.n_classes, s.n_classes, 3);
    prev = d;
  }
  L.fuse = make_conv("fuse", 3 * s.n_classes, s.n_classes, 1);
  return L;
}

// Closed-form parameter count, computed from widths alone (independent of
// the store built by build()).
inline std::size_t expected_parameter_count(const NetworkSpec& s) {
  validate(s);
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return k * k * in * out + out; };
  std::size_t n = conv(s.input_channels + 2, s.stem_channels, 3);
  std::size_t prev = s.stem_channels;
  for (std::size_t c : s.enc_channels) {
    n += conv(prev, c, 3) + 2 * residual_unit_parameter_count(c, c);
    prev = c;
  }
  n += cbam_parameter_count(s.enc_channels[2], s.cbam_ratio, s.cbam_kernel);
  prev = 2 * s.enc_channels[2];
  const std::array<std::size_t, 2> skips{s.enc_channels[1], s.enc_channels[0]};
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t d = s.dec_channels[k];
    n += residual_unit_parameter_count(prev, d) + (d + 1);
    if (k < 2) n += conv(d + skips[k], d, 3);
    n += conv(d, s.n_classes, 1) + conv(s.n_classes, s.n_classes, 3);
    prev = d;
  }
  n += conv(3 * s.n_classes, s.n_classes, 1);
  return n;
}

// Allocates and initializes every learnable tensor. Deterministic in seed.
template <typename T = float>
ParamStore<T> build(const NetworkSpec& spec, std::uint64_t seed) {
  const NetworkLayout L = make_layout(spec);
  ParamStore<T> store;
  SplitMix64 rng(seed);
  register_params(store, L.stem, rng);
  for (std::size_t k = 0; k < 3; ++k) {
    register_params(store, L.down[k], rng);
    register_params(store, L.enc_units[k][0], rng);
    register_params(store, L.enc_units[k][1], rng);
  }
  register_params(store, L.cbam, rng);
  for (std::size_t k = 0; k < 3; ++k) {
    register_params(store, L.dec_units[k], rng);
    register_params(store, L.dec_csse[k], rng);
    if (k < 2) register_params(store, L.dec_merge[k], rng);
    register_params(store, L.side_classify[k], rng);
    register_params(store, L.side_refine[k], rng);
  }
  register_params(store, L.fuse, rng);
  const std::size_t count = store.parameter_count();
  if (count > spec.max_parameters) {
    throw ConfigError("parameter budget exceeded: " + std::to_string(count) + " > " +
                      std::to_string(spec.max_parameters));
  }
  return store;
}

template <typename V>
struct ForwardOutputs {
  V side1;
  V side2;
  V side3;
  V fused;

  std::array<V, 4> all() const { return {side1, side2, side3, fused}; }
};

inline void check_input_shape(const Shape& s, const NetworkSpec& spec) {
  if (s.c != spec.input_channels) {
    throw ShapeError("forward: input " + s.str() + " must have " + std::to_string(spec.input_channels) + " channel(s)");
  }
  if (s.n == 0 || s.h == 0 || s.w == 0 || s.h % 8 != 0 || s.w % 8 != 0) {
    throw ShapeError("forward: input " + s.str() + " spatial dims must be positive multiples of 8");
  }
}

// Logits of the three side heads and the fused head, all at input resolution.
template <typename T>
ForwardOutputs<Var<T>> forward(Tape<T>& tape, Var<T> x, const ParamStore<T>& params, const NetworkSpec& spec) {
  check_input_shape(x.shape(), spec);
  const NetworkLayout L = make_layout(spec);
  const Shape xs = x.shape();
  const T slope = static_cast<T>(spec.slope);

  Tensor4<T> coords1 = coord_normalize(coord_channels<T>(xs.h, xs.w));
  Tensor4<T> coords(Shape{xs.n, 2, xs.h, xs.w});
  for (std::size_t n = 0; n < xs.n; ++n) std::copy_n(coords1.plane(0, 0), 2 * xs.plane(), coords.plane(n, 0));

  Var<T> stem;
  {
    typename Tape<T>::ScopeGuard g(tape, "stem");
    stem = leaky_relu(apply_conv(tape, params, L.stem, concat_channels(x, tape.constant(std::move(coords)))), slope);
  }

  std::array<Var<T>, 3> enc;
  Var<T> h = stem;
  for (std::size_t k = 0; k < 3; ++k) {
    typename Tape<T>::ScopeGuard g(tape, "enc" + std::to_string(k + 1));
    h = leaky_relu(apply_conv(tape, params, L.down[k], h), slope);
    h = residual_unit(tape, params, L.enc_units[k][0], h);
    h = residual_unit(tape, params, L.enc_units[k][1], h);
    enc[k] = h;
  }

  {
    typename Tape<T>::ScopeGuard g(tape, "bottleneck");
    h = concat_channels(enc[2], cbam_apply(tape, params, L.cbam, enc[2]));
  }

  const std::array<Var<T>, 2> skips{enc[1], enc[0]};
  std::array<Var<T>, 3> sides;
  for (std::size_t k = 0; k < 3; ++k) {
    typename Tape<T>::ScopeGuard g(tape, "dec" + std::to_string(k + 1));
    Var<T> u = upsample_nearest(h, 2);
    u = residual_unit(tape, params, L.dec_units[k], u);
    Var<T> gated = csse_apply(tape, params, L.dec_csse[k], u);
    {
      typename Tape<T>::ScopeGuard sg(tape, "side");
      Var<T> s = apply_conv(tape, params, L.side_classify[k], gated);
      s = upsample_nearest(s, spec.side_scales[k]);
      s = avg_pool2d(s, 3, 1, 1);
      sides[k] = apply_conv(tape, params, L.side_refine[k], s);
    }
    if (k < 2) h = leaky_relu(apply_conv(tape, params, L.dec_merge[k], concat_channels(gated, skips[k])), slope);
  }

  typename Tape<T>::ScopeGuard g(tape, "fuse");
  Var<T> fused = apply_conv(tape, params, L.fuse, concat_channels(concat_channels(sides[0], sides[1]), sides[2]));
  return ForwardOutputs<Var<T>>{sides[0], sides[1], sides[2], fused};
}

// Inference-only forward returning logit tensors.
template <typename T>
ForwardOutputs<Tensor4<T>> forward(const Tensor4<T>& x, const ParamStore<T>& params, const NetworkSpec& spec) {
  Tape<T> tape;
  tape.set_grad_enabled(false);
  auto out = forward(tape, tape.constant(x), params, spec);
  return ForwardOutputs<Tensor4<T>>{out.side1.value(), out.side2.value(), out.side3.value(), out.fused.value()};
}

}  // namespace eyenet
