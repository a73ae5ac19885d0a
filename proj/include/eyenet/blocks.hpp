#pragma once

// EyeNet building blocks: modified residual unit, CBAM channel and spatial
// attention, and channel-squeeze/spatial-excitation (CS-SE).
//
// Block parameter structs name their tensors inside a ParamStore; the store
// owns the values. A block is declared from its dimensions (make_*),
// registered into a store with initial values (register_params), and
// evaluated on a tape against that store.
//
// Closed-form parameter counts:
//   conv k x k, in -> out, bias   : k*k*in*out + out
//   residual unit in -> out       : 9*in*out + out + 9*out*out + out + in*out + out
//   CBAM over C, ratio r, kernel k: C*(C/r) + C/r + (C/r)*C + 2*k*k + 1
//   CS-SE over C                  : C + 1

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>

#include "eyenet/errors.hpp"
#include "eyenet/param_store.hpp"
#include "eyenet/rng.hpp"
#include "eyenet/tape.hpp"

namespace eyenet {

// A convolution whose kernel and bias live in a ParamStore under
// "<name>.w" and "<name>.b".
struct ConvSpec {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t k = 1;
  ConvGeometry geom{};
  bool bias = true;

  std::string weight_name() const { return name + ".w"; }
  std::string bias_name() const { return name + ".b"; }
  Shape weight_shape() const { return Shape{out, in, k, k}; }
  Shape bias_shape() const { return Shape{1, out, 1, 1}; }
  std::size_t parameter_count() const { return k * k * in * out + (bias ? out : 0); }
};

// Padding that keeps spatial dims for an odd kernel at the given dilation.
inline std::size_t same_padding(std::size_t k, std::size_t dilation) { return dilation * (k - 1) / 2; }

inline ConvSpec make_conv(std::string name, std::size_t in, std::size_t out, std::size_t k, std::size_t dilation = 1,
                          std::size_t stride = 1, bool bias = true) {
  if (in == 0 || out == 0 || k == 0) throw ConfigError("conv '" + name + "': zero-sized layer");
  return ConvSpec{std::move(name), in, out, k, ConvGeometry{stride, dilation, same_padding(k, dilation)}, bias};
}

// He-uniform kernel (bound sqrt(6 / fan_in)), zero bias.
template <typename T>
void register_params(ParamStore<T>& store, const ConvSpec& c, SplitMix64& rng) {
  Tensor4<T> w(c.weight_shape());
  const double bound = std::sqrt(6.0 / double(c.in * c.k * c.k));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.uniform(-bound, bound));
  store.add(c.weight_name(), std::move(w));
  if (c.bias) store.add(c.bias_name(), Tensor4<T>(c.bias_shape()));
}

template <typename T>
Var<T> apply_conv(Tape<T>& tape, const ParamStore<T>& store, const ConvSpec& c, Var<T> x) {
  std::optional<Var<T>> b;
  if (c.bias) b = tape.param(store, c.bias_name());
  return conv2d(x, tape.param(store, c.weight_name()), b, c.geom);
}

// ---------------------------------------------------------------------------
// Modified residual unit:
//   y = lrelu( conv_b(lrelu(conv_a(x))) + shortcut(x) ),  shortcut = 1x1 projection

struct ResidualUnitParams {
  ConvSpec conv_a;
  ConvSpec conv_b;
  ConvSpec shortcut;
  double slope = 0.1;

  std::size_t parameter_count() const {
    return conv_a.parameter_count() + conv_b.parameter_count() + shortcut.parameter_count();
  }
};

inline ResidualUnitParams make_residual_unit(const std::string& prefix, std::size_t in, std::size_t out,
                                             std::size_t dilation = 1) {
  return ResidualUnitParams{make_conv(prefix + ".conv_a", in, out, 3, dilation),
                            make_conv(prefix + ".conv_b", out, out, 3, dilation),
                            make_conv(prefix + ".shortcut", in, out, 1), 0.1};
}

inline std::size_t residual_unit_parameter_count(std::size_t in, std::size_t out) {
  return 9 * in * out + out + 9 * out * out + out + in * out + out;
}

template <typename T>
void register_params(ParamStore<T>& store, const ResidualUnitParams& p, SplitMix64& rng) {
  register_params(store, p.conv_a, rng);
  register_params(store, p.conv_b, rng);
  register_params(store, p.shortcut, rng);
}

template <typename T>
Var<T> residual_unit(Tape<T>& tape, const ParamStore<T>& store, const ResidualUnitParams& p, Var<T> x) {
  if (x.shape().c != p.conv_a.in) {
    throw ShapeError("residual_unit '" + p.conv_a.name + "': input " + x.shape().str() + " but unit expects " +
                     std::to_string(p.conv_a.in) + " channels");
  }
  const T slope = static_cast<T>(p.slope);
  Var<T> h = leaky_relu(apply_conv(tape, store, p.conv_a, x), slope);
  h = apply_conv(tape, store, p.conv_b, h);
  Var<T> s = apply_conv(tape, store, p.shortcut, x);
  return leaky_relu(add(h, s), slope);
}

// ---------------------------------------------------------------------------
// CBAM. w0: C -> C/r (with bias), w1: C/r -> C (no bias), both shared across
// the average and max branches; realized as 1x1 convs on (n, C, 1, 1).

struct CbamParams {
  std::size_t channels = 0;
  std::size_t ratio = 8;
  ConvSpec w0;
  ConvSpec w1;
  ConvSpec spatial;

  std::size_t parameter_count() const {
    return w0.parameter_count() + w1.parameter_count() + spatial.parameter_count();
  }
};

inline CbamParams make_cbam(const std::string& prefix, std::size_t channels, std::size_t ratio = 8,
                            std::size_t spatial_kernel = 7, bool w1_bias = false) {
  if (ratio == 0 || channels % ratio != 0 || channels / ratio == 0) {
    throw ConfigError("cbam '" + prefix + "': reduction ratio " + std::to_string(ratio) + " must divide " +
                      std::to_string(channels) + " channels");
  }
  if (spatial_kernel % 2 == 0) throw ConfigError("cbam '" + prefix + "': spatial kernel must be odd");
  const std::size_t hidden = channels / ratio;
  return CbamParams{channels, ratio, make_conv(prefix + ".w0", channels, hidden, 1),
                    make_conv(prefix + ".w1", hidden, channels, 1, 1, 1, w1_bias),
                    make_conv(prefix + ".spatial", 2, 1, spatial_kernel)};
}

inline std::size_t cbam_parameter_count(std::size_t channels, std::size_t ratio, std::size_t spatial_kernel = 7) {
  const std::size_t hidden = channels / ratio;
  return channels * hidden + hidden + hidden * channels + 2 * spatial_kernel * spatial_kernel + 1;
}

template <typename T>
void register_params(ParamStore<T>& store, const CbamParams& p, SplitMix64& rng) {
  register_params(store, p.w0, rng);
  register_params(store, p.w1, rng);
  register_params(store, p.spatial, rng);
}

// Per-channel gates C_A in (0, 1), shape (n, C, 1, 1).
template <typename T>
Var<T> cbam_channel_attention(Tape<T>& tape, const ParamStore<T>& store, const CbamParams& p, Var<T> x) {
  if (x.shape().c != p.channels) {
    throw ShapeError("cbam '" + p.w0.name + "': input " + x.shape().str() + " but block expects " +
                     std::to_string(p.channels) + " channels");
  }
  auto mlp = [&](Var<T> v) { return apply_conv(tape, store, p.w1, apply_conv(tape, store, p.w0, v)); };
  return sigmoid(add(mlp(global_avg_pool(x)), mlp(global_max_pool(x))));
}

// Channel gating, then spatial gating S_A = sigmoid(conv([mean_c || max_c])).
template <typename T>
Var<T> cbam_apply(Tape<T>& tape, const ParamStore<T>& store, const CbamParams& p, Var<T> x) {
  Var<T> y = mul(x, cbam_channel_attention(tape, store, p, x));
  Var<T> spatial = sigmoid(apply_conv(tape, store, p.spatial, channel_mean_max(y)));
  return mul(y, spatial);
}

// ---------------------------------------------------------------------------
// CS-SE: a 1x1 conv squeezes the channel fiber at each location into one
// sigmoid gate that rescales that location.

struct CsseParams {
  ConvSpec squeeze;
  std::size_t parameter_count() const { return squeeze.parameter_count(); }
};

inline CsseParams make_csse(const std::string& prefix, std::size_t channels) {
  return CsseParams{make_conv(prefix + ".squeeze", channels, 1, 1)};
}

template <typename T>
void register_params(ParamStore<T>& store, const CsseParams& p, SplitMix64& rng) {
  register_params(store, p.squeeze, rng);
}

template <typename T>
Var<T> csse_gate(Tape<T>& tape, const ParamStore<T>& store, const CsseParams& p, Var<T> x) {
  if (x.shape().c != p.squeeze.in) {
    throw ShapeError("csse '" + p.squeeze.name + "': input " + x.shape().str() + " but block expects " +
                     std::to_string(p.squeeze.in) + " channels");
  }
  return sigmoid(apply_conv(tape, store, p.squeeze, x));
}

template <typename T>
Var<T> csse_apply(Tape<T>& tape, const ParamStore<T>& store, const CsseParams& p, Var<T> x) {
  return mul(x, csse_gate(tape, store, p, x));
}

// ---------------------------------------------------------------------------
// Coordinate channels: channel 0 holds the row index, channel 1 the column
// index.

template <typename T = float>
Tensor4<T> coord_channels(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ConfigError("coord_channels: dims must be >= 1");
  Tensor4<T> out(Shape{1, 2, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      out.at(0, 0, y, x) = static_cast<T>(y);
      out.at(0, 1, y, x) = static_cast<T>(x);
    }
  }
  return out;
}

// Maps each coordinate channel linearly onto [-1, 1]; a length-1 axis maps
// to 0.
template <typename T>
Tensor4<T> coord_normalize(const Tensor4<T>& c) {
  const Shape& s = c.shape();
  if (s.c != 2) throw ShapeError("coord_normalize: expected 2 coordinate channels, got " + s.str());
  Tensor4<T> out(s);
  auto norm = [](T v, std::size_t len) { return len <= 1 ? T(0) : static_cast<T>(2.0 * double(v) / double(len - 1) - 1.0); };
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        out.at(n, 0, y, x) = norm(c.at(n, 0, y, x), s.h);
        out.at(n, 1, y, x) = norm(c.at(n, 1, y, x), s.w);
      }
    }
  }
  return out;
}

}  // namespace eyenet
