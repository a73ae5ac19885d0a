#pragma once

// Forward and adjoint kernels for every tensor operation. These are pure
// functions over Tensor4; the tape (tape.hpp) wires them together. Adjoint
// kernels *accumulate* into the gradient buffers they are handed.
//
// Reductions (conv inner products, pooling sums, softmax normalizers) are
// accumulated in double regardless of T, in a fixed loop order, so results
// are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "eyenet/errors.hpp"
#include "eyenet/tensor.hpp"

namespace eyenet {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
};

// Learnable convolution: kernel (out_c, in_c, k_h, k_w), bias (1, out_c, 1, 1)
// or empty for no bias.
template <typename T = float>
struct ConvParams {
  Tensor4<T> kernel;
  Tensor4<T> bias;
  ConvGeometry geom;
};

// floor((in + 2p - d(k-1) - 1)/s) + 1, or a ConfigError if that is < 1.
inline std::size_t conv_output_extent(std::size_t in, std::size_t k, const ConvGeometry& g) {
  if (g.stride == 0 || g.dilation == 0) throw ConfigError("conv: stride and dilation must be positive");
  const auto span = static_cast<std::ptrdiff_t>(g.dilation * (k - 1) + 1);
  const auto padded = static_cast<std::ptrdiff_t>(in + 2 * g.padding);
  if (k == 0 || padded < span) {
    throw ConfigError("conv: zero-size output (input extent " + std::to_string(in) + ", kernel " +
                      std::to_string(k) + ", dilation " + std::to_string(g.dilation) + ", padding " +
                      std::to_string(g.padding) + ")");
  }
  return static_cast<std::size_t>((padded - span) / static_cast<std::ptrdiff_t>(g.stride)) + 1;
}

namespace kernels {

// Output positions o in [lo, hi) for which o*stride + offset lands inside [0, in).
struct TapRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

inline TapRange tap_range(std::ptrdiff_t offset, std::size_t in, std::size_t out, std::size_t stride) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(in) - 1 - offset;
  if (last < 0) return {};
  std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out), last / s + 1);
  if (hi <= lo) return {};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

// ---------------------------------------------------------------------------
// conv2d (cross-correlation, zero padding)

template <typename T>
Shape conv2d_shape(const Shape& x, const Shape& k, const ConvGeometry& g) {
  if (x.c != k.c) {
    throw ShapeError("conv2d: input " + x.str() + " has " + std::to_string(x.c) +
                     " channels but kernel " + k.str() + " expects " + std::to_string(k.c));
  }
  return Shape{x.n, k.n, conv_output_extent(x.h, k.h, g), conv_output_extent(x.w, k.w, g)};
}

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& kernel, const Tensor4<T>* bias, const ConvGeometry& g) {
  const Shape os = conv2d_shape<T>(x.shape(), kernel.shape(), g);
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (bias && !bias->empty() && bias->size() != ks.n) {
    throw ShapeError("conv2d: bias " + bias->shape().str() + " does not match " + std::to_string(ks.n) +
                     " output channels");
  }
  Tensor4<T> out(os);
  std::vector<double> acc(os.plane());
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t oc = 0; oc < os.c; ++oc) {
      std::fill(acc.begin(), acc.end(), (bias && !bias->empty()) ? double((*bias)[oc]) : 0.0);
      for (std::size_t ic = 0; ic < xs.c; ++ic) {
        const T* xp = x.plane(n, ic);
        for (std::size_t ky = 0; ky < ks.h; ++ky) {
          const auto oy_off = static_cast<std::ptrdiff_t>(ky * g.dilation) - pad;
          const TapRange ry = tap_range(oy_off, xs.h, os.h, g.stride);
          for (std::size_t kx = 0; kx < ks.w; ++kx) {
            const double wv = kernel.at(oc, ic, ky, kx);
            const auto ox_off = static_cast<std::ptrdiff_t>(kx * g.dilation) - pad;
            const TapRange rx = tap_range(ox_off, xs.w, os.w, g.stride);
            for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
              const T* xrow = xp + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(oy * g.stride) + oy_off) * xs.w;
              double* arow = acc.data() + oy * os.w;
              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
                arow[ox] += wv * double(xrow[static_cast<std::ptrdiff_t>(ox * g.stride) + ox_off]);
              }
            }
          }
        }
      }
      T* op = out.plane(n, oc);
      for (std::size_t i = 0; i < acc.size(); ++i) op[i] = static_cast<T>(acc[i]);
    }
  }
  return out;
}

// Accumulates d(loss)/dx, d/dkernel, d/dbias. Any output pointer may be null.
template <typename T>
void conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& kernel, const ConvGeometry& g, const Tensor4<T>& gout,
                     Tensor4<T>* dx, Tensor4<T>* dkernel, Tensor4<T>* dbias) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  const Shape& os = gout.shape();
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);

  if (dx) {
    std::vector<double> acc(xs.plane());
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t ic = 0; ic < xs.c; ++ic) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t oc = 0; oc < os.c; ++oc) {
          const T* gp = gout.plane(n, oc);
          for (std::size_t ky = 0; ky < ks.h; ++ky) {
            const auto oy_off = static_cast<std::ptrdiff_t>(ky * g.dilation) - pad;
            const TapRange ry = tap_range(oy_off, xs.h, os.h, g.stride);
            for (std::size_t kx = 0; kx < ks.w; ++kx) {
              const double wv = kernel.at(oc, ic, ky, kx);
              const auto ox_off = static_cast<std::ptrdiff_t>(kx * g.dilation) - pad;
              const TapRange rx = tap_range(ox_off, xs.w, os.w, g.stride);
              for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                double* arow =
                    acc.data() + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(oy * g.stride) + oy_off) * xs.w;
                const T* grow = gp + oy * os.w;
                for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
                  arow[static_cast<std::ptrdiff_t>(ox * g.stride) + ox_off] += wv * double(grow[ox]);
                }
              }
            }
          }
        }
        T* dp = dx->plane(n, ic);
        for (std::size_t i = 0; i < acc.size(); ++i) dp[i] += static_cast<T>(acc[i]);
      }
    }
  }

  if (dkernel) {
    std::vector<double> acc(ks.size(), 0.0);
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t oc = 0; oc < os.c; ++oc) {
        const T* gp = gout.plane(n, oc);
        for (std::size_t ic = 0; ic < xs.c; ++ic) {
          const T* xp = x.plane(n, ic);
          for (std::size_t ky = 0; ky < ks.h; ++ky) {
            const auto oy_off = static_cast<std::ptrdiff_t>(ky * g.dilation) - pad;
            const TapRange ry = tap_range(oy_off, xs.h, os.h, g.stride);
            for (std::size_t kx = 0; kx < ks.w; ++kx) {
              const auto ox_off = static_cast<std::ptrdiff_t>(kx * g.dilation) - pad;
              const TapRange rx = tap_range(ox_off, xs.w, os.w, g.stride);
              double s = 0.0;
              for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                const T* xrow =
                    xp + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(oy * g.stride) + oy_off) * xs.w;
                const T* grow = gp + oy * os.w;
                for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
                  s += double(grow[ox]) * double(xrow[static_cast<std::ptrdiff_t>(ox * g.stride) + ox_off]);
                }
              }
              acc[((oc * ks.c + ic) * ks.h + ky) * ks.w + kx] += s;
            }
          }
        }
      }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) (*dkernel)[i] += static_cast<T>(acc[i]);
  }

  if (dbias) {
    for (std::size_t oc = 0; oc < os.c; ++oc) {
      double s = 0.0;
      for (std::size_t n = 0; n < os.n; ++n) {
        const T* gp = gout.plane(n, oc);
        for (std::size_t i = 0; i < os.plane(); ++i) s += double(gp[i]);
      }
      (*dbias)[oc] += static_cast<T>(s);
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise activations

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Tensor4<T> leaky_relu(const Tensor4<T>& x, T slope) {
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : slope * x[i];
  return out;
}

// Gradient at exactly 0 takes the negative-side slope.
template <typename T>
void leaky_relu_backward(const Tensor4<T>& x, T slope, const Tensor4<T>& gout, Tensor4<T>& dx) {
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] += x[i] > T(0) ? gout[i] : slope * gout[i];
}

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid_scalar(x[i]);
  return out;
}

template <typename T>
void sigmoid_backward(const Tensor4<T>& y, const Tensor4<T>& gout, Tensor4<T>& dx) {
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] += gout[i] * y[i] * (T(1) - y[i]);
}

// Per-(n, y, x) softmax across channels with max subtraction.
template <typename T>
Tensor4<T> softmax_channels(const Tensor4<T>& x) {
  const Shape& s = x.shape();
  if (s.c == 0) throw ContractError("softmax_channels: zero channels");
  Tensor4<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < s.plane(); ++p) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < s.c; ++c) m = std::max(m, double(x.plane(n, c)[p]));
      double z = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) z += std::exp(double(x.plane(n, c)[p]) - m);
      for (std::size_t c = 0; c < s.c; ++c) out.plane(n, c)[p] = static_cast<T>(std::exp(double(x.plane(n, c)[p]) - m) / z);
    }
  }
  return out;
}

template <typename T>
void softmax_channels_backward(const Tensor4<T>& y, const Tensor4<T>& gout, Tensor4<T>& dx) {
  const Shape& s = y.shape();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < s.plane(); ++p) {
      double dot = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) dot += double(gout.plane(n, c)[p]) * double(y.plane(n, c)[p]);
      for (std::size_t c = 0; c < s.c; ++c) {
        dx.plane(n, c)[p] += static_cast<T>(double(y.plane(n, c)[p]) * (double(gout.plane(n, c)[p]) - dot));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x) {
  const Shape& s = x.shape();
  if (s.plane() == 0) throw ContractError("global_avg_pool: empty spatial extent");
  Tensor4<T> out(Shape{s.n, s.c, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += double(p[i]);
      out.at(n, c, 0, 0) = static_cast<T>(acc / double(s.plane()));
    }
  }
  return out;
}

template <typename T>
void global_avg_pool_backward(const Shape& xs, const Tensor4<T>& gout, Tensor4<T>& dx) {
  const T inv = T(1) / static_cast<T>(xs.plane());
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T g = gout.at(n, c, 0, 0) * inv;
      T* p = dx.plane(n, c);
      for (std::size_t i = 0; i < xs.plane(); ++i) p[i] += g;
    }
  }
}

// First maximal element (row-major) per (n, c); written to `argmax`.
template <typename T>
Tensor4<T> global_max_pool(const Tensor4<T>& x, std::vector<std::size_t>* argmax = nullptr) {
  const Shape& s = x.shape();
  if (s.plane() == 0) throw ContractError("global_max_pool: empty spatial extent");
  Tensor4<T> out(Shape{s.n, s.c, 1, 1});
  if (argmax) argmax->assign(s.n * s.c, 0);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      std::size_t best = 0;
      for (std::size_t i = 1; i < s.plane(); ++i) {
        if (p[i] > p[best]) best = i;
      }
      out.at(n, c, 0, 0) = p[best];
      if (argmax) (*argmax)[n * s.c + c] = best;
    }
  }
  return out;
}

template <typename T>
void global_max_pool_backward(const Shape& xs, const std::vector<std::size_t>& argmax, const Tensor4<T>& gout,
                              Tensor4<T>& dx) {
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) dx.plane(n, c)[argmax[n * xs.c + c]] += gout.at(n, c, 0, 0);
  }
}

// Channel 0: mean over channels; channel 1: max over channels (first maximal
// channel recorded in `argmax`).
template <typename T>
Tensor4<T> channel_mean_max(const Tensor4<T>& x, std::vector<std::size_t>* argmax = nullptr) {
  const Shape& s = x.shape();
  if (s.c == 0) throw ContractError("channel_mean_max: zero channels");
  Tensor4<T> out(Shape{s.n, 2, s.h, s.w});
  if (argmax) argmax->assign(s.n * s.plane(), 0);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < s.plane(); ++p) {
      double acc = 0.0;
      std::size_t best = 0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const T v = x.plane(n, c)[p];
        acc += double(v);
        if (v > x.plane(n, best)[p]) best = c;
      }
      out.plane(n, 0)[p] = static_cast<T>(acc / double(s.c));
      out.plane(n, 1)[p] = x.plane(n, best)[p];
      if (argmax) (*argmax)[n * s.plane() + p] = best;
    }
  }
  return out;
}

template <typename T>
void channel_mean_max_backward(const Shape& xs, const std::vector<std::size_t>& argmax, const Tensor4<T>& gout,
                               Tensor4<T>& dx) {
  const T inv = T(1) / static_cast<T>(xs.c);
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t p = 0; p < xs.plane(); ++p) {
      const T gm = gout.plane(n, 0)[p] * inv;
      for (std::size_t c = 0; c < xs.c; ++c) dx.plane(n, c)[p] += gm;
      dx.plane(n, argmax[n * xs.plane() + p])[p] += gout.plane(n, 1)[p];
    }
  }
}

// Windowed mean. Padded taps are excluded from the divisor.
template <typename T>
Tensor4<T> avg_pool2d(const Tensor4<T>& x, std::size_t window, std::size_t stride, std::size_t padding = 0) {
  const Shape& s = x.shape();
  if (window == 0 || stride == 0) throw ConfigError("avg_pool2d: window and stride must be positive");
  const ConvGeometry g{stride, 1, padding};
  const Shape os{s.n, s.c, conv_output_extent(s.h, window, g), conv_output_extent(s.w, window, g)};
  Tensor4<T> out(os);
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* xp = x.plane(n, c);
      T* op = out.plane(n, c);
      for (std::size_t oy = 0; oy < os.h; ++oy) {
        const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) - pad;
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * stride) - pad;
          double acc = 0.0;
          std::size_t count = 0;
          for (std::ptrdiff_t yy = std::max<std::ptrdiff_t>(y0, 0);
               yy < std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(window), static_cast<std::ptrdiff_t>(s.h)); ++yy) {
            for (std::ptrdiff_t xx = std::max<std::ptrdiff_t>(x0, 0);
                 xx < std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(window), static_cast<std::ptrdiff_t>(s.w)); ++xx) {
              acc += double(xp[yy * static_cast<std::ptrdiff_t>(s.w) + xx]);
              ++count;
            }
          }
          op[oy * os.w + ox] = static_cast<T>(count ? acc / double(count) : 0.0);
        }
      }
    }
  }
  return out;
}

template <typename T>
void avg_pool2d_backward(const Shape& xs, std::size_t window, std::size_t stride, std::size_t padding,
                         const Tensor4<T>& gout, Tensor4<T>& dx) {
  const Shape& os = gout.shape();
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T* gp = gout.plane(n, c);
      T* dp = dx.plane(n, c);
      for (std::size_t oy = 0; oy < os.h; ++oy) {
        const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) - pad;
        const std::ptrdiff_t ylo = std::max<std::ptrdiff_t>(y0, 0);
        const std::ptrdiff_t yhi = std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(window), static_cast<std::ptrdiff_t>(xs.h));
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * stride) - pad;
          const std::ptrdiff_t xlo = std::max<std::ptrdiff_t>(x0, 0);
          const std::ptrdiff_t xhi = std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(window), static_cast<std::ptrdiff_t>(xs.w));
          const auto count = static_cast<std::size_t>((yhi - ylo) * (xhi - xlo));
          if (count == 0) continue;
          const T g = gp[oy * os.w + ox] / static_cast<T>(count);
          for (std::ptrdiff_t yy = ylo; yy < yhi; ++yy) {
            for (std::ptrdiff_t xx = xlo; xx < xhi; ++xx) dp[yy * static_cast<std::ptrdiff_t>(xs.w) + xx] += g;
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Resampling and channel plumbing

template <typename T>
Tensor4<T> upsample_nearest(const Tensor4<T>& x, std::size_t factor) {
  if (factor == 0) throw ConfigError("upsample_nearest: factor must be >= 1");
  const Shape& s = x.shape();
  Tensor4<T> out(Shape{s.n, s.c, s.h * factor, s.w * factor});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* xp = x.plane(n, c);
      T* op = out.plane(n, c);
      const std::size_t ow = s.w * factor;
      for (std::size_t oy = 0; oy < s.h * factor; ++oy) {
        const T* xrow = xp + (oy / factor) * s.w;
        for (std::size_t ox = 0; ox < ow; ++ox) op[oy * ow + ox] = xrow[ox / factor];
      }
    }
  }
  return out;
}

template <typename T>
void upsample_nearest_backward(const Shape& xs, std::size_t factor, const Tensor4<T>& gout, Tensor4<T>& dx) {
  const std::size_t ow = xs.w * factor;
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T* gp = gout.plane(n, c);
      T* dp = dx.plane(n, c);
      for (std::size_t y = 0; y < xs.h; ++y) {
        for (std::size_t x = 0; x < xs.w; ++x) {
          double acc = 0.0;
          for (std::size_t dy = 0; dy < factor; ++dy) {
            for (std::size_t dxx = 0; dxx < factor; ++dxx) acc += double(gp[(y * factor + dy) * ow + x * factor + dxx]);
          }
          dp[y * xs.w + x] += static_cast<T>(acc);
        }
      }
    }
  }
}

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + sa.str() + " vs " + sb.str());
  }
  Tensor4<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t pl = sa.plane();
  for (std::size_t n = 0; n < sa.n; ++n) {
    std::copy_n(a.plane(n, 0), sa.c * pl, out.plane(n, 0));
    std::copy_n(b.plane(n, 0), sb.c * pl, out.plane(n, sa.c));
  }
  return out;
}

template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& x, std::size_t begin, std::size_t count) {
  const Shape& s = x.shape();
  if (begin + count > s.c) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + s.str());
  }
  Tensor4<T> out(Shape{s.n, count, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) std::copy_n(x.plane(n, begin), count * s.plane(), out.plane(n, 0));
  return out;
}

// Accumulates gout into channels [begin, begin + gout.c) of dx.
template <typename T>
void add_channel_block(const Tensor4<T>& gout, std::size_t begin, Tensor4<T>& dx) {
  const Shape& gs = gout.shape();
  for (std::size_t n = 0; n < gs.n; ++n) {
    const T* gp = gout.plane(n, 0);
    T* dp = dx.plane(n, begin);
    for (std::size_t i = 0; i < gs.c * gs.plane(); ++i) dp[i] += gp[i];
  }
}

// Reads channels [begin, begin + dst.c) of src into dst (accumulating).
template <typename T>
void take_channel_block(const Tensor4<T>& src, std::size_t begin, Tensor4<T>& dst) {
  const Shape& ds = dst.shape();
  for (std::size_t n = 0; n < ds.n; ++n) {
    const T* sp = src.plane(n, begin);
    T* dp = dst.plane(n, 0);
    for (std::size_t i = 0; i < ds.c * ds.plane(); ++i) dp[i] += sp[i];
  }
}

// ---------------------------------------------------------------------------
// Broadcasting elementwise arithmetic. Each dim of each operand is either the
// output extent or 1.

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* what) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError(std::string(what) + ": cannot broadcast " + a.str() + " with " + b.str());
  };
  return Shape{dim(a.n, b.n), dim(a.c, b.c), dim(a.h, b.h), dim(a.w, b.w)};
}

struct BroadcastStrides {
  std::size_t n, c, h, w;
};

inline BroadcastStrides broadcast_strides(const Shape& s) {
  const std::size_t sw = 1, sh = s.w, sc = s.h * s.w, sn = s.c * s.h * s.w;
  return {s.n == 1 ? 0 : sn, s.c == 1 ? 0 : sc, s.h == 1 ? 0 : sh, s.w == 1 ? 0 : sw};
}

// Visits every output index with the matching operand offsets.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const BroadcastStrides sa = broadcast_strides(a);
  const BroadcastStrides sb = broadcast_strides(b);
  std::size_t o = 0;
  for (std::size_t n = 0; n < out.n; ++n)
    for (std::size_t c = 0; c < out.c; ++c)
      for (std::size_t y = 0; y < out.h; ++y)
        for (std::size_t x = 0; x < out.w; ++x, ++o)
          f(o, n * sa.n + c * sa.c + y * sa.h + x * sa.w, n * sb.n + c * sb.c + y * sb.h + x * sb.w);
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  const Shape os = broadcast_shape(a.shape(), b.shape(), "add");
  Tensor4<T> out(os);
  for_each_broadcast(os, a.shape(), b.shape(), [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = a[ia] + b[ib]; });
  return out;
}

template <typename T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b) {
  const Shape os = broadcast_shape(a.shape(), b.shape(), "mul");
  Tensor4<T> out(os);
  for_each_broadcast(os, a.shape(), b.shape(), [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = a[ia] * b[ib]; });
  return out;
}

// Reduction of a broadcast gradient back onto an operand shape, in double.
template <typename T>
void reduce_broadcast_grad(const Tensor4<T>& gout, const Shape& operand, const Tensor4<T>* other_factor,
                           const Shape& other_shape, Tensor4<T>& d, bool operand_is_a) {
  std::vector<double> acc(operand.size(), 0.0);
  const Shape& os = gout.shape();
  if (operand_is_a) {
    for_each_broadcast(os, operand, other_shape, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      acc[ia] += double(gout[o]) * (other_factor ? double((*other_factor)[ib]) : 1.0);
    });
  } else {
    for_each_broadcast(os, other_shape, operand, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      acc[ib] += double(gout[o]) * (other_factor ? double((*other_factor)[ia]) : 1.0);
    });
  }
  for (std::size_t i = 0; i < acc.size(); ++i) d[i] += static_cast<T>(acc[i]);
}

template <typename T>
double sum_all(const Tensor4<T>& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += double(x[i]);
  return acc;
}

}  // namespace kernels
}  // namespace eyenet
