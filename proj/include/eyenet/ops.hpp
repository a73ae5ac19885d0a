#pragma once

// Eager (tape-free) forms of the tensor operations. Same kernels as the
// differentiable forms in tape.hpp.

#include "eyenet/kernels.hpp"
#include "eyenet/tape.hpp"

namespace eyenet {

using kernels::add;
using kernels::avg_pool2d;
using kernels::channel_mean_max;
using kernels::concat_channels;
using kernels::global_avg_pool;
using kernels::global_max_pool;
using kernels::leaky_relu;
using kernels::mul;
using kernels::sigmoid;
using kernels::slice_channels;
using kernels::softmax_channels;
using kernels::upsample_nearest;

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const ConvParams<T>& p) {
  return kernels::conv2d(x, p.kernel, p.bias.empty() ? nullptr : &p.bias, p.geom);
}

}  // namespace eyenet
