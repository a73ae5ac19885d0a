#pragma once

// Finite-difference checks of a parameterized block with respect to its
// input and to each of its parameter tensors. The scalar probed is
// sum(block(x) * R) for a fixed random R so no gradient is trivially uniform.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eyenet/gradcheck.hpp"
#include "eyenet/param_store.hpp"
#include "test_util.hpp"

namespace eyenet::testing {

using BlockFn = std::function<Var<double>(Tape<double>&, const ParamStore<double>&, Var<double>)>;

struct BlockCheck {
  GradCheckReport input;
  std::vector<std::pair<std::string, GradCheckReport>> params;

  GradCheckReport worst() const {
    GradCheckReport w = input;
    for (const auto& [_, r] : params) w = merge(w, r);
    return w;
  }
};

// `step` is the central-difference half width. `max_param_elements` caps the probed elements per parameter tensor (evenly
// strided) to bound runtime on large layers; 0 probes all of them.
inline BlockCheck check_block(const BlockFn& block, const ParamStore<double>& store, const Tensor4<double>& x,
                              std::uint32_t seed, std::size_t max_param_elements = 0, bool check_input = true,
                              double step = 1e-3) {
  Tensor4<double> out_shape_probe;
  {
    Tape<double> t;
    t.set_grad_enabled(false);
    out_shape_probe = block(t, store, t.constant(x)).value();
  }
  const Tensor4<double> R = random_tensor<double>(out_shape_probe.shape(), seed ^ 0x5eedu, -1.0, 1.0);

  BlockCheck res;
  if (check_input) {
    res.input = finite_difference_check<double>(
        [&](Tape<double>& t, Var<double> leaf) { return sum(mul(block(t, store, leaf), t.constant(R))); }, x, step);
  }
  for (const auto& e : store.entries()) {
    std::vector<std::size_t> idx;
    const std::size_t n = e.value.size();
    if (max_param_elements && n > max_param_elements) {
      for (std::size_t k = 0; k < max_param_elements; ++k) idx.push_back((k * n) / max_param_elements + (seed % (n / max_param_elements)));
    }
    const std::string name = e.name;
    auto rep = finite_difference_check<double>(
        [&](Tape<double>& t, Var<double> leaf) {
          t.bind(name, leaf);
          return sum(mul(block(t, store, t.constant(x)), t.constant(R)));
        },
        e.value, step, idx);
    res.params.emplace_back(name, rep);
  }
  return res;
}

// Replaces every parameter with uniform values in [-a, a] (biases included)
// so checks do not run at the zero-bias initialization only.
inline void randomize(ParamStore<double>& store, std::uint32_t seed, double a = 0.5) {
  std::uint32_t s = seed;
  for (auto& e : store.entries()) e.value = random_tensor<double>(e.value.shape(), ++s * 7919u, -a, a);
}

}  // namespace eyenet::testing
