#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "eyenet/errors.hpp"
#include "eyenet/tape.hpp"

namespace eyenet {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Elements whose +/-step probe crossed a non-smooth point (a leaky-relu
  // kink, a max-pool tie). The central difference is meaningless there.
  std::size_t excluded = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool passes(double tol) const { return checked > 0 && max_rel_error < tol; }
  double excluded_fraction() const {
    const std::size_t total = checked + excluded;
    return total ? double(excluded) / double(total) : 0.0;
  }
};

// Builds a scalar on the given tape from the leaf x.
template <typename T>
using ScalarFn = std::function<Var<T>(Tape<T>&, Var<T>)>;

// Central finite differences of f at x against reverse-mode gradients.
// Relative error per element is |a - n| / max(|a|, |n|, 1e-8). `indices`
// restricts the probe to a subset of elements (all when empty).
template <typename T>
GradCheckReport finite_difference_check(const ScalarFn<T>& f, const Tensor4<T>& x, T step,
                                        const std::vector<std::size_t>& indices = {}) {
  if (!(step > T(0))) throw ContractError("finite_difference_check: step must be positive");

  Tensor4<T> analytic;
  std::uint64_t base_sig = 0;
  {
    Tape<T> tape;
    tape.set_branch_tracking(true);
    Var<T> leaf = tape.variable(x);
    Var<T> out = f(tape, leaf);
    base_sig = tape.branch_signature();
    tape.backward(out);
    analytic = tape.grad(leaf);
  }

  auto eval = [&](const Tensor4<T>& point, std::uint64_t& sig) {
    Tape<T> tape;
    tape.set_branch_tracking(true);
    tape.set_grad_enabled(false);
    Var<T> leaf = tape.constant(point);
    const T v = f(tape, leaf).value().item();
    sig = tape.branch_signature();
    return double(v);
  };

  std::vector<std::size_t> probe = indices;
  if (probe.empty()) {
    probe.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) probe[i] = i;
  }

  GradCheckReport rep;
  Tensor4<T> point = x;
  for (std::size_t i : probe) {
    const T orig = point[i];
    std::uint64_t sp = 0, sm = 0;
    point[i] = orig + step;
    const double fp = eval(point, sp);
    point[i] = orig - step;
    const double fm = eval(point, sm);
    point[i] = orig;
    if (sp != base_sig || sm != base_sig) {
      ++rep.excluded;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * double(step));
    const double a = double(analytic[i]);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double err = std::abs(a - numeric) / denom;
    ++rep.checked;
    if (rep.checked == 1 || err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = i;
      rep.worst_analytic = a;
      rep.worst_numeric = numeric;
    }
  }
  return rep;
}

// Merges reports: the worst error and summed counts.
inline GradCheckReport merge(const GradCheckReport& a, const GradCheckReport& b) {
  GradCheckReport r = a.max_rel_error >= b.max_rel_error ? a : b;
  r.checked = a.checked + b.checked;
  r.excluded = a.excluded + b.excluded;
  return r;
}

}  // namespace eyenet
