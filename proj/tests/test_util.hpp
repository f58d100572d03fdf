#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "man/rng.hpp"
#include "man/tensor.hpp"

namespace man_test {

inline man::Tensor random_tensor(std::vector<int> shape, man::Rng& rng,
                                 double lo = -1.0, double hi = 1.0,
                                 bool requires_grad = false) {
  man::Tensor t(std::move(shape), requires_grad);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Central differences with h = 1e-5 resolve gradients down to roughly 1e-9
// absolute noise, so differences on gradients far below that scale are
// meaningless; the denominator floor keeps them from dominating the check.
inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(std::abs(analytic) + std::abs(numeric), 1e-3);
}

// Central finite-difference check of d(fn)/d(leaf) for every entry of every
// leaf. fn must rebuild its graph from the leaves' current values on every
// call and return a scalar.
inline double grad_check(const std::vector<man::Tensor>& leaves,
                         const std::function<man::Tensor()>& fn,
                         double h = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    man::GradTape tape;
    man::Tensor loss = fn();
    man::backward(loss);
    for (const man::Tensor& leaf : leaves) analytic.push_back(leaf.grad_view());
  }

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    man::Tensor leaf = leaves[li];
    for (std::size_t i = 0; i < leaf.numel(); ++i) {
      const double orig = leaf.values()[i];
      leaf.values()[i] = orig + h;
      const double fp = fn().item();
      leaf.values()[i] = orig - h;
      const double fm = fn().item();
      leaf.values()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_err(analytic[li][i], numeric));
    }
  }
  return worst;
}

}  // namespace man_test
