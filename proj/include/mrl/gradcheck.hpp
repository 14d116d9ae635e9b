#pragma once

// Central-difference gradient verification for double-precision graphs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mrl/rng.hpp"
#include "mrl/tensor.hpp"

namespace mrl {

struct GradCheckOptions {
  double eps = 1e-5;
  // Max coordinates probed per leaf; 0 means all of them.
  std::size_t max_coords_per_leaf = 0;
  uint64_t seed = 0x9e3779b97f4a7c15ull;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "<leaf index>:<coordinate>"
};

// rebuild() must construct the scalar loss from the current leaf values.
// Analytic grads come from one backward pass; each probed coordinate is
// perturbed +/-eps and the loss re-evaluated under NoGradGuard.
inline GradCheckResult check_gradients(std::vector<ad::Tensor<double>> leaves,
                                       const std::function<ad::Tensor<double>()>& rebuild,
                                       const GradCheckOptions& opt = {}) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  {
    auto loss = rebuild();
    ad::backward(loss);
  }
  GradCheckResult res;
  Rng rng(opt.seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    const std::size_t n = leaf.size();
    std::vector<std::size_t> coords;
    if (opt.max_coords_per_leaf == 0 || opt.max_coords_per_leaf >= n) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      // sample without replacement
      std::vector<std::size_t> all(n);
      for (std::size_t i = 0; i < n; ++i) all[i] = i;
      for (std::size_t i = 0; i < opt.max_coords_per_leaf; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(all[i], all[j]);
        coords.push_back(all[i]);
      }
    }
    for (const std::size_t c : coords) {
      const double orig = leaf.value()[c];
      double fp, fm;
      {
        ad::NoGradGuard ng;
        leaf.value()[c] = orig + opt.eps;
        fp = rebuild().item();
        leaf.value()[c] = orig - opt.eps;
        fm = rebuild().item();
        leaf.value()[c] = orig;
      }
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double analytic = leaf.grad()[c];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
      const double rel = std::abs(numeric - analytic) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = std::to_string(li) + ":" + std::to_string(c);
      }
    }
  }
  return res;
}

}  // namespace mrl
