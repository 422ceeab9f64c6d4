#pragma once

// Central-finite-difference oracle for reverse-mode gradients. Each check
// rebuilds the graph from leaf tensors, so the loss function must construct
// its ops from the leaves on every call. Double precision only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cw3/rng.hpp"
#include "cw3/tensor.hpp"

namespace gradcheck {

using LossFn = std::function<cw3::Tensor(std::vector<cw3::Tensor>&)>;

struct Result {
  double max_rel = 0.0;
  int64_t checked = 0;
};

// Relative error |analytic - numeric| / max(1, |analytic|, |numeric|) over
// every element of every leaf.
inline Result check(std::vector<cw3::Tensor> leaves, const LossFn& fn,
                    double eps = 1e-5) {
  for (auto& leaf : leaves)
    if (leaf.dtype() != cw3::Dtype::kF64)
      throw std::invalid_argument("gradcheck: f64 leaves required");

  // Backward accumulates, and callers often reuse leaves across checks.
  for (auto& leaf : leaves) leaf.zero_grad();
  cw3::Tensor loss = fn(leaves);
  if (loss.numel() != 1) throw std::invalid_argument("gradcheck: scalar loss required");
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) analytic.push_back(leaf.grad_to_doubles());

  Result result;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    for (int64_t i = 0; i < leaf.numel(); ++i) {
      const double saved = leaf.at(i);
      leaf.set(i, saved + eps);
      const double hi = fn(leaves).item();
      leaf.set(i, saved - eps);
      const double lo = fn(leaves).item();
      leaf.set(i, saved);
      const double numeric = (hi - lo) / (2.0 * eps);
      const double a = analytic[li][static_cast<size_t>(i)];
      const double rel =
          std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      result.max_rel = std::max(result.max_rel, rel);
      ++result.checked;
    }
  }
  return result;
}

inline std::vector<double> random_values(cw3::Rng& rng, int64_t n, double lo,
                                         double hi) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Values bounded away from zero, for ops with a kink or a log there.
inline std::vector<double> random_signed_away(cw3::Rng& rng, int64_t n,
                                              double margin, double mag) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) {
    const double s = rng.bernoulli(0.5) ? 1.0 : -1.0;
    x = s * rng.uniform(margin, mag);
  }
  return v;
}

}  // namespace gradcheck
