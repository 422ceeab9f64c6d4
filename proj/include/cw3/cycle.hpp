#pragma once

#include <cstdint>
#include <vector>

#include "cw3/affine.hpp"
#include "cw3/encoder.hpp"
#include "cw3/tensor.hpp"

namespace cw3 {

// Counts affinity evaluations so the O(T) sharing contract is testable.
struct WalkStats {
  int affinity_evals = 0;
};

// A(i,j) = softmax_j(<src_i, dst_j> / tau) over flattened node grids.
Tensor affinity(const Tensor& src_hwc, const Tensor& dst_hwc, double tau);
Tensor affinity(const FeatureMap& src, const FeatureMap& dst, double tau);

// Palindrome walk: forward features (first entry already warped), then the
// backward features in reversed temporal order [F_T^b ... F_1^b].
struct PalindromeBatch {
  std::vector<FeatureMap> forward;
  std::vector<FeatureMap> backward_reversed;
  AffineTransform b_fb;
  std::vector<uint8_t> mask;
  double tau = 0.05;
};

// Ordered product of the 2T-1 adjacent transitions along the palindrome.
Tensor palindrome_transition(const PalindromeBatch& batch);

// -(1/N) sum_i mask[i] * log(a_cyc[i,i] + 1e-12); the alternate
// normalization divides by the mask population count instead.
Tensor masked_cycle_loss(const Tensor& a_cyc, const std::vector<uint8_t>& mask,
                         bool norm_by_count = false);

// Sum over k = 1..T-1 of the masked cycle loss of
// [warp(F_k^f), F_{k+1}^f, ..., F_T^f, F_T^b, ..., F_k^b]. Shared transitions
// are computed once: affinity evaluations total 3T-3, and the walk reuses
// suffix products instead of rebuilding each cycle.
Tensor multi_cycle_loss(const std::vector<FeatureMap>& forward,
                        const std::vector<FeatureMap>& backward,
                        const AffineTransform& b_fb,
                        const std::vector<uint8_t>& mask, double tau,
                        bool norm_by_count = false, WalkStats* stats = nullptr);

}  // namespace cw3
