#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cw3/rng.hpp"
#include "cw3/tensor.hpp"

namespace cw3 {

// Crop-and-flip sampling parameters. scale is the crop area as a fraction of
// the source frame; aspect is the crop's width/height ratio.
struct TransformParams {
  double scale_lo = 0.08;
  double scale_hi = 1.0;
  double aspect_lo = 3.0 / 4.0;
  double aspect_hi = 4.0 / 3.0;
  double flip_prob = 0.5;
  void validate() const;
};

// 2x3 affine matrix mapping normalized target coordinates (the crop's own
// frame, pixel centers spanning [-1,1]) to normalized source coordinates.
struct AffineTransform {
  // Row-major [a b tx; c d ty]: (x,y) -> (a x + b y + tx, c x + d y + ty).
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};
  // Sampling metadata for logs.
  double scale_lo = 0, scale_hi = 0;
  bool flipped = false;
  std::array<double, 4> crop{0, 0, 1, 1};  // center x,y and half extents

  static AffineTransform identity() { return {}; }
  std::array<double, 2> apply(double x, double y) const {
    return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
  }
  double det() const { return m[0] * m[4] - m[1] * m[3]; }
  AffineTransform inverse() const;
  std::array<uint8_t, 48> matrix_bytes() const;  // six little-endian f64
};

// outer after inner: result(p) = outer(inner(p)).
AffineTransform compose(const AffineTransform& outer, const AffineTransform& inner);

// Random resized crop plus horizontal flip. The crop area ratio is uniform on
// [scale_lo, scale_hi]; aspect is log-uniform on the subinterval of
// aspect_range feasible for the drawn area, which keeps the area exactly
// uniform. If the feasible interval is empty after 10 attempts, falls back to
// a centered crop at scale_hi.
AffineTransform sample_transform(Rng& rng, const TransformParams& params);

// Alignment transform: maps backward-crop coordinates to forward-crop
// coordinates of the same source content, i.e. inverse(bf) after bb.
AffineTransform compose_forward_backward(const AffineTransform& bf,
                                         const AffineTransform& bb);

// Sampling grid [h,w,2] of normalized source coords for each target node.
Tensor affine_grid(const AffineTransform& b, int64_t h, int64_t w,
                   Dtype dt = Dtype::kF64);

// Bilinear warp of an [H,W,C] node grid (differentiable, zero outside).
Tensor warp_feature_hwc(const Tensor& fm, const AffineTransform& b);
// Same resampling for a [C,H,W] image (used at pixel resolution).
Tensor warp_image_chw(const Tensor& img, const AffineTransform& b);

// Warp of an all-ones grid, binarized at threshold.
std::vector<uint8_t> compute_mask(const AffineTransform& b, int64_t h, int64_t w,
                                  double threshold = 0.5);

}  // namespace cw3
