#include "cw3/affine.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "cw3/ops.hpp"

namespace cw3 {

void TransformParams::validate() const {
  if (!(scale_lo > 0) || !(scale_lo <= scale_hi) || !(scale_hi <= 1.0))
    throw std::invalid_argument("TransformParams: need 0 < scale_lo <= scale_hi <= 1");
  if (!(aspect_lo > 0) || !(aspect_lo <= aspect_hi))
    throw std::invalid_argument("TransformParams: need 0 < aspect_lo <= aspect_hi");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0))
    throw std::invalid_argument("TransformParams: flip_prob must be in [0,1]");
}

AffineTransform AffineTransform::inverse() const {
  const double d = det();
  if (std::abs(d) < 1e-6)
    throw std::invalid_argument("AffineTransform: singular linear part");
  AffineTransform out;
  const double ia = m[4] / d, ib = -m[1] / d, ic = -m[3] / d, id = m[0] / d;
  out.m = {ia, ib, -(ia * m[2] + ib * m[5]), ic, id, -(ic * m[2] + id * m[5])};
  return out;
}

std::array<uint8_t, 48> AffineTransform::matrix_bytes() const {
  std::array<uint8_t, 48> out;
  for (int i = 0; i < 6; ++i) {
    uint64_t bits;
    std::memcpy(&bits, &m[i], 8);
    for (int b = 0; b < 8; ++b)
      out[i * 8 + b] = static_cast<uint8_t>(bits >> (8 * b));
  }
  return out;
}

AffineTransform compose(const AffineTransform& outer, const AffineTransform& inner) {
  AffineTransform out;
  out.m[0] = outer.m[0] * inner.m[0] + outer.m[1] * inner.m[3];
  out.m[1] = outer.m[0] * inner.m[1] + outer.m[1] * inner.m[4];
  out.m[2] = outer.m[0] * inner.m[2] + outer.m[1] * inner.m[5] + outer.m[2];
  out.m[3] = outer.m[3] * inner.m[0] + outer.m[4] * inner.m[3];
  out.m[4] = outer.m[3] * inner.m[1] + outer.m[4] * inner.m[4];
  out.m[5] = outer.m[3] * inner.m[2] + outer.m[4] * inner.m[5] + outer.m[5];
  return out;
}

AffineTransform sample_transform(Rng& rng, const TransformParams& params) {
  params.validate();
  double area = params.scale_hi;
  double aspect = 1.0;
  bool found = false;
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double a = rng.uniform(params.scale_lo, params.scale_hi);
    // Half extents hx = sqrt(a*rho), hy = sqrt(a/rho) must fit in [-1,1], so
    // rho is confined to [a, 1/a] intersected with the aspect range.
    const double rlo = std::max(params.aspect_lo, a);
    const double rhi = std::min(params.aspect_hi, 1.0 / a);
    if (rlo <= rhi) {
      area = a;
      aspect = std::exp(rng.uniform(std::log(rlo), std::log(rhi)));
      found = true;
    }
  }
  const double hx = std::sqrt(area * aspect);
  const double hy = std::sqrt(area / aspect);
  const double ux = found ? rng.uniform(-(1.0 - hx), 1.0 - hx) : 0.0;
  const double uy = found ? rng.uniform(-(1.0 - hy), 1.0 - hy) : 0.0;
  const bool flip = rng.bernoulli(params.flip_prob);

  AffineTransform out;
  out.m = {flip ? -hx : hx, 0.0, ux, 0.0, hy, uy};
  out.scale_lo = params.scale_lo;
  out.scale_hi = params.scale_hi;
  out.flipped = flip;
  out.crop = {ux, uy, hx, hy};
  return out;
}

AffineTransform compose_forward_backward(const AffineTransform& bf,
                                         const AffineTransform& bb) {
  AffineTransform out = compose(bf.inverse(), bb);
  out.scale_lo = bf.scale_lo;
  out.scale_hi = bf.scale_hi;
  return out;
}

Tensor affine_grid(const AffineTransform& b, int64_t h, int64_t w, Dtype dt) {
  if (h < 1 || w < 1) throw std::invalid_argument("affine_grid: empty grid");
  Tensor grid = Tensor::zeros({h, w, 2}, dt);
  for (int64_t i = 0; i < h; ++i) {
    const double y = h == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / (h - 1);
    for (int64_t j = 0; j < w; ++j) {
      const double x = w == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(j) / (w - 1);
      const auto p = b.apply(x, y);
      grid.set((i * w + j) * 2, p[0]);
      grid.set((i * w + j) * 2 + 1, p[1]);
    }
  }
  return grid;
}

Tensor warp_feature_hwc(const Tensor& fm, const AffineTransform& b) {
  if (fm.rank() != 3)
    throw std::invalid_argument("warp_feature_hwc: [H,W,C] tensor required");
  const int64_t h = fm.shape()[0], w = fm.shape()[1];
  Tensor grid = affine_grid(b, h, w, fm.dtype());
  return chw_to_hwc(grid_sample_bilinear(hwc_to_chw(fm), grid));
}

Tensor warp_image_chw(const Tensor& img, const AffineTransform& b) {
  if (img.rank() != 3)
    throw std::invalid_argument("warp_image_chw: [C,H,W] tensor required");
  Tensor grid = affine_grid(b, img.shape()[1], img.shape()[2], img.dtype());
  return grid_sample_bilinear(img, grid);
}

std::vector<uint8_t> compute_mask(const AffineTransform& b, int64_t h, int64_t w,
                                  double threshold) {
  Tensor ones = Tensor::full({1, h, w}, 1.0);
  Tensor grid = affine_grid(b, h, w, Dtype::kF64);
  Tensor warped = grid_sample_bilinear(ones, grid);
  std::vector<uint8_t> mask(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < h * w; ++i) mask[i] = warped.at(i) > threshold ? 1 : 0;
  return mask;
}

}  // namespace cw3
