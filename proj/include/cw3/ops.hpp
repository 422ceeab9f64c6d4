#pragma once

#include <cstdint>
#include <vector>

#include "cw3/tensor.hpp"

namespace cw3 {

// Border handling for conv2d. kZero/kReplicate/kReflect keep the spatial
// extent at stride 1 with pad (k-1)/2; kNone applies no padding so each conv
// shrinks the map. kReflect mirrors without repeating the edge sample.
enum class PaddingMode : uint8_t { kZero = 0, kReplicate = 1, kReflect = 2, kNone = 3 };

const char* padding_name(PaddingMode m);
PaddingMode padding_from_name(const std::string& name);

// Elementwise / scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor log_elem(const Tensor& a);

// Reductions and shape.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor diag_vector(const Tensor& a);  // [n,n] -> [n]

// Dense linear algebra on rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k] -> a.b^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // [k,m]x[k,n] -> a^T.b

// Row-wise softmax with max subtraction, [n,m] -> [n,m].
Tensor softmax_rows(const Tensor& a);

// L2-normalize the trailing dimension: y = x / sqrt(sum(x^2) + 1e-12).
Tensor l2_normalize_nodes(const Tensor& a);

// Image ops on [C,H,W] tensors.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, PaddingMode mode);
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
Tensor avg_pool2d(const Tensor& x, int window);
// Normalize across channels at each spatial position, then per-channel
// affine: y[c,p] = (x[c,p]-mu_p)/sqrt(var_p+eps) * gain[c] + bias[c].
Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                    double eps = 1e-5);

// Layout permutes between [C,H,W] and [H,W,C].
Tensor chw_to_hwc(const Tensor& a);
Tensor hwc_to_chw(const Tensor& a);

// Bilinear sampling of x [C,H,W] at grid [H2,W2,2] of normalized (x,y)
// coords; (-1,-1) is the center of the top-left pixel. Taps outside the
// array contribute zero. Gradients flow to x; the grid is a constant.
Tensor grid_sample_bilinear(const Tensor& x, const Tensor& grid);

// -(1/norm) * sum_i mask[i] * log(dot(wrow_i, tcol_i) + 1e-12) where the dot
// ranges over k: equivalent to the masked log-diagonal of matmul(w, t)
// without forming the product. norm = rows when norm_by_count is false, else
// the mask population count (minimum 1).
Tensor masked_diag_log_loss(const Tensor& w, const Tensor& t,
                            const std::vector<uint8_t>& mask,
                            bool norm_by_count = false);

}  // namespace cw3
