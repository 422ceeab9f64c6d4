#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cw3/affine.hpp"
#include "cw3/ops.hpp"
#include "cw3/tensor.hpp"

namespace cw3 {

enum class Track : uint8_t { kForward = 0, kBackward = 1 };

// Node grid of one frame: [H',W',C] with unit-norm channel vectors.
struct FeatureMap {
  Tensor data;
  int frame_id = 0;
  Track track = Track::kForward;

  int64_t rows() const { return data.shape()[0]; }
  int64_t cols() const { return data.shape()[1]; }
  int64_t channels() const { return data.shape()[2]; }
  int64_t nodes() const { return rows() * cols(); }
};

struct EncoderConfig {
  enum class Head : uint8_t { kConv1x1 = 0, kTwoFc = 1 };
  // How the total downsample_factor is realized: stride-2 convs in the first
  // blocks, or all stride-1 convs followed by one average pool.
  enum class StrideLayout : uint8_t { kStridedConvs = 0, kFinalPool = 1 };

  int num_blocks = 4;
  std::vector<int> channels = {16, 32, 32, 32};
  int kernel_size = 3;
  PaddingMode padding = PaddingMode::kZero;
  int downsample_factor = 4;
  Head head = Head::kConv1x1;
  int head_hidden = 128;
  int embed_dim = 64;
  StrideLayout stride_layout = StrideLayout::kStridedConvs;
  double norm_eps = 1e-5;

  void validate() const;
  std::vector<int> block_strides() const;
};

// Where node (i,j) sits in input pixels: pixel = offset + index * stride.
struct NodeGeometry {
  double offset_y = 0, offset_x = 0;
  double stride = 1;
  int64_t rows = 0, cols = 0;
};

struct EncoderWeights {
  std::vector<Tensor> conv;
  std::vector<Tensor> gain, bias;
  Tensor head1_w, head1_b;
  Tensor head2_w, head2_b;  // only for the two-layer head

  Dtype dtype() const { return conv.at(0).dtype(); }
  std::vector<std::pair<std::string, Tensor>> named() const;
  static EncoderWeights from_named(
      const std::vector<std::pair<std::string, Tensor>>& entries,
      const EncoderConfig& config);
  // Same storage, fresh leaves; each worker tape clones so gradients stay
  // private while values are shared.
  EncoderWeights shared_clone(bool requires_grad) const;
  EncoderWeights copy_as(Dtype dt, bool requires_grad) const;
  void zero_grad();
  void foreach(const std::function<void(Tensor&)>& fn);
};

EncoderWeights init_weights(const EncoderConfig& config, uint64_t seed,
                            Dtype dt = Dtype::kF64);

// Output grid extents for a given input; throws the contract errors
// (divisibility for padded modes, >=2 nodes for none).
std::pair<int64_t, int64_t> node_grid_extent(const EncoderConfig& config,
                                             int64_t h, int64_t w);
NodeGeometry node_geometry(const EncoderConfig& config, int64_t h, int64_t w);

// Re-express a transform given in the image's normalized frame ([-1,1]
// across pixel centers) in the node grid's normalized frame ([-1,1] across
// node centers). The node grid covers [offset, offset + (n-1)*stride] in
// pixels, not the full image, so a transform sampled on the image must be
// conjugated through this change of variables before it can warp feature
// grids or cut node validity masks; using it raw misplaces samples by a
// growing fraction of a node toward the grid edge.
AffineTransform node_frame_transform(const AffineTransform& t,
                                     const NodeGeometry& geom,
                                     int64_t image_h, int64_t image_w);

// frame [3,H,W] -> node grid [H',W',C], unit-norm rows. use_head=false stops
// before the projection head (the evaluation-time feature choice).
Tensor encode_frame(const Tensor& frame, const EncoderWeights& weights,
                    const EncoderConfig& config, bool use_head = true);

std::vector<FeatureMap> encode(const Tensor& frames, const EncoderWeights& weights,
                               const EncoderConfig& config,
                               Track track = Track::kForward, bool use_head = true);

}  // namespace cw3
