#pragma once

#include <cstdint>
#include <vector>

#include "cw3/encoder.hpp"
#include "cw3/synth.hpp"

namespace cw3 {

// Restricted attention for label transport: union of candidates from the
// first frame and the m most recent frames, Chebyshev radius r, top-k.
struct PropagationConfig {
  int m = 4;
  int r = 6;
  int k = 10;
  double tau_test = 0.05;
  void validate() const;
};

// Per-node distribution over `channels` label channels on an h x w node grid.
struct LabelMap {
  int64_t h = 0, w = 0, channels = 0;
  std::vector<double> data;  // [h*w][channels] row-major

  static LabelMap zeros(int64_t h, int64_t w, int64_t channels);
  double& at(int64_t node, int64_t c) { return data[size_t(node * channels + c)]; }
  double at(int64_t node, int64_t c) const {
    return data[size_t(node * channels + c)];
  }
  int64_t nodes() const { return h * w; }
  // Node with the largest value in one channel (first on ties).
  int64_t argmax_node(int64_t c) const;
  // Channel with the largest value at one node (first on ties).
  int64_t argmax_channel(int64_t node) const;
};

// Sequential transport: frame 1 holds `init`; each later frame pulls labels
// from {first frame} + up to m most recent predictions via top-k attention
// over nodes within Chebyshev radius r, softmaxed at tau_test. Ties in the
// top-k break toward the more recent frame, then the lower node index.
std::vector<LabelMap> propagate(const std::vector<FeatureMap>& features,
                                const LabelMap& init,
                                const PropagationConfig& config);

std::vector<LabelMap> identity_baseline(const LabelMap& init, int64_t t_count);

// One-hot seeds: channel j = node j of the first-frame grid.
LabelMap keypoint_seeds(int64_t h, int64_t w);

// View over a clip's dense ground truth (first-frame pixel -> frame-t
// position plus visibility), shared by the in-memory and on-disk clip types.
struct CorrespondenceTruth {
  const std::vector<std::vector<double>>* flow = nullptr;
  const std::vector<std::vector<uint8_t>>* visible = nullptr;
  int64_t height = 0, width = 0;
  int64_t t_count() const { return static_cast<int64_t>(flow->size()); }
};
CorrespondenceTruth truth_view(const SyntheticClip& clip);
CorrespondenceTruth truth_view(const LoadedClip& clip);

// Keypoint transfer accuracy. Keypoints sit on first-frame nodes (channel j
// of pred = keypoint j); a frame scores the fraction of visible keypoints
// whose argmax node lies within alpha * max(H', W') node units (euclidean)
// of the ground-truth location. The seed frame is not scored; frames with
// no visible keypoint are skipped; returns the mean over scored frames.
double score_matches(const std::vector<LabelMap>& pred,
                     const CorrespondenceTruth& truth, double alpha,
                     const NodeGeometry& geom);

// Per-frame fractions behind score_matches, indexed from the second frame;
// -1 marks a frame with no visible keypoint.
std::vector<double> per_frame_matches(const std::vector<LabelMap>& pred,
                                      const CorrespondenceTruth& truth,
                                      double alpha, const NodeGeometry& geom);

struct NodeMask {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> v;
};

struct RegionScore {
  double jaccard = 0;
  double boundary_f = 0;
};

// Jaccard (1.0 when both masks are empty) and boundary F with a one-node
// tolerance band (harmonic mean of boundary precision and recall).
RegionScore score_region(const NodeMask& pred, const NodeMask& gt);

// Adapters for the segmentation protocol on synthetic clips: class 0 is
// background, class s+1 is sprite s; nodes sample their representative pixel.
LabelMap segmentation_seeds(const MotionSpec& motion, const NodeGeometry& geom,
                            int num_classes);
NodeMask sprite_node_mask(const MotionSpec& motion, int sprite, double t,
                          const NodeGeometry& geom);
NodeMask label_class_mask(const LabelMap& labels, int64_t cls);

}  // namespace cw3
