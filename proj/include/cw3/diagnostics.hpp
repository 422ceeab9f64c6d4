#pragma once

#include <string>
#include <vector>

#include "cw3/encoder.hpp"
#include "cw3/tensor.hpp"

namespace cw3 {

// Shortcut-detection summary: how diagonal the affinities are on adjacent vs
// unrelated frame pairs, and how linearly decodable node position is.
struct DiagnosticReport {
  double diag_adjacent = 0;
  double diag_unrelated = 0;
  double probe_r2_x = 0;
  double probe_r2_y = 0;
  int64_t adjacent_pairs = 0;
  int64_t unrelated_pairs = 0;
  int64_t probe_maps = 0;
};

std::string report_to_csv(const DiagnosticReport& report);
DiagnosticReport report_from_csv(const std::string& csv);

// Mean of the diagonal of a row-stochastic transition matrix.
double diagonality(const Tensor& a);

struct ProbeR2 {
  double x = 0;
  double y = 0;
};

// Closed-form ridge regression (isotropic penalty, explicit intercept) from
// node embeddings to node coordinates normalized to [-1,1]. Fits on the
// first half of the maps, reports held-out R-squared per coordinate.
ProbeR2 position_probe(const std::vector<FeatureMap>& features, double lambda);

// Top-3 principal-component projection of the node embeddings, each channel
// min-max scaled to [0,1]; returns [3,H',W']. Components beyond the
// covariance rank come back as constant zero channels (with a warning).
Tensor pca_rgb(const FeatureMap& feature);

struct FramePair {
  Tensor a, b;  // [3,H,W] frames
  bool adjacent = false;
};

// Encodes each pair and averages affinity diagonality per pair class.
DiagnosticReport affinity_pair_report(const EncoderWeights& weights,
                                      const EncoderConfig& config,
                                      const std::vector<FramePair>& pairs,
                                      double tau, bool use_head = true);

}  // namespace cw3
