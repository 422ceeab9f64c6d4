#include "cw3/propagate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cw3 {

void PropagationConfig::validate() const {
  if (m < 0) throw std::invalid_argument("PropagationConfig: m >= 0 required");
  if (r < 1) throw std::invalid_argument("PropagationConfig: r >= 1 required");
  if (k < 1) throw std::invalid_argument("PropagationConfig: k >= 1 required");
  if (tau_test <= 0)
    throw std::invalid_argument("PropagationConfig: tau_test > 0 required");
}

LabelMap LabelMap::zeros(int64_t h, int64_t w, int64_t channels) {
  LabelMap map;
  map.h = h;
  map.w = w;
  map.channels = channels;
  map.data.assign(static_cast<size_t>(h * w * channels), 0.0);
  return map;
}

int64_t LabelMap::argmax_node(int64_t c) const {
  int64_t best = 0;
  double best_v = at(0, c);
  for (int64_t n = 1; n < nodes(); ++n)
    if (at(n, c) > best_v) {
      best_v = at(n, c);
      best = n;
    }
  return best;
}

int64_t LabelMap::argmax_channel(int64_t node) const {
  int64_t best = 0;
  double best_v = at(node, 0);
  for (int64_t c = 1; c < channels; ++c)
    if (at(node, c) > best_v) {
      best_v = at(node, c);
      best = c;
    }
  return best;
}

std::vector<LabelMap> propagate(const std::vector<FeatureMap>& features,
                                const LabelMap& init,
                                const PropagationConfig& config) {
  config.validate();
  if (features.empty()) throw std::invalid_argument("propagate: no features");
  const int64_t rows = features[0].rows(), cols = features[0].cols();
  const int64_t dim = features[0].channels();
  if (init.h != rows || init.w != cols)
    throw std::invalid_argument("propagate: init grid does not match features");
  for (const auto& f : features)
    if (f.rows() != rows || f.cols() != cols || f.channels() != dim)
      throw std::invalid_argument("propagate: inconsistent feature grids");

  const auto t_count = static_cast<int64_t>(features.size());
  std::vector<std::vector<double>> emb;  // node-major [nodes][dim]
  emb.reserve(static_cast<size_t>(t_count));
  for (const auto& f : features) emb.push_back(f.data.to_doubles());

  std::vector<LabelMap> out;
  out.reserve(static_cast<size_t>(t_count));
  out.push_back(init);

  struct Candidate {
    double score;
    int64_t order;  // recency-major, then row-major: encodes the tie rules
    int64_t frame, node;
  };
  std::vector<Candidate> cands;

  for (int64_t t = 1; t < t_count; ++t) {
    // Most recent first; the seed frame always participates and comes last.
    std::vector<int64_t> sources;
    for (int64_t s = t - 1; s >= std::max<int64_t>(1, t - config.m); --s)
      sources.push_back(s);
    sources.push_back(0);

    LabelMap next = LabelMap::zeros(rows, cols, init.channels);
    const double* tgt = emb[static_cast<size_t>(t)].data();
    for (int64_t y = 0; y < rows; ++y)
      for (int64_t x = 0; x < cols; ++x) {
        const int64_t node = y * cols + x;
        cands.clear();
        int64_t order = 0;
        for (const int64_t s : sources) {
          const double* src = emb[static_cast<size_t>(s)].data();
          const int64_t y0 = std::max<int64_t>(0, y - config.r);
          const int64_t y1 = std::min<int64_t>(rows - 1, y + config.r);
          const int64_t x0 = std::max<int64_t>(0, x - config.r);
          const int64_t x1 = std::min<int64_t>(cols - 1, x + config.r);
          for (int64_t sy = y0; sy <= y1; ++sy)
            for (int64_t sx = x0; sx <= x1; ++sx) {
              const int64_t sn = sy * cols + sx;
              double dot = 0;
              const double* a = tgt + node * dim;
              const double* b = src + sn * dim;
              for (int64_t c = 0; c < dim; ++c) dot += a[c] * b[c];
              cands.push_back({dot / config.tau_test, order++, s, sn});
            }
        }
        const auto keep =
            std::min<size_t>(static_cast<size_t>(config.k), cands.size());
        std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                          [](const Candidate& a, const Candidate& b) {
                            if (a.score != b.score) return a.score > b.score;
                            return a.order < b.order;
                          });
        double mx = cands[0].score;
        double z = 0;
        for (size_t i = 0; i < keep; ++i) z += std::exp(cands[i].score - mx);
        for (size_t i = 0; i < keep; ++i) {
          const double wgt = std::exp(cands[i].score - mx) / z;
          const LabelMap& src_labels = out[static_cast<size_t>(cands[i].frame)];
          for (int64_t c = 0; c < init.channels; ++c)
            next.at(node, c) += wgt * src_labels.at(cands[i].node, c);
        }
      }
    out.push_back(std::move(next));
  }
  return out;
}

std::vector<LabelMap> identity_baseline(const LabelMap& init, int64_t t_count) {
  if (t_count < 1) throw std::invalid_argument("identity_baseline: t_count >= 1");
  return std::vector<LabelMap>(static_cast<size_t>(t_count), init);
}

LabelMap keypoint_seeds(int64_t h, int64_t w) {
  LabelMap map = LabelMap::zeros(h, w, h * w);
  for (int64_t n = 0; n < h * w; ++n) map.at(n, n) = 1.0;
  return map;
}

CorrespondenceTruth truth_view(const SyntheticClip& clip) {
  return {&clip.flow, &clip.visible, clip.height, clip.width};
}

CorrespondenceTruth truth_view(const LoadedClip& clip) {
  return {&clip.flow, &clip.visible, clip.height, clip.width};
}

std::vector<double> per_frame_matches(const std::vector<LabelMap>& pred,
                                      const CorrespondenceTruth& truth,
                                      double alpha, const NodeGeometry& geom) {
  if (alpha <= 0)
    throw std::invalid_argument("per_frame_matches: alpha > 0 required");
  if (pred.empty())
    throw std::invalid_argument("per_frame_matches: no predictions");
  const int64_t rows = geom.rows, cols = geom.cols;
  if (pred[0].h != rows || pred[0].w != cols || pred[0].channels != rows * cols)
    throw std::invalid_argument("per_frame_matches: prediction grid mismatch");
  const double limit = alpha * static_cast<double>(std::max(rows, cols));
  const auto frames = std::min<int64_t>(static_cast<int64_t>(pred.size()),
                                        truth.t_count());

  // Representative first-frame pixel of each keypoint/node.
  std::vector<int64_t> pix(static_cast<size_t>(rows * cols));
  for (int64_t gy = 0; gy < rows; ++gy)
    for (int64_t gx = 0; gx < cols; ++gx) {
      const auto py = std::llround(geom.offset_y + gy * geom.stride);
      const auto px = std::llround(geom.offset_x + gx * geom.stride);
      pix[static_cast<size_t>(gy * cols + gx)] =
          std::clamp<int64_t>(py, 0, truth.height - 1) * truth.width +
          std::clamp<int64_t>(px, 0, truth.width - 1);
    }

  std::vector<double> rates;
  for (int64_t t = 1; t < frames; ++t) {
    const auto& flow = (*truth.flow)[static_cast<size_t>(t)];
    const auto& vis = (*truth.visible)[static_cast<size_t>(t)];
    int64_t seen = 0, correct = 0;
    for (int64_t j = 0; j < rows * cols; ++j) {
      const int64_t pi = pix[static_cast<size_t>(j)];
      if (!vis[static_cast<size_t>(pi)]) continue;
      ++seen;
      const double gx = (flow[static_cast<size_t>(2 * pi)] - geom.offset_x) /
                        geom.stride;
      const double gy = (flow[static_cast<size_t>(2 * pi + 1)] - geom.offset_y) /
                        geom.stride;
      const int64_t a = pred[static_cast<size_t>(t)].argmax_node(j);
      const double dy = static_cast<double>(a / cols) - gy;
      const double dx = static_cast<double>(a % cols) - gx;
      if (std::sqrt(dy * dy + dx * dx) <= limit) ++correct;
    }
    rates.push_back(seen == 0 ? -1.0
                              : static_cast<double>(correct) /
                                    static_cast<double>(seen));
  }
  return rates;
}

double score_matches(const std::vector<LabelMap>& pred,
                     const CorrespondenceTruth& truth, double alpha,
                     const NodeGeometry& geom) {
  const auto rates = per_frame_matches(pred, truth, alpha, geom);
  double sum = 0;
  int64_t scored = 0;
  for (const double r : rates)
    if (r >= 0) {
      sum += r;
      ++scored;
    }
  return scored == 0 ? 0.0 : sum / static_cast<double>(scored);
}

namespace {

std::vector<uint8_t> boundary_of(const NodeMask& m) {
  std::vector<uint8_t> b(m.v.size(), 0);
  for (int64_t y = 0; y < m.h; ++y)
    for (int64_t x = 0; x < m.w; ++x) {
      const size_t i = static_cast<size_t>(y * m.w + x);
      if (!m.v[i]) continue;
      const bool edge = y == 0 || y == m.h - 1 || x == 0 || x == m.w - 1;
      const bool hole = (y > 0 && !m.v[i - static_cast<size_t>(m.w)]) ||
                        (y < m.h - 1 && !m.v[i + static_cast<size_t>(m.w)]) ||
                        (x > 0 && !m.v[i - 1]) || (x < m.w - 1 && !m.v[i + 1]);
      b[i] = (edge || hole) ? 1 : 0;
    }
  return b;
}

double matched_fraction(const std::vector<uint8_t>& from,
                        const std::vector<uint8_t>& to, int64_t h, int64_t w) {
  int64_t total = 0, hit = 0;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (!from[static_cast<size_t>(y * w + x)]) continue;
      ++total;
      bool found = false;
      for (int64_t dy = -1; dy <= 1 && !found; ++dy)
        for (int64_t dx = -1; dx <= 1 && !found; ++dx) {
          const int64_t ny = y + dy, nx = x + dx;
          if (ny >= 0 && ny < h && nx >= 0 && nx < w &&
              to[static_cast<size_t>(ny * w + nx)])
            found = true;
        }
      if (found) ++hit;
    }
  return total == 0 ? -1.0 : static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

RegionScore score_region(const NodeMask& pred, const NodeMask& gt) {
  if (pred.h != gt.h || pred.w != gt.w || pred.v.size() != gt.v.size())
    throw std::invalid_argument("score_region: mask shape mismatch");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const bool a = pred.v[i] != 0, b = gt.v[i] != 0;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  RegionScore score;
  score.jaccard = uni == 0 ? 1.0
                           : static_cast<double>(inter) / static_cast<double>(uni);

  const auto pb = boundary_of(pred);
  const auto gb = boundary_of(gt);
  const double precision = matched_fraction(pb, gb, pred.h, pred.w);
  const double recall = matched_fraction(gb, pb, pred.h, pred.w);
  if (precision < 0 && recall < 0)
    score.boundary_f = 1.0;  // both boundaries empty
  else if (precision <= 0 || recall <= 0)
    score.boundary_f = 0.0;
  else
    score.boundary_f = 2.0 * precision * recall / (precision + recall);
  return score;
}

LabelMap segmentation_seeds(const MotionSpec& motion, const NodeGeometry& geom,
                            int num_classes) {
  if (num_classes < 1)
    throw std::invalid_argument("segmentation_seeds: num_classes >= 1");
  LabelMap map = LabelMap::zeros(geom.rows, geom.cols, num_classes);
  for (int64_t gy = 0; gy < geom.rows; ++gy)
    for (int64_t gx = 0; gx < geom.cols; ++gx) {
      const double px = geom.offset_x + gx * geom.stride;
      const double py = geom.offset_y + gy * geom.stride;
      int cls = motion.owner_at(0, {px, py}) + 1;
      if (cls >= num_classes) cls = 0;
      map.at(gy * geom.cols + gx, cls) = 1.0;
    }
  return map;
}

NodeMask sprite_node_mask(const MotionSpec& motion, int sprite, double t,
                          const NodeGeometry& geom) {
  NodeMask mask{geom.rows, geom.cols, {}};
  mask.v.resize(static_cast<size_t>(geom.rows * geom.cols));
  for (int64_t gy = 0; gy < geom.rows; ++gy)
    for (int64_t gx = 0; gx < geom.cols; ++gx) {
      const double px = geom.offset_x + gx * geom.stride;
      const double py = geom.offset_y + gy * geom.stride;
      mask.v[static_cast<size_t>(gy * geom.cols + gx)] =
          motion.owner_at(t, {px, py}) == sprite ? 1 : 0;
    }
  return mask;
}

NodeMask label_class_mask(const LabelMap& labels, int64_t cls) {
  NodeMask mask{labels.h, labels.w, {}};
  mask.v.resize(static_cast<size_t>(labels.nodes()));
  for (int64_t n = 0; n < labels.nodes(); ++n)
    mask.v[static_cast<size_t>(n)] = labels.argmax_channel(n) == cls ? 1 : 0;
  return mask;
}

}  // namespace cw3
