#include <cmath>
#include <vector>

#include "cw3/propagate.hpp"
#include "cw3/rng.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cw3;

namespace {

FeatureMap map_from(const std::vector<double>& v, int64_t h, int64_t w,
                    int64_t c, int frame) {
  return {Tensor::from_doubles({h, w, c}, v), frame, Track::kForward};
}

std::vector<FeatureMap> random_maps(Rng& rng, int t_len, int64_t h, int64_t w,
                                    int64_t c) {
  std::vector<FeatureMap> maps;
  for (int t = 0; t < t_len; ++t)
    maps.push_back(
        map_from(gradcheck::random_values(rng, h * w * c, -1, 1), h, w, c, t));
  return maps;
}

// Dense attention over the same source set, no radius or top-k restriction.
std::vector<LabelMap> dense_reference(const std::vector<FeatureMap>& features,
                                      const LabelMap& init, int m, double tau) {
  std::vector<LabelMap> out = {init};
  const int64_t n = init.nodes(), c = features[0].channels();
  std::vector<std::vector<double>> emb;
  for (const auto& f : features) emb.push_back(f.data.to_doubles());

  for (int64_t t = 1; t < static_cast<int64_t>(features.size()); ++t) {
    std::vector<int64_t> sources;
    for (int64_t s = t - 1; s >= std::max<int64_t>(1, t - m); --s)
      sources.push_back(s);
    sources.push_back(0);

    LabelMap pred = LabelMap::zeros(init.h, init.w, init.channels);
    for (int64_t q = 0; q < n; ++q) {
      std::vector<double> scores;
      std::vector<std::pair<int64_t, int64_t>> ids;
      for (int64_t s : sources)
        for (int64_t v = 0; v < n; ++v) {
          double dot = 0;
          for (int64_t k = 0; k < c; ++k)
            dot += emb[static_cast<size_t>(t)][static_cast<size_t>(q * c + k)] *
                   emb[static_cast<size_t>(s)][static_cast<size_t>(v * c + k)];
          scores.push_back(dot / tau);
          ids.emplace_back(s, v);
        }
      double mx = scores[0];
      for (double v : scores) mx = std::max(mx, v);
      double z = 0;
      for (double& v : scores) {
        v = std::exp(v - mx);
        z += v;
      }
      for (size_t i = 0; i < scores.size(); ++i) {
        const double w = scores[i] / z;
        const auto& src = out[static_cast<size_t>(ids[i].first)];
        for (int64_t ch = 0; ch < init.channels; ++ch)
          pred.at(q, ch) += w * src.at(ids[i].second, ch);
      }
    }
    out.push_back(std::move(pred));
  }
  return out;
}

}  // namespace

TEST_CASE("restricted propagation with maximal r,k equals dense attention") {
  Rng rng(601);
  for (int m : {0, 1}) {
    auto maps = random_maps(rng, 4, 8, 8, 6);
    LabelMap init = keypoint_seeds(8, 8);
    PropagationConfig config;
    config.m = m;
    config.r = 7;    // covers the whole 8x8 grid
    config.k = 200;  // larger than any candidate union
    config.tau_test = 0.2;
    auto got = propagate(maps, init, config);
    auto want = dense_reference(maps, init, m, 0.2);
    REQUIRE(got.size() == want.size());
    for (size_t t = 0; t < got.size(); ++t)
      for (int64_t i = 0; i < init.nodes() * init.channels; ++i)
        CHECK(std::fabs(got[t].data[static_cast<size_t>(i)] -
                        want[t].data[static_cast<size_t>(i)]) < 1e-6);
  }
}

TEST_CASE("nodes outside the radius have exactly zero influence") {
  Rng rng(602);
  const int64_t h = 8, w = 8, c = 5;
  auto base = random_maps(rng, 2, h, w, c);
  auto tweaked = base;
  // Rewrite the far corner's embedding in the source frame.
  auto vals = tweaked[0].data.to_doubles();
  for (int64_t k = 0; k < c; ++k)
    vals[static_cast<size_t>(((7 * w) + 7) * c + k)] = rng.uniform(5.0, 9.0);
  tweaked[0] = map_from(vals, h, w, c, 0);

  PropagationConfig config;
  config.m = 0;
  config.r = 2;
  config.k = 50;
  LabelMap init = keypoint_seeds(h, w);
  auto a = propagate(base, init, config);
  auto b = propagate(tweaked, init, config);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (std::max(std::abs(y - 7), std::abs(x - 7)) <= config.r) continue;
      for (int64_t ch = 0; ch < init.channels; ++ch)
        CHECK(a[1].at(y * w + x, ch) == b[1].at(y * w + x, ch));
    }
  // Inside the radius the rewrite must matter somewhere.
  bool changed = false;
  for (int64_t ch = 0; ch < init.channels; ++ch)
    if (a[1].at(7 * w + 7, ch) != b[1].at(7 * w + 7, ch)) changed = true;
  CHECK(changed);
}

TEST_CASE("equal scores keep the lowest node index") {
  // All frame-0 embeddings identical: every candidate ties, k=2 keeps nodes
  // 0 and 1, so every query averages the first two seed labels.
  const int64_t h = 3, w = 3, c = 2;
  std::vector<double> flat(h * w * c, 0.5);
  std::vector<FeatureMap> maps = {map_from(flat, h, w, c, 0),
                                  map_from(flat, h, w, c, 1)};
  LabelMap init = LabelMap::zeros(h, w, 1);
  for (int64_t i = 0; i < 9; ++i) init.at(i, 0) = static_cast<double>(i * 10);

  PropagationConfig config;
  config.m = 1;
  config.r = 8;
  config.k = 2;
  auto out = propagate(maps, init, config);
  for (int64_t q = 0; q < 9; ++q)
    CHECK(out[1].at(q, 0) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("equal scores prefer the more recent frame") {
  // Query (1,1) ties node a in frame 1 with node C in frame 0 at dot 2; the
  // recent frame must win, carrying init[b] rather than init[C].
  const int64_t h = 3, w = 3, c = 2;
  const int64_t a = 4, b = 1, C = 7;
  auto fill = [&](std::vector<std::pair<int64_t, std::array<double, 2>>> special,
                  std::array<double, 2> fallback) {
    std::vector<double> v(h * w * c);
    for (int64_t i = 0; i < h * w; ++i) {
      std::array<double, 2> e = fallback;
      for (const auto& [node, emb] : special)
        if (node == i) e = emb;
      v[static_cast<size_t>(i * c)] = e[0];
      v[static_cast<size_t>(i * c + 1)] = e[1];
    }
    return v;
  };
  std::vector<FeatureMap> maps = {
      map_from(fill({{b, {1, 0}}, {C, {0, 2}}}, {0, -1}), h, w, c, 0),
      map_from(fill({{a, {2, 0}}}, {-1, 0}), h, w, c, 1),
      map_from(fill({}, {1, 1}), h, w, c, 2)};

  LabelMap init = LabelMap::zeros(h, w, 1);
  for (int64_t i = 0; i < 9; ++i) init.at(i, 0) = static_cast<double>(i);

  PropagationConfig config;
  config.m = 1;
  config.r = 8;
  config.k = 1;
  auto out = propagate(maps, init, config);
  // t=1: node a's embedding (2,0) picks frame-0 node b uniquely.
  CHECK(out[1].at(a, 0) == static_cast<double>(b));
  // t=2: every query carries frame-1 node a's label, i.e. init[b], not init[C].
  for (int64_t q = 0; q < 9; ++q)
    CHECK(out[2].at(q, 0) == static_cast<double>(b));
}

TEST_CASE("identity baseline repeats the seeds") {
  LabelMap init = keypoint_seeds(4, 4);
  auto out = identity_baseline(init, 5);
  REQUIRE(out.size() == 5);
  for (const auto& l : out) CHECK(l.data == init.data);
}

TEST_CASE("keypoint seeds are one-hot per node") {
  LabelMap seeds = keypoint_seeds(3, 4);
  CHECK(seeds.channels == 12);
  for (int64_t n = 0; n < 12; ++n)
    for (int64_t ch = 0; ch < 12; ++ch)
      CHECK(seeds.at(n, ch) == (n == ch ? 1.0 : 0.0));
  CHECK(seeds.argmax_node(5) == 5);
  CHECK(seeds.argmax_channel(7) == 7);
}

TEST_CASE("match scoring by hand: perfect, displaced, and invisible") {
  // 4x4 node grid over a 4x4 pixel frame: offset 0, stride 1.
  NodeGeometry geom{0, 0, 1, 4, 4};
  const int64_t n = 16;
  std::vector<std::vector<double>> flow;
  std::vector<std::vector<uint8_t>> visible;
  for (int t = 0; t < 3; ++t) {
    std::vector<double> f(2 * n);
    for (int64_t i = 0; i < n; ++i) {
      f[static_cast<size_t>(2 * i)] = static_cast<double>(i % 4);
      f[static_cast<size_t>(2 * i + 1)] = static_cast<double>(i / 4);
    }
    flow.push_back(f);
    visible.emplace_back(n, 1);
  }
  CorrespondenceTruth truth{&flow, &visible, 4, 4};

  auto pred = identity_baseline(keypoint_seeds(4, 4), 3);
  CHECK(score_matches(pred, truth, 0.1, geom) == doctest::Approx(1.0));

  // Shift the ground truth far away: nothing matches.
  for (int t = 1; t < 3; ++t)
    for (int64_t i = 0; i < n; ++i) flow[static_cast<size_t>(t)][static_cast<size_t>(2 * i)] += 50.0;
  CHECK(score_matches(pred, truth, 0.1, geom) == doctest::Approx(0.0));

  // Invisible keypoints are skipped; an empty frame yields -1.
  auto rates = per_frame_matches(pred, truth, 0.1, geom);
  REQUIRE(rates.size() == 2);
  std::fill(visible[1].begin(), visible[1].end(), 0);
  rates = per_frame_matches(pred, truth, 0.1, geom);
  CHECK(rates[0] == -1.0);

  // Restore frame 1 as exact, keep frame 2 displaced: mean over scored frames.
  std::fill(visible[1].begin(), visible[1].end(), 1);
  for (int64_t i = 0; i < n; ++i) flow[1][static_cast<size_t>(2 * i)] -= 50.0;
  CHECK(score_matches(pred, truth, 0.1, geom) == doctest::Approx(0.5));
}

TEST_CASE("alpha tolerance is euclidean in node units") {
  NodeGeometry geom{0, 0, 1, 10, 10};
  const int64_t n = 100;
  std::vector<std::vector<double>> flow(2, std::vector<double>(2 * n));
  std::vector<std::vector<uint8_t>> visible(2, std::vector<uint8_t>(n, 0));
  for (int64_t i = 0; i < n; ++i) {
    flow[1][static_cast<size_t>(2 * i)] = static_cast<double>(i % 10);
    flow[1][static_cast<size_t>(2 * i + 1)] = static_cast<double>(i / 10);
  }
  // Only keypoint 0 visible; its truth sits at node (0,0).
  visible[1][0] = 1;
  CorrespondenceTruth truth{&flow, &visible, 10, 10};

  auto pred = identity_baseline(keypoint_seeds(10, 10), 2);
  // Move the predicted argmax to node (1,1): distance sqrt(2).
  pred[1].at(0, 0) = 0.0;
  pred[1].at(11, 0) = 5.0;
  CHECK(score_matches(pred, truth, std::sqrt(2.0) / 10.0 + 1e-9, geom) == 1.0);
  CHECK(score_matches(pred, truth, std::sqrt(2.0) / 10.0 - 1e-9, geom) == 0.0);
}

TEST_CASE("region scores by hand") {
  auto mask = [](int64_t h, int64_t w, std::vector<uint8_t> v) {
    return NodeMask{h, w, std::move(v)};
  };
  // Both empty.
  auto s = score_region(mask(2, 2, {0, 0, 0, 0}), mask(2, 2, {0, 0, 0, 0}));
  CHECK(s.jaccard == 1.0);
  CHECK(s.boundary_f == 1.0);
  // One empty.
  s = score_region(mask(2, 2, {1, 0, 0, 0}), mask(2, 2, {0, 0, 0, 0}));
  CHECK(s.jaccard == 0.0);
  CHECK(s.boundary_f == 0.0);
  // Identical.
  s = score_region(mask(2, 2, {1, 1, 0, 0}), mask(2, 2, {1, 1, 0, 0}));
  CHECK(s.jaccard == 1.0);
  CHECK(s.boundary_f == 1.0);
  // Half overlap: pred = top row, gt = left column of a 2x2 grid.
  s = score_region(mask(2, 2, {1, 1, 0, 0}), mask(2, 2, {1, 0, 1, 0}));
  CHECK(s.jaccard == doctest::Approx(1.0 / 3.0));

  // Boundary tolerance: a 4x4 square shifted by one node still scores F=1
  // (every boundary node within chebyshev distance 1 of the other boundary),
  // while a shift by two nodes cannot.
  auto square = [](int64_t oy, int64_t ox) {
    std::vector<uint8_t> v(36, 0);
    for (int64_t y = oy; y < oy + 3; ++y)
      for (int64_t x = ox; x < ox + 3; ++x) v[static_cast<size_t>(y * 6 + x)] = 1;
    return NodeMask{6, 6, v};
  };
  CHECK(score_region(square(0, 0), square(1, 1)).boundary_f == doctest::Approx(1.0));
  CHECK(score_region(square(0, 0), square(2, 2)).boundary_f < 1.0);
}

TEST_CASE("segmentation adapters agree with sprite geometry") {
  MotionSpec motion;
  motion.sprites.push_back({{8, 8}, {2.0, 0.0}, 4.0});
  NodeGeometry geom{1.5, 1.5, 4, 8, 8};  // 32x32 frame, 8x8 nodes

  LabelMap seeds = segmentation_seeds(motion, geom, 2);
  CHECK(seeds.channels == 2);
  for (int64_t gy = 0; gy < 8; ++gy)
    for (int64_t gx = 0; gx < 8; ++gx) {
      const double px = 1.5 + 4.0 * static_cast<double>(gx);
      const double py = 1.5 + 4.0 * static_cast<double>(gy);
      const double dx = px - 8.0, dy = py - 8.0;
      const bool inside = dx * dx + dy * dy <= 16.0;
      CHECK(seeds.at(gy * 8 + gx, inside ? 1 : 0) == 1.0);
    }

  NodeMask now = sprite_node_mask(motion, 0, 0.0, geom);
  CHECK(now.v == label_class_mask(seeds, 1).v);
  // After two steps the sprite has moved 4px right: one node column.
  NodeMask later = sprite_node_mask(motion, 0, 2.0, geom);
  bool moved = later.v != now.v;
  CHECK(moved);
}

TEST_CASE("propagation validates its inputs") {
  PropagationConfig config;
  config.k = 0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config = {};
  config.r = 0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config = {};
  config.m = -1;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config = {};
  config.tau_test = 0.0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);

  Rng rng(603);
  auto maps = random_maps(rng, 2, 4, 4, 3);
  LabelMap wrong = keypoint_seeds(5, 5);
  CHECK_THROWS_AS(propagate(maps, wrong, PropagationConfig{}),
                  std::invalid_argument);
}
