#include <cmath>
#include <numeric>
#include <vector>

#include "cw3/affine.hpp"
#include "cw3/cycle.hpp"
#include "cw3/ops.hpp"
#include "cw3/rng.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cw3;

namespace {

FeatureMap random_map(Rng& rng, int64_t h, int64_t w, int64_t c, int frame,
                      Track track) {
  Tensor raw = Tensor::from_doubles(
      {h, w, c}, gradcheck::random_values(rng, h * w * c, -1, 1));
  return {l2_normalize_nodes(raw), frame, track};
}

std::vector<FeatureMap> random_track(Rng& rng, int t_len, int64_t h, int64_t w,
                                     int64_t c, Track track) {
  std::vector<FeatureMap> maps;
  for (int t = 0; t < t_len; ++t)
    maps.push_back(random_map(rng, h, w, c, t, track));
  return maps;
}

// Literal reference: build each cycle's palindrome product and mask-log its
// diagonal, without the shared-transition reuse.
double naive_multi_cycle(const std::vector<FeatureMap>& fwd,
                         const std::vector<FeatureMap>& bwd,
                         const AffineTransform& b_fb,
                         const std::vector<uint8_t>& mask, double tau,
                         bool by_count) {
  const int t_len = static_cast<int>(fwd.size());
  double total = 0;
  for (int k = 0; k + 1 < t_len; ++k) {
    PalindromeBatch batch;
    batch.tau = tau;
    batch.b_fb = b_fb;
    batch.mask = mask;
    FeatureMap start = fwd[static_cast<size_t>(k)];
    start.data = l2_normalize_nodes(warp_feature_hwc(start.data, b_fb));
    batch.forward.push_back(start);
    for (int t = k + 1; t < t_len; ++t)
      batch.forward.push_back(fwd[static_cast<size_t>(t)]);
    for (int t = t_len - 1; t >= k; --t)
      batch.backward_reversed.push_back(bwd[static_cast<size_t>(t)]);
    total += masked_cycle_loss(palindrome_transition(batch), mask, by_count).item();
  }
  return total;
}

}  // namespace

TEST_CASE("closed forms: identity, uniform and fully-masked cycle matrices") {
  const int64_t n = 16;
  std::vector<uint8_t> ones(static_cast<size_t>(n), 1);

  std::vector<double> eye(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) eye[static_cast<size_t>(i * n + i)] = 1.0;
  CHECK(std::fabs(masked_cycle_loss(Tensor::from_doubles({n, n}, eye), ones).item()) <
        1e-9);

  std::vector<double> uniform(static_cast<size_t>(n * n), 1.0 / static_cast<double>(n));
  CHECK(masked_cycle_loss(Tensor::from_doubles({n, n}, uniform), ones).item() ==
        doctest::Approx(std::log(16.0)).epsilon(1e-9));

  std::vector<uint8_t> zeros(static_cast<size_t>(n), 0);
  for (bool by_count : {false, true})
    CHECK(masked_cycle_loss(Tensor::from_doubles({n, n}, uniform), zeros,
                            by_count)
              .item() == 0.0);
}

TEST_CASE("mask normalization: frame size vs population count") {
  const int64_t n = 4;
  std::vector<double> uniform(16, 0.25);
  Tensor a = Tensor::from_doubles({n, n}, uniform);
  std::vector<uint8_t> half = {1, 1, 0, 0};
  const double frame_norm =
      masked_cycle_loss(Tensor::from_doubles({n, n}, uniform), half).item();
  const double count_norm = masked_cycle_loss(a, half, true).item();
  CHECK(frame_norm == doctest::Approx(2.0 * std::log(4.0) / 4.0).epsilon(1e-9));
  CHECK(count_norm == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("affinity rows are stochastic and respond to temperature") {
  Rng rng(401);
  FeatureMap a = random_map(rng, 3, 4, 6, 0, Track::kForward);
  FeatureMap b = random_map(rng, 3, 4, 6, 1, Track::kForward);
  Tensor hot = affinity(a, b, 0.05);
  Tensor mild = affinity(a, b, 1.0);
  auto hv = hot.to_doubles(), mv = mild.to_doubles();
  const int64_t n = 12;
  for (int64_t i = 0; i < n; ++i) {
    double hrow = 0, mrow = 0, hmax = 0, mmax = 0;
    for (int64_t j = 0; j < n; ++j) {
      hrow += hv[static_cast<size_t>(i * n + j)];
      mrow += mv[static_cast<size_t>(i * n + j)];
      hmax = std::max(hmax, hv[static_cast<size_t>(i * n + j)]);
      mmax = std::max(mmax, mv[static_cast<size_t>(i * n + j)]);
    }
    CHECK(hrow == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mrow == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(hmax > mmax);  // lower temperature concentrates each row
  }
}

TEST_CASE("identical constant features give a uniform transition matrix") {
  Tensor flat = Tensor::full({2, 3, 5}, 0.7);
  Tensor a = affinity(l2_normalize_nodes(flat), l2_normalize_nodes(flat), 0.05);
  auto v = a.to_doubles();
  for (double x : v) CHECK(x == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("affinity permutes covariantly with node order") {
  Rng rng(402);
  const int64_t n = 8, c = 5;
  auto sv = gradcheck::random_values(rng, n * c, -1, 1);
  auto dv = gradcheck::random_values(rng, n * c, -1, 1);
  std::vector<int64_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (int64_t i = n - 1; i > 0; --i)
    std::swap(perm[static_cast<size_t>(i)],
              perm[static_cast<size_t>(rng.uniform_int(0, i))]);

  std::vector<double> sp(sv.size()), dp(dv.size());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < c; ++k) {
      sp[static_cast<size_t>(i * c + k)] = sv[static_cast<size_t>(perm[static_cast<size_t>(i)] * c + k)];
      dp[static_cast<size_t>(i * c + k)] = dv[static_cast<size_t>(perm[static_cast<size_t>(i)] * c + k)];
    }
  auto base = affinity(Tensor::from_doubles({n, 1, c}, sv),
                       Tensor::from_doubles({n, 1, c}, dv), 0.2)
                  .to_doubles();
  auto permuted = affinity(Tensor::from_doubles({n, 1, c}, sp),
                           Tensor::from_doubles({n, 1, c}, dp), 0.2)
                      .to_doubles();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      CHECK(permuted[static_cast<size_t>(i * n + j)] ==
            doctest::Approx(base[static_cast<size_t>(
                perm[static_cast<size_t>(i)] * n + perm[static_cast<size_t>(j)])])
                .epsilon(1e-9));
}

TEST_CASE("multi-cycle loss matches the literal per-cycle reference") {
  Rng rng(403);
  for (int inst = 0; inst < 10; ++inst) {
    const int t_len = 2 + inst % 3;  // T in {2,3,4}
    auto fwd = random_track(rng, t_len, 4, 4, 6, Track::kForward);
    auto bwd = random_track(rng, t_len, 4, 4, 6, Track::kBackward);
    TransformParams params;
    params.scale_lo = 0.5;  // keep most nodes valid
    AffineTransform bf = sample_transform(rng, params);
    AffineTransform bb = sample_transform(rng, params);
    AffineTransform b_fb = compose_forward_backward(bf, bb);
    auto mask = compute_mask(b_fb, 4, 4);
    const bool by_count = inst % 2 == 1;

    WalkStats stats;
    const double got =
        multi_cycle_loss(fwd, bwd, b_fb, mask, 0.2, by_count, &stats).item();
    const double want = naive_multi_cycle(fwd, bwd, b_fb, mask, 0.2, by_count);
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
    CHECK(stats.affinity_evals == 3 * t_len - 3);
  }
}

TEST_CASE("masking a node out never increases the loss") {
  Rng rng(404);
  auto fwd = random_track(rng, 3, 4, 4, 6, Track::kForward);
  auto bwd = random_track(rng, 3, 4, 4, 6, Track::kBackward);
  std::vector<uint8_t> full(16, 1);
  const double base =
      multi_cycle_loss(fwd, bwd, AffineTransform::identity(), full, 0.2).item();
  for (int drop = 0; drop < 16; drop += 5) {
    auto mask = full;
    mask[static_cast<size_t>(drop)] = 0;
    const double less =
        multi_cycle_loss(fwd, bwd, AffineTransform::identity(), mask, 0.2).item();
    CHECK(less <= base + 1e-12);
  }
}

TEST_CASE("composite walk gradients match finite differences (T=2, 4x4)") {
  Rng rng(405);
  int checked = 0;
  while (checked < 20) {
    TransformParams params;
    params.scale_lo = 0.4;
    AffineTransform bf = sample_transform(rng, params);
    AffineTransform bb = sample_transform(rng, params);
    AffineTransform b_fb = compose_forward_backward(bf, bb);
    auto mask = compute_mask(b_fb, 4, 4);
    int64_t live = 0;
    for (auto m : mask) live += m;
    if (live < 4) continue;  // a nearly-empty mask checks nothing

    std::vector<Tensor> leaves;
    for (int i = 0; i < 4; ++i)
      leaves.push_back(Tensor::from_doubles(
          {4, 4, 5}, gradcheck::random_values(rng, 80, -1, 1), Dtype::kF64,
          true));
    auto fn = [&](std::vector<Tensor>& l) {
      std::vector<FeatureMap> fwd = {{l2_normalize_nodes(l[0]), 0, Track::kForward},
                                     {l2_normalize_nodes(l[1]), 1, Track::kForward}};
      std::vector<FeatureMap> bwd = {{l2_normalize_nodes(l[2]), 0, Track::kBackward},
                                     {l2_normalize_nodes(l[3]), 1, Track::kBackward}};
      return multi_cycle_loss(fwd, bwd, b_fb, mask, 0.3);
    };
    CHECK(gradcheck::check(leaves, fn).max_rel < 1e-4);
    ++checked;
  }
}
