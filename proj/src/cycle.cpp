#include "cw3/cycle.hpp"

#include <stdexcept>

#include "cw3/ops.hpp"

namespace cw3 {

Tensor affinity(const Tensor& src_hwc, const Tensor& dst_hwc, double tau) {
  if (tau <= 0) throw std::invalid_argument("affinity: tau must be positive");
  if (src_hwc.shape() != dst_hwc.shape())
    throw std::invalid_argument("affinity: grid shape mismatch " +
                                shape_str(src_hwc.shape()) + " vs " +
                                shape_str(dst_hwc.shape()));
  if (src_hwc.rank() < 2)
    throw std::invalid_argument("affinity: node grid tensor required");
  const int64_t c = src_hwc.shape().back();
  const int64_t n = src_hwc.numel() / c;
  Tensor s = reshape(src_hwc, {n, c});
  Tensor d = reshape(dst_hwc, {n, c});
  return softmax_rows(scale(matmul_nt(s, d), 1.0 / tau));
}

Tensor affinity(const FeatureMap& src, const FeatureMap& dst, double tau) {
  return affinity(src.data, dst.data, tau);
}

Tensor palindrome_transition(const PalindromeBatch& batch) {
  const size_t t_len = batch.forward.size();
  if (t_len < 2 || batch.backward_reversed.size() != t_len)
    throw std::invalid_argument(
        "palindrome_transition: forward/backward lists must share length >= 2");
  std::vector<const FeatureMap*> seq;
  for (const auto& f : batch.forward) seq.push_back(&f);
  for (const auto& f : batch.backward_reversed) seq.push_back(&f);
  for (const auto* f : seq)
    if (f->data.shape() != seq[0]->data.shape())
      throw std::invalid_argument("palindrome_transition: grid shape mismatch");

  Tensor prod = affinity(*seq[0], *seq[1], batch.tau);
  for (size_t t = 1; t + 1 < seq.size(); ++t)
    prod = matmul(prod, affinity(*seq[t], *seq[t + 1], batch.tau));
  return prod;
}

Tensor masked_cycle_loss(const Tensor& a_cyc, const std::vector<uint8_t>& mask,
                         bool norm_by_count) {
  if (a_cyc.rank() != 2 || a_cyc.shape()[0] != a_cyc.shape()[1])
    throw std::invalid_argument("masked_cycle_loss: square matrix required, got " +
                                shape_str(a_cyc.shape()));
  const int64_t n = a_cyc.shape()[0];
  if (static_cast<int64_t>(mask.size()) != n)
    throw std::invalid_argument("masked_cycle_loss: mask length mismatch");
  int64_t count = 0;
  std::vector<double> mv(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) {
    mv[i] = mask[i] ? 1.0 : 0.0;
    count += mask[i] ? 1 : 0;
  }
  const double norm = norm_by_count ? static_cast<double>(std::max<int64_t>(count, 1))
                                    : static_cast<double>(n);
  Tensor m = Tensor::from_doubles({n}, mv, a_cyc.dtype());
  Tensor logd = log_elem(add_scalar(diag_vector(a_cyc), 1e-12));
  return scale(sum(mul(logd, m)), -1.0 / norm);
}

Tensor multi_cycle_loss(const std::vector<FeatureMap>& forward,
                        const std::vector<FeatureMap>& backward,
                        const AffineTransform& b_fb,
                        const std::vector<uint8_t>& mask, double tau,
                        bool norm_by_count, WalkStats* stats) {
  const int64_t t_len = static_cast<int64_t>(forward.size());
  if (t_len < 2)
    throw std::invalid_argument("multi_cycle_loss: cycle length must be >= 2");
  if (static_cast<int64_t>(backward.size()) != t_len)
    throw std::invalid_argument("multi_cycle_loss: track length mismatch");
  for (const auto& f : forward)
    if (f.data.shape() != forward[0].data.shape())
      throw std::invalid_argument("multi_cycle_loss: grid shape mismatch");
  for (const auto& f : backward)
    if (f.data.shape() != forward[0].data.shape())
      throw std::invalid_argument("multi_cycle_loss: grid shape mismatch");
  if (static_cast<int64_t>(mask.size()) != forward[0].nodes())
    throw std::invalid_argument("multi_cycle_loss: mask length mismatch");

  WalkStats local;
  WalkStats* st = stats ? stats : &local;
  auto aff = [&](const Tensor& a, const Tensor& b) {
    ++st->affinity_evals;
    return affinity(a, b, tau);
  };

  // Warped cycle starts, one per k.
  std::vector<Tensor> start(t_len - 1);
  for (int64_t k = 0; k + 1 < t_len; ++k)
    start[k] = l2_normalize_nodes(warp_feature_hwc(forward[k].data, b_fb));

  // Shared transitions: forward chain, turnaround, backward chain.
  std::vector<Tensor> af(t_len - 1);  // af[t]: F_t^f -> F_{t+1}^f (t >= 1 used)
  for (int64_t t = 1; t + 1 < t_len; ++t)
    af[t] = aff(forward[t].data, forward[t + 1].data);
  Tensor ax = aff(forward[t_len - 1].data, backward[t_len - 1].data);
  std::vector<Tensor> ab(t_len - 1);  // ab[t]: F_{t+1}^b -> F_t^b
  for (int64_t t = 0; t + 1 < t_len; ++t)
    ab[t] = aff(backward[t + 1].data, backward[t].data);

  // suffix[k] = product of transitions from F_{k+1}^f around to F_k^b.
  std::vector<Tensor> suffix(t_len - 1);
  suffix[t_len - 2] = matmul(ax, ab[t_len - 2]);
  for (int64_t k = t_len - 3; k >= 0; --k)
    suffix[k] = matmul(af[k + 1], matmul(suffix[k + 1], ab[k]));

  Tensor loss;
  for (int64_t k = 0; k + 1 < t_len; ++k) {
    Tensor wk = aff(start[k], forward[k + 1].data);
    Tensor term = masked_diag_log_loss(wk, suffix[k], mask, norm_by_count);
    loss = loss.defined() ? add(loss, term) : term;
  }
  return loss;
}

}  // namespace cw3
