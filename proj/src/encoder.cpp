#include "cw3/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "cw3/rng.hpp"

namespace cw3 {

void EncoderConfig::validate() const {
  if (num_blocks < 1) throw std::invalid_argument("EncoderConfig: num_blocks >= 1");
  if (static_cast<int>(channels.size()) != num_blocks)
    throw std::invalid_argument("EncoderConfig: channels must list one width per block");
  for (int c : channels)
    if (c < 1) throw std::invalid_argument("EncoderConfig: channel widths >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw std::invalid_argument("EncoderConfig: kernel_size must be odd");
  if (downsample_factor < 1 ||
      (downsample_factor & (downsample_factor - 1)) != 0)
    throw std::invalid_argument("EncoderConfig: downsample_factor must be a power of two");
  if (embed_dim < 2) throw std::invalid_argument("EncoderConfig: embed_dim >= 2");
  if (head_hidden < 1) throw std::invalid_argument("EncoderConfig: head_hidden >= 1");
  if (norm_eps <= 0) throw std::invalid_argument("EncoderConfig: norm_eps > 0");
  if (stride_layout == StrideLayout::kStridedConvs) {
    int ds = downsample_factor, strided = 0;
    while (ds > 1) ds /= 2, ++strided;
    if (strided > num_blocks)
      throw std::invalid_argument("EncoderConfig: downsample needs more blocks");
  }
}

std::vector<int> EncoderConfig::block_strides() const {
  std::vector<int> strides(num_blocks, 1);
  if (stride_layout == StrideLayout::kStridedConvs) {
    int ds = downsample_factor, b = 0;
    while (ds > 1) {
      strides[b++] = 2;
      ds /= 2;
    }
  }
  return strides;
}

std::vector<std::pair<std::string, Tensor>> EncoderWeights::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t b = 0; b < conv.size(); ++b) {
    const std::string i = std::to_string(b);
    out.emplace_back("conv" + i + ".w", conv[b]);
    out.emplace_back("norm" + i + ".gain", gain[b]);
    out.emplace_back("norm" + i + ".bias", bias[b]);
  }
  out.emplace_back("head1.w", head1_w);
  out.emplace_back("head1.b", head1_b);
  if (head2_w.defined()) {
    out.emplace_back("head2.w", head2_w);
    out.emplace_back("head2.b", head2_b);
  }
  return out;
}

EncoderWeights EncoderWeights::from_named(
    const std::vector<std::pair<std::string, Tensor>>& entries,
    const EncoderConfig& config) {
  auto find = [&](const std::string& name) -> Tensor {
    for (const auto& [n, t] : entries)
      if (n == name) return t;
    throw std::invalid_argument("missing weight entry: " + name);
  };
  EncoderWeights w;
  for (int b = 0; b < config.num_blocks; ++b) {
    const std::string i = std::to_string(b);
    w.conv.push_back(find("conv" + i + ".w"));
    w.gain.push_back(find("norm" + i + ".gain"));
    w.bias.push_back(find("norm" + i + ".bias"));
  }
  w.head1_w = find("head1.w");
  w.head1_b = find("head1.b");
  if (config.head == EncoderConfig::Head::kTwoFc) {
    w.head2_w = find("head2.w");
    w.head2_b = find("head2.b");
  }
  return w;
}

EncoderWeights EncoderWeights::shared_clone(bool requires_grad) const {
  EncoderWeights out;
  for (const auto& t : conv) out.conv.push_back(t.shared_leaf(requires_grad));
  for (const auto& t : gain) out.gain.push_back(t.shared_leaf(requires_grad));
  for (const auto& t : bias) out.bias.push_back(t.shared_leaf(requires_grad));
  out.head1_w = head1_w.shared_leaf(requires_grad);
  out.head1_b = head1_b.shared_leaf(requires_grad);
  if (head2_w.defined()) {
    out.head2_w = head2_w.shared_leaf(requires_grad);
    out.head2_b = head2_b.shared_leaf(requires_grad);
  }
  return out;
}

EncoderWeights EncoderWeights::copy_as(Dtype dt, bool requires_grad) const {
  EncoderWeights out;
  for (const auto& t : conv) out.conv.push_back(t.copy_as(dt, requires_grad));
  for (const auto& t : gain) out.gain.push_back(t.copy_as(dt, requires_grad));
  for (const auto& t : bias) out.bias.push_back(t.copy_as(dt, requires_grad));
  out.head1_w = head1_w.copy_as(dt, requires_grad);
  out.head1_b = head1_b.copy_as(dt, requires_grad);
  if (head2_w.defined()) {
    out.head2_w = head2_w.copy_as(dt, requires_grad);
    out.head2_b = head2_b.copy_as(dt, requires_grad);
  }
  return out;
}

void EncoderWeights::zero_grad() {
  foreach([](Tensor& t) { t.zero_grad(); });
}

void EncoderWeights::foreach(const std::function<void(Tensor&)>& fn) {
  for (auto& t : conv) fn(t);
  for (auto& t : gain) fn(t);
  for (auto& t : bias) fn(t);
  fn(head1_w);
  fn(head1_b);
  if (head2_w.defined()) {
    fn(head2_w);
    fn(head2_b);
  }
}

static Tensor uniform_tensor(Shape shape, double bound, Rng& rng, Dtype dt) {
  Tensor t = Tensor::zeros(std::move(shape), dt, true);
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) t.set(i, rng.uniform(-bound, bound));
  return t;
}

EncoderWeights init_weights(const EncoderConfig& config, uint64_t seed, Dtype dt) {
  config.validate();
  Rng rng(mix_stream(seed, "encoder-init"));
  EncoderWeights w;
  int in_ch = 3;
  const int k = config.kernel_size;
  for (int b = 0; b < config.num_blocks; ++b) {
    const int out_ch = config.channels[b];
    const double bound = std::sqrt(6.0 / (in_ch * k * k));
    w.conv.push_back(uniform_tensor({out_ch, in_ch, k, k}, bound, rng, dt));
    w.gain.push_back(Tensor::full({out_ch}, 1.0, dt, true));
    w.bias.push_back(Tensor::zeros({out_ch}, dt, true));
    in_ch = out_ch;
  }
  if (config.head == EncoderConfig::Head::kConv1x1) {
    const double bound = std::sqrt(6.0 / in_ch);
    w.head1_w = uniform_tensor({config.embed_dim, in_ch, 1, 1}, bound, rng, dt);
    w.head1_b = Tensor::zeros({config.embed_dim}, dt, true);
  } else {
    const double b1 = std::sqrt(6.0 / in_ch);
    w.head1_w = uniform_tensor({config.head_hidden, in_ch, 1, 1}, b1, rng, dt);
    w.head1_b = Tensor::zeros({config.head_hidden}, dt, true);
    const double b2 = std::sqrt(6.0 / config.head_hidden);
    w.head2_w = uniform_tensor({config.embed_dim, config.head_hidden, 1, 1}, b2, rng, dt);
    w.head2_b = Tensor::zeros({config.embed_dim}, dt, true);
  }
  return w;
}

static int64_t conv_extent(int64_t h, int k, int stride, bool padded) {
  const int64_t pad = padded ? (k - 1) / 2 : 0;
  const int64_t hp = h + 2 * pad;
  if (hp < k) throw std::invalid_argument("encode: input smaller than kernel");
  return (hp - k) / stride + 1;
}

std::pair<int64_t, int64_t> node_grid_extent(const EncoderConfig& config,
                                             int64_t h, int64_t w) {
  config.validate();
  const bool padded = config.padding != PaddingMode::kNone;
  if (padded && (h % config.downsample_factor || w % config.downsample_factor))
    throw std::invalid_argument(
        "encode: input extent not divisible by downsample_factor");
  auto strides = config.block_strides();
  int64_t hh = h, ww = w;
  for (int b = 0; b < config.num_blocks; ++b) {
    hh = conv_extent(hh, config.kernel_size, strides[b], padded);
    ww = conv_extent(ww, config.kernel_size, strides[b], padded);
  }
  if (config.stride_layout == EncoderConfig::StrideLayout::kFinalPool &&
      config.downsample_factor > 1) {
    if (hh % config.downsample_factor || ww % config.downsample_factor)
      throw std::invalid_argument(
          "encode: pooled layout needs pre-pool extent divisible by downsample_factor");
    hh /= config.downsample_factor;
    ww /= config.downsample_factor;
  }
  if (hh < 2 || ww < 2)
    throw std::invalid_argument("encode: node grid collapsed below 2x2");
  return {hh, ww};
}

NodeGeometry node_geometry(const EncoderConfig& config, int64_t h, int64_t w) {
  auto [rows, cols] = node_grid_extent(config, h, w);
  const bool padded = config.padding != PaddingMode::kNone;
  double offset = 0, stride = 1;
  auto strides = config.block_strides();
  for (int b = 0; b < config.num_blocks; ++b) {
    if (!padded) offset += (config.kernel_size - 1) / 2 * stride;
    stride *= strides[b];
  }
  if (config.stride_layout == EncoderConfig::StrideLayout::kFinalPool &&
      config.downsample_factor > 1) {
    offset += (config.downsample_factor - 1) / 2.0 * stride;
    stride *= config.downsample_factor;
  }
  return {offset, offset, stride, rows, cols};
}

AffineTransform node_frame_transform(const AffineTransform& t,
                                     const NodeGeometry& geom, int64_t image_h,
                                     int64_t image_w) {
  if (geom.rows < 2 || geom.cols < 2)
    throw std::invalid_argument(
        "node_frame_transform: needs at least 2 nodes per axis");
  if (image_h < 2 || image_w < 2)
    throw std::invalid_argument("node_frame_transform: image too small");
  // Per axis: node-normalized u -> pixel o + stride * (u+1)(n-1)/2, then to
  // pixel-normalized 2p/(P-1) - 1. Affine in u, so the frame change is itself
  // an AffineTransform s and the result is s^-1 (t (s)).
  const double ax = geom.stride * static_cast<double>(geom.cols - 1) /
                    static_cast<double>(image_w - 1);
  const double bx = (2.0 * geom.offset_x +
                     geom.stride * static_cast<double>(geom.cols - 1)) /
                        static_cast<double>(image_w - 1) -
                    1.0;
  const double ay = geom.stride * static_cast<double>(geom.rows - 1) /
                    static_cast<double>(image_h - 1);
  const double by = (2.0 * geom.offset_y +
                     geom.stride * static_cast<double>(geom.rows - 1)) /
                        static_cast<double>(image_h - 1) -
                    1.0;
  AffineTransform s;
  s.m = {ax, 0, bx, 0, ay, by};
  return compose(s.inverse(), compose(t, s));
}

Tensor encode_frame(const Tensor& frame, const EncoderWeights& weights,
                    const EncoderConfig& config, bool use_head) {
  if (frame.rank() != 3 || frame.shape()[0] != 3)
    throw std::invalid_argument("encode_frame: [3,H,W] input required, got " +
                                shape_str(frame.shape()));
  node_grid_extent(config, frame.shape()[1], frame.shape()[2]);

  auto strides = config.block_strides();
  Tensor x = frame;
  for (int b = 0; b < config.num_blocks; ++b) {
    x = conv2d(x, weights.conv[b], strides[b], config.padding);
    x = channel_norm(x, weights.gain[b], weights.bias[b], config.norm_eps);
    x = relu(x);
  }
  if (config.stride_layout == EncoderConfig::StrideLayout::kFinalPool &&
      config.downsample_factor > 1)
    x = avg_pool2d(x, config.downsample_factor);
  if (use_head) {
    x = add_channel_bias(conv2d(x, weights.head1_w, 1, config.padding),
                         weights.head1_b);
    if (config.head == EncoderConfig::Head::kTwoFc) {
      x = relu(x);
      x = add_channel_bias(conv2d(x, weights.head2_w, 1, config.padding),
                           weights.head2_b);
    }
  }
  return l2_normalize_nodes(chw_to_hwc(x));
}

std::vector<FeatureMap> encode(const Tensor& frames, const EncoderWeights& weights,
                               const EncoderConfig& config, Track track,
                               bool use_head) {
  if (frames.rank() != 4 || frames.shape()[1] != 3)
    throw std::invalid_argument("encode: [T,3,H,W] input required, got " +
                                shape_str(frames.shape()));
  const int64_t t_count = frames.shape()[0];
  const int64_t per = frames.numel() / t_count;
  std::vector<FeatureMap> out;
  for (int64_t t = 0; t < t_count; ++t) {
    Tensor frame = Tensor::zeros({3, frames.shape()[2], frames.shape()[3]},
                                 frames.dtype());
    for (int64_t i = 0; i < per; ++i) frame.set(i, frames.at(t * per + i));
    out.push_back({encode_frame(frame, weights, config, use_head),
                   static_cast<int>(t), track});
  }
  return out;
}

}  // namespace cw3
