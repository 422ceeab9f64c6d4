#include "cw3/coloraug.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace cw3 {

namespace {

constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;

struct Plane {
  std::vector<double> v;  // [3*H*W], channel-major
  int64_t h, w;
  int64_t hw() const { return h * w; }
  void clamp01() {
    for (double& x : v) x = std::clamp(x, 0.0, 1.0);
  }
};

void apply_brightness(Plane& p, double f) {
  for (double& x : p.v) x *= f;
  p.clamp01();
}

void apply_contrast(Plane& p, double f) {
  double mg = 0;
  for (int64_t i = 0; i < p.hw(); ++i)
    mg += kLumaR * p.v[i] + kLumaG * p.v[p.hw() + i] + kLumaB * p.v[2 * p.hw() + i];
  mg /= static_cast<double>(p.hw());
  for (double& x : p.v) x = f * x + (1.0 - f) * mg;
  p.clamp01();
}

void apply_saturation(Plane& p, double f) {
  for (int64_t i = 0; i < p.hw(); ++i) {
    const double l =
        kLumaR * p.v[i] + kLumaG * p.v[p.hw() + i] + kLumaB * p.v[2 * p.hw() + i];
    for (int c = 0; c < 3; ++c) {
      double& x = p.v[c * p.hw() + i];
      x = f * x + (1.0 - f) * l;
    }
  }
  p.clamp01();
}

void apply_hue(Plane& p, double delta) {
  for (int64_t i = 0; i < p.hw(); ++i) {
    auto hsv = rgb_to_hsv(p.v[i], p.v[p.hw() + i], p.v[2 * p.hw() + i]);
    hsv[0] = hsv[0] + delta;
    hsv[0] -= std::floor(hsv[0]);
    auto rgb = hsv_to_rgb(hsv[0], hsv[1], hsv[2]);
    p.v[i] = rgb[0];
    p.v[p.hw() + i] = rgb[1];
    p.v[2 * p.hw() + i] = rgb[2];
  }
  p.clamp01();
}

void apply_grayscale(Plane& p) {
  for (int64_t i = 0; i < p.hw(); ++i) {
    const double l =
        kLumaR * p.v[i] + kLumaG * p.v[p.hw() + i] + kLumaB * p.v[2 * p.hw() + i];
    p.v[i] = p.v[p.hw() + i] = p.v[2 * p.hw() + i] = l;
  }
}

void apply_blur(Plane& p, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<size_t>(i + radius)] =
        std::exp(-0.5 * (i / sigma) * (i / sigma));
    sum += kernel[static_cast<size_t>(i + radius)];
  }
  for (double& k : kernel) k /= sum;

  std::vector<double> tmp(p.v.size());
  auto clampi = [](int64_t i, int64_t n) { return std::clamp<int64_t>(i, 0, n - 1); };
  for (int c = 0; c < 3; ++c) {
    const double* src = p.v.data() + c * p.hw();
    double* dst = tmp.data() + c * p.hw();
    for (int64_t y = 0; y < p.h; ++y)
      for (int64_t x = 0; x < p.w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<size_t>(i + radius)] *
                 src[y * p.w + clampi(x + i, p.w)];
        dst[y * p.w + x] = acc;
      }
  }
  for (int c = 0; c < 3; ++c) {
    const double* src = tmp.data() + c * p.hw();
    double* dst = p.v.data() + c * p.hw();
    for (int64_t y = 0; y < p.h; ++y)
      for (int64_t x = 0; x < p.w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<size_t>(i + radius)] *
                 src[clampi(y + i, p.h) * p.w + x];
        dst[y * p.w + x] = acc;
      }
  }
  p.clamp01();
}

void apply_solarize(Plane& p, double threshold) {
  for (double& x : p.v)
    if (x > threshold) x = 1.0 - x;
}

}  // namespace

void ColorAugConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(jitter_prob) || !prob(grayscale_prob) || !prob(blur_prob) ||
      !prob(solarize_prob))
    throw std::invalid_argument("ColorAugConfig: probabilities must be in [0,1]");
  if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0 || hue > 0.5)
    throw std::invalid_argument("ColorAugConfig: bad jitter strengths");
  if (blur_sigma_lo <= 0 || blur_sigma_lo > blur_sigma_hi)
    throw std::invalid_argument("ColorAugConfig: bad blur sigma range");
}

std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  double h = 0;
  if (d > 0) {
    if (mx == r)
      h = (g - b) / d;
    else if (mx == g)
      h = (b - r) / d + 2.0;
    else
      h = (r - g) / d + 4.0;
    h /= 6.0;
    if (h < 0) h += 1.0;
  }
  const double s = mx == 0 ? 0.0 : d / mx;
  return {h, s, mx};
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  if (s == 0) return {v, v, v};
  const double hh = h * 6.0;
  const int sector = std::min(5, static_cast<int>(std::floor(hh)));
  const double f = hh - sector;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

void color_augment_frame(Tensor& frame, const ColorAugConfig& config, Rng& rng) {
  config.validate();
  if (frame.rank() != 3 || frame.shape()[0] != 3)
    throw std::invalid_argument("color_augment_frame: [3,H,W] required");
  Plane p{frame.to_doubles(), frame.shape()[1], frame.shape()[2]};

  if (rng.bernoulli(config.jitter_prob)) {
    int order[4] = {0, 1, 2, 3};
    for (int i = 3; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(0, i)]);
    for (int op : order) {
      switch (op) {
        case 0:
          apply_brightness(p, rng.uniform(std::max(0.0, 1.0 - config.brightness),
                                          1.0 + config.brightness));
          break;
        case 1:
          apply_contrast(p, rng.uniform(std::max(0.0, 1.0 - config.contrast),
                                        1.0 + config.contrast));
          break;
        case 2:
          apply_saturation(p, rng.uniform(std::max(0.0, 1.0 - config.saturation),
                                          1.0 + config.saturation));
          break;
        default:
          apply_hue(p, rng.uniform(-config.hue, config.hue));
      }
    }
  }
  if (rng.bernoulli(config.grayscale_prob)) apply_grayscale(p);
  if (rng.bernoulli(config.blur_prob))
    apply_blur(p, rng.uniform(config.blur_sigma_lo, config.blur_sigma_hi));
  if (rng.bernoulli(config.solarize_prob))
    apply_solarize(p, config.solarize_threshold);
  p.clamp01();

  if (frame.dtype() == Dtype::kF32) {
    auto dst = frame.data<float>();
    for (size_t i = 0; i < p.v.size(); ++i) dst[i] = static_cast<float>(p.v[i]);
  } else {
    auto dst = frame.data<double>();
    for (size_t i = 0; i < p.v.size(); ++i) dst[i] = p.v[i];
  }
}

Tensor color_augment(const Tensor& frames, const ColorAugConfig& config, Rng& rng) {
  if (frames.rank() != 4 || frames.shape()[1] != 3)
    throw std::invalid_argument("color_augment: [T,3,H,W] required");
  Tensor out = frames.copy_as(frames.dtype());
  const int64_t tc = frames.shape()[0];
  const int64_t per = frames.numel() / tc;
  const Shape frame_shape{3, frames.shape()[2], frames.shape()[3]};
  for (int64_t t = 0; t < tc; ++t) {
    Tensor frame = Tensor::zeros(frame_shape, frames.dtype());
    if (frames.dtype() == Dtype::kF32) {
      auto src = out.data<float>();
      std::copy_n(src.begin() + t * per, per, frame.data<float>().begin());
      color_augment_frame(frame, config, rng);
      std::copy_n(frame.data<float>().begin(), per, src.begin() + t * per);
    } else {
      auto src = out.data<double>();
      std::copy_n(src.begin() + t * per, per, frame.data<double>().begin());
      color_augment_frame(frame, config, rng);
      std::copy_n(frame.data<double>().begin(), per, src.begin() + t * per);
    }
  }
  return out;
}

}  // namespace cw3
