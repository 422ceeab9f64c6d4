#pragma once

#include <array>

#include "cw3/rng.hpp"
#include "cw3/tensor.hpp"

namespace cw3 {

// Photometric augmentation chain: color jitter (brightness, contrast,
// saturation, hue in random order), grayscale, gaussian blur, solarize.
// Two presets mirror the forward/backward track recipes.
struct ColorAugConfig {
  double jitter_prob = 0.8;
  double brightness = 0.8;
  double contrast = 0.8;
  double saturation = 0.8;
  double hue = 0.2;
  double grayscale_prob = 0.2;
  double blur_prob = 0.2;
  double blur_sigma_lo = 0.1;
  double blur_sigma_hi = 2.0;
  double solarize_prob = 0.0;
  double solarize_threshold = 0.5;

  static ColorAugConfig forward_track() { return {}; }
  static ColorAugConfig backward_track() {
    ColorAugConfig c;
    c.brightness = 0.4;
    c.contrast = 0.4;
    c.saturation = 0.2;
    c.hue = 0.1;
    c.solarize_prob = 0.2;
    return c;
  }
  static ColorAugConfig disabled() {
    ColorAugConfig c;
    c.jitter_prob = c.grayscale_prob = c.blur_prob = c.solarize_prob = 0.0;
    return c;
  }
  void validate() const;
};

// In-place augmentation of one [3,H,W] frame in [0,1]; clamped per op.
void color_augment_frame(Tensor& frame, const ColorAugConfig& config, Rng& rng);

// Each frame of [T,3,H,W] augmented independently.
Tensor color_augment(const Tensor& frames, const ColorAugConfig& config, Rng& rng);

// h,s,v in [0,1]; exact inverses in real arithmetic.
std::array<double, 3> rgb_to_hsv(double r, double g, double b);
std::array<double, 3> hsv_to_rgb(double h, double s, double v);

}  // namespace cw3
