#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cw3/tensor.hpp"

namespace cw3 {

// Scene motion: a global background similarity (rotation/zoom about the frame
// center plus translation) and rigid translating disc sprites layered on top.
// Later sprites occlude earlier ones.
struct MotionSpec {
  std::array<double, 2> bg_velocity{0, 0};  // px per frame
  double bg_rot_rate = 0;                   // radians per frame
  double bg_log_zoom_rate = 0;              // log-scale per frame
  struct Sprite {
    std::array<double, 2> center0{0, 0};
    std::array<double, 2> velocity{0, 0};
    double radius = 0;
  };
  std::vector<Sprite> sprites;

  std::array<double, 2> sprite_center(size_t s, double t) const;
  // Background map: frame-0 position -> frame-t position, and its inverse.
  std::array<double, 2> bg_map(double t, std::array<double, 2> u, double h,
                               double w) const;
  std::array<double, 2> bg_map_inv(double t, std::array<double, 2> q, double h,
                                   double w) const;
  // Owner of a frame-0 pixel: sprite index, or -1 for background.
  int owner_at_start(std::array<double, 2> p) const;
  // Topmost sprite covering position p at time t, or -1 for background.
  int owner_at(double t, std::array<double, 2> p) const;
  // One-step motion of content owned by `owner` from frame t to t+1.
  std::array<double, 2> step(int owner, double t, std::array<double, 2> p,
                             double h, double w) const;
  // Direct frame-0 -> frame-t map of content owned by `owner`.
  std::array<double, 2> from_start(int owner, double t, std::array<double, 2> p,
                                   double h, double w) const;
};

struct ClipConfig {
  int frames = 8;
  int height = 64, width = 64;
  int num_sprites = 3;
  double motion_mag = 2.2;      // max translation px per frame
  double rot_rate = 0.008;      // max |radians| per frame
  double zoom_rate = 0.012;     // max |log zoom| per frame
  double sprite_radius_lo = 8;
  double sprite_radius_hi = 13;
  int texture_waves = 6;
  double texture_period_lo = 6;
  double texture_period_hi = 22;
  void validate() const;
};

// Frames plus dense ground truth: per t, the frame-0 pixel -> frame-t
// position field and a visibility flag (in bounds and unoccluded).
struct SyntheticClip {
  Tensor frames;  // [T,3,H,W] in [0,1], f64
  std::vector<std::vector<double>> flow;     // per t: 2*H*W, (x,y) per pixel
  std::vector<std::vector<uint8_t>> visible; // per t: H*W
  MotionSpec motion;
  int height = 0, width = 0;

  int64_t t_count() const { return static_cast<int64_t>(flow.size()); }
};

SyntheticClip generate_clip(uint64_t seed, const ClipConfig& config);
// Deterministic textures from texture_seed with caller-supplied motion.
SyntheticClip generate_clip_from_spec(const MotionSpec& motion,
                                      const ClipConfig& config,
                                      uint64_t texture_seed);

// Clip loaded back from disk; frames quantized to 8 bits, flow to f32.
// The motion spec round-trips exactly through meta.txt (%.17g).
struct LoadedClip {
  std::vector<Tensor> frames;  // each [3,H,W] f32
  std::vector<std::vector<double>> flow;
  std::vector<std::vector<uint8_t>> visible;
  MotionSpec motion;
  int height = 0, width = 0;
  int64_t t_count() const { return static_cast<int64_t>(frames.size()); }
};

// Directory layout: frame_%04d.ppm, gt.bin, meta.txt.
void write_clip(const std::string& dir, const SyntheticClip& clip, uint64_t seed);
LoadedClip load_clip(const std::string& dir);

void write_manifest(const std::string& path, const std::vector<std::string>& dirs);
std::vector<std::string> read_manifest(const std::string& path);

}  // namespace cw3
