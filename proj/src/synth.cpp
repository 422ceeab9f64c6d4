#include "cw3/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "cw3/image.hpp"
#include "cw3/rng.hpp"
#include "cw3/serialize.hpp"

namespace cw3 {

namespace {

constexpr double kTau = 6.283185307179586476925287;

struct Texture {
  struct Wave {
    double dirx, diry, freq, phase, amp;
  };
  std::array<std::vector<Wave>, 3> waves;

  double value(int ch, double x, double y) const {
    double v = 0.5;
    for (const auto& w : waves[ch])
      v += w.amp * std::sin(w.freq * (w.dirx * x + w.diry * y) + w.phase);
    return std::clamp(v, 0.0, 1.0);
  }
};

Texture make_texture(Rng& rng, const ClipConfig& cfg) {
  Texture tex;
  for (int ch = 0; ch < 3; ++ch) {
    for (int i = 0; i < cfg.texture_waves; ++i) {
      const double angle = rng.uniform(0.0, kTau);
      const double period =
          rng.uniform(cfg.texture_period_lo, cfg.texture_period_hi);
      tex.waves[ch].push_back({std::cos(angle), std::sin(angle), kTau / period,
                               rng.uniform(0.0, kTau),
                               0.48 / cfg.texture_waves});
    }
  }
  return tex;
}

}  // namespace

std::array<double, 2> MotionSpec::sprite_center(size_t s, double t) const {
  const auto& sp = sprites[s];
  return {sp.center0[0] + sp.velocity[0] * t, sp.center0[1] + sp.velocity[1] * t};
}

std::array<double, 2> MotionSpec::bg_map(double t, std::array<double, 2> u,
                                         double h, double w) const {
  const double cx = (w - 1.0) / 2.0, cy = (h - 1.0) / 2.0;
  const double th = bg_rot_rate * t;
  const double s = std::exp(bg_log_zoom_rate * t);
  const double c = std::cos(th), sn = std::sin(th);
  const double dx = u[0] - cx, dy = u[1] - cy;
  return {cx + s * (c * dx - sn * dy) + bg_velocity[0] * t,
          cy + s * (sn * dx + c * dy) + bg_velocity[1] * t};
}

std::array<double, 2> MotionSpec::bg_map_inv(double t, std::array<double, 2> q,
                                             double h, double w) const {
  const double cx = (w - 1.0) / 2.0, cy = (h - 1.0) / 2.0;
  const double th = bg_rot_rate * t;
  const double s = std::exp(bg_log_zoom_rate * t);
  const double c = std::cos(th), sn = std::sin(th);
  const double dx = q[0] - bg_velocity[0] * t - cx;
  const double dy = q[1] - bg_velocity[1] * t - cy;
  return {cx + (c * dx + sn * dy) / s, cy + (-sn * dx + c * dy) / s};
}

int MotionSpec::owner_at_start(std::array<double, 2> p) const {
  for (int s = static_cast<int>(sprites.size()) - 1; s >= 0; --s) {
    const double dx = p[0] - sprites[s].center0[0];
    const double dy = p[1] - sprites[s].center0[1];
    if (dx * dx + dy * dy <= sprites[s].radius * sprites[s].radius) return s;
  }
  return -1;
}

int MotionSpec::owner_at(double t, std::array<double, 2> p) const {
  for (int s = static_cast<int>(sprites.size()) - 1; s >= 0; --s) {
    const auto c = sprite_center(static_cast<size_t>(s), t);
    const double dx = p[0] - c[0], dy = p[1] - c[1];
    if (dx * dx + dy * dy <= sprites[s].radius * sprites[s].radius) return s;
  }
  return -1;
}

std::array<double, 2> MotionSpec::step(int owner, double t, std::array<double, 2> p,
                                       double h, double w) const {
  if (owner >= 0) {
    const auto& v = sprites[static_cast<size_t>(owner)].velocity;
    return {p[0] + v[0], p[1] + v[1]};
  }
  return bg_map(t + 1, bg_map_inv(t, p, h, w), h, w);
}

std::array<double, 2> MotionSpec::from_start(int owner, double t,
                                             std::array<double, 2> p, double h,
                                             double w) const {
  if (owner >= 0) {
    const auto& v = sprites[static_cast<size_t>(owner)].velocity;
    return {p[0] + v[0] * t, p[1] + v[1] * t};
  }
  return bg_map(t, p, h, w);
}

void ClipConfig::validate() const {
  if (frames < 2) throw std::invalid_argument("ClipConfig: frames >= 2 required");
  if (height < 32 || width < 32)
    throw std::invalid_argument("ClipConfig: extent >= 32 required");
  if (num_sprites < 0) throw std::invalid_argument("ClipConfig: num_sprites >= 0");
  if (sprite_radius_lo > sprite_radius_hi || sprite_radius_lo <= 0)
    throw std::invalid_argument("ClipConfig: bad sprite radius range");
  if (num_sprites > 0 && 2.0 * sprite_radius_hi >= std::min(height, width))
    throw std::invalid_argument("ClipConfig: sprite larger than frame");
  if (texture_waves < 1) throw std::invalid_argument("ClipConfig: texture_waves >= 1");
  if (texture_period_lo <= 0 || texture_period_lo > texture_period_hi)
    throw std::invalid_argument("ClipConfig: bad texture period range");
  if (motion_mag < 0 || rot_rate < 0 || zoom_rate < 0)
    throw std::invalid_argument("ClipConfig: motion rates must be >= 0");
}

SyntheticClip generate_clip_from_spec(const MotionSpec& motion,
                                      const ClipConfig& config,
                                      uint64_t texture_seed) {
  config.validate();
  const int tc = config.frames, h = config.height, w = config.width;
  const int ns = static_cast<int>(motion.sprites.size());

  Rng trng(mix_stream(texture_seed, "clip-texture"));
  Texture bg_tex = make_texture(trng, config);
  std::vector<Texture> sprite_tex;
  for (int s = 0; s < ns; ++s) sprite_tex.push_back(make_texture(trng, config));

  SyntheticClip clip;
  clip.motion = motion;
  clip.height = h;
  clip.width = w;
  clip.frames = Tensor::zeros({tc, 3, h, w}, Dtype::kF64);
  const int64_t hw = static_cast<int64_t>(h) * w;

  for (int t = 0; t < tc; ++t) {
    // Render: topmost covering sprite wins, else background.
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int owner = motion.owner_at(t, {double(x), double(y)});
        for (int ch = 0; ch < 3; ++ch) {
          double v;
          if (owner >= 0) {
            const auto c = motion.sprite_center(static_cast<size_t>(owner), t);
            v = sprite_tex[owner].value(ch, x - c[0], y - c[1]);
          } else {
            const auto u = motion.bg_map_inv(t, {double(x), double(y)}, h, w);
            v = bg_tex.value(ch, u[0], u[1]);
          }
          clip.frames.set(((static_cast<int64_t>(t) * 3 + ch) * h + y) * w + x, v);
        }
      }

    // Ground truth for every frame-0 pixel.
    std::vector<double> field(2 * hw);
    std::vector<uint8_t> vis(hw);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int64_t i = static_cast<int64_t>(y) * w + x;
        const int owner = motion.owner_at_start({double(x), double(y)});
        const auto q = motion.from_start(owner, t, {double(x), double(y)}, h, w);
        field[2 * i] = q[0];
        field[2 * i + 1] = q[1];
        bool visible = q[0] > -0.5 && q[0] < w - 0.5 && q[1] > -0.5 && q[1] < h - 0.5;
        for (int s = ns - 1; visible && s > owner; --s) {
          const auto c = motion.sprite_center(static_cast<size_t>(s), t);
          const double dx = q[0] - c[0], dy = q[1] - c[1];
          if (dx * dx + dy * dy <= motion.sprites[s].radius * motion.sprites[s].radius)
            visible = false;
        }
        vis[i] = visible ? 1 : 0;
      }
    clip.flow.push_back(std::move(field));
    clip.visible.push_back(std::move(vis));
  }
  return clip;
}

SyntheticClip generate_clip(uint64_t seed, const ClipConfig& config) {
  config.validate();
  Rng rng(mix_stream(seed, "clip-motion"));
  MotionSpec motion;
  {
    const double angle = rng.uniform(0.0, kTau);
    const double mag = config.motion_mag * rng.uniform(0.3, 1.0);
    motion.bg_velocity = {mag * std::cos(angle), mag * std::sin(angle)};
    motion.bg_rot_rate = rng.uniform(-config.rot_rate, config.rot_rate);
    motion.bg_log_zoom_rate = rng.uniform(-config.zoom_rate, config.zoom_rate);
  }
  for (int s = 0; s < config.num_sprites; ++s) {
    MotionSpec::Sprite sp;
    sp.radius = rng.uniform(config.sprite_radius_lo, config.sprite_radius_hi);
    const double mx = sp.radius + 1.0;
    sp.center0 = {rng.uniform(mx, config.width - 1 - mx),
                  rng.uniform(mx, config.height - 1 - mx)};
    const double angle = rng.uniform(0.0, kTau);
    const double mag = config.motion_mag * rng.uniform(0.4, 1.2);
    sp.velocity = {mag * std::cos(angle), mag * std::sin(angle)};
    motion.sprites.push_back(sp);
  }
  return generate_clip_from_spec(motion, config, rng.next_u64());
}

void write_clip(const std::string& dir, const SyntheticClip& clip, uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const int64_t tc = clip.t_count();
  const int64_t hw = static_cast<int64_t>(clip.height) * clip.width;
  for (int64_t t = 0; t < tc; ++t) {
    Tensor frame = Tensor::zeros({3, clip.height, clip.width}, Dtype::kF64);
    for (int64_t i = 0; i < 3 * hw; ++i) frame.set(i, clip.frames.at(t * 3 * hw + i));
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.ppm", static_cast<int>(t));
    write_frame(frame, dir + "/" + name);
  }

  ByteWriter bw;
  bw.u32(static_cast<uint32_t>(tc));
  bw.u32(static_cast<uint32_t>(clip.height));
  bw.u32(static_cast<uint32_t>(clip.width));
  for (int64_t t = 0; t < tc; ++t)
    for (int64_t i = 0; i < 2 * hw; ++i)
      bw.f32(static_cast<float>(clip.flow[t][i]));
  for (int64_t t = 0; t < tc; ++t) {
    uint8_t acc = 0;
    int bit = 0;
    for (int64_t i = 0; i < hw; ++i) {
      if (clip.visible[t][i]) acc |= static_cast<uint8_t>(1u << bit);
      if (++bit == 8) {
        bw.u8(acc);
        acc = 0;
        bit = 0;
      }
    }
    if (bit) bw.u8(acc);
  }
  write_file_bytes(dir + "/gt.bin", bw.buffer());

  std::ofstream meta(dir + "/meta.txt");
  meta << "seed = " << seed << "\n";
  meta << "frames = " << tc << "\n";
  meta << "height = " << clip.height << "\nwidth = " << clip.width << "\n";
  char buf[64];
  auto put = [&](const std::string& key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    meta << key << " = " << buf << "\n";
  };
  put("bg_velocity_x", clip.motion.bg_velocity[0]);
  put("bg_velocity_y", clip.motion.bg_velocity[1]);
  put("bg_rot_rate", clip.motion.bg_rot_rate);
  put("bg_log_zoom_rate", clip.motion.bg_log_zoom_rate);
  meta << "num_sprites = " << clip.motion.sprites.size() << "\n";
  for (size_t s = 0; s < clip.motion.sprites.size(); ++s) {
    const auto& sp = clip.motion.sprites[s];
    const std::string p = "sprite" + std::to_string(s) + "_";
    put(p + "center_x", sp.center0[0]);
    put(p + "center_y", sp.center0[1]);
    put(p + "velocity_x", sp.velocity[0]);
    put(p + "velocity_y", sp.velocity[1]);
    put(p + "radius", sp.radius);
  }
}

LoadedClip load_clip(const std::string& dir) {
  ByteReader br(read_file_bytes(dir + "/gt.bin"));
  LoadedClip clip;
  const uint32_t tc = br.u32();
  clip.height = static_cast<int>(br.u32());
  clip.width = static_cast<int>(br.u32());
  if (tc < 1 || tc > 100000 || clip.height < 1 || clip.width < 1)
    throw FormatError("implausible gt.bin header", 0);
  const int64_t hw = static_cast<int64_t>(clip.height) * clip.width;
  for (uint32_t t = 0; t < tc; ++t) {
    std::vector<double> field(2 * hw);
    for (int64_t i = 0; i < 2 * hw; ++i) field[i] = br.f32();
    clip.flow.push_back(std::move(field));
  }
  for (uint32_t t = 0; t < tc; ++t) {
    std::vector<uint8_t> vis(hw);
    uint8_t acc = 0;
    int bit = 8;
    for (int64_t i = 0; i < hw; ++i) {
      if (bit == 8) {
        acc = br.u8();
        bit = 0;
      }
      vis[i] = (acc >> bit) & 1u;
      ++bit;
    }
    clip.visible.push_back(std::move(vis));
  }
  for (uint32_t t = 0; t < tc; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.ppm", static_cast<int>(t));
    clip.frames.push_back(read_frame(dir + "/" + name, Dtype::kF32));
  }

  std::ifstream meta(dir + "/meta.txt");
  if (!meta) throw FormatError("cannot open " + dir + "/meta.txt", 0);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto num = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("meta.txt missing " + key, 0);
    return std::strtod(it->second.c_str(), nullptr);
  };
  clip.motion.bg_velocity = {num("bg_velocity_x"), num("bg_velocity_y")};
  clip.motion.bg_rot_rate = num("bg_rot_rate");
  clip.motion.bg_log_zoom_rate = num("bg_log_zoom_rate");
  const int ns = static_cast<int>(num("num_sprites"));
  for (int s = 0; s < ns; ++s) {
    const std::string p = "sprite" + std::to_string(s) + "_";
    MotionSpec::Sprite sp;
    sp.center0 = {num(p + "center_x"), num(p + "center_y")};
    sp.velocity = {num(p + "velocity_x"), num(p + "velocity_y")};
    sp.radius = num(p + "radius");
    clip.motion.sprites.push_back(sp);
  }
  return clip;
}

void write_manifest(const std::string& path, const std::vector<std::string>& dirs) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& d : dirs) f << d << "\n";
}

std::vector<std::string> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open manifest " + path, 0);
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<std::string> dirs;
  std::string line;
  while (std::getline(f, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    // Relative entries are resolved against the manifest's directory so a
    // data set can be moved or regenerated anywhere.
    std::filesystem::path p(line);
    dirs.push_back(p.is_absolute() ? line : (base / p).string());
  }
  return dirs;
}

}  // namespace cw3
