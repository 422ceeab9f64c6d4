#include "cw3/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "cw3/affine.hpp"
#include "cw3/coloraug.hpp"
#include "cw3/cycle.hpp"
#include "cw3/image.hpp"
#include "cw3/rng.hpp"
#include "cw3/serialize.hpp"

namespace cw3 {

std::string method_name(Method m) {
  return m == Method::kVanillaFc3 ? "vanilla_fc3" : "stfc3";
}

Method method_from_name(const std::string& name) {
  if (name == "vanilla_fc3") return Method::kVanillaFc3;
  if (name == "stfc3") return Method::kStfc3;
  throw std::invalid_argument("unknown method: " + name);
}

Dtype dtype_from_name(const std::string& name) {
  if (name == "f32") return Dtype::kF32;
  if (name == "f64") return Dtype::kF64;
  throw std::invalid_argument("unknown precision: " + name);
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("TrainConfig: lr > 0 required");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw std::invalid_argument("TrainConfig: betas must lie in [0,1)");
  if (!(adam_eps > 0))
    throw std::invalid_argument("TrainConfig: adam_eps > 0 required");
  if (batch < 1) throw std::invalid_argument("TrainConfig: batch >= 1 required");
  if (steps < 0) throw std::invalid_argument("TrainConfig: steps >= 0 required");
  if (!(tau > 0)) throw std::invalid_argument("TrainConfig: tau > 0 required");
  if (cycle_len < 2)
    throw std::invalid_argument("TrainConfig: cycle length >= 2 required");
  if (threads < 0)
    throw std::invalid_argument("TrainConfig: threads >= 0 required");
  TransformParams tp;
  tp.scale_lo = gamma_lo;
  tp.scale_hi = gamma_hi;
  tp.flip_prob = flip_prob;
  tp.validate();
  encoder.validate();
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string without_steps_line(const std::string& kv) {
  std::istringstream in(kv);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("steps =", 0) != 0) out << line << "\n";
  return out.str();
}

}  // namespace

std::string TrainConfig::to_kv() const {
  std::ostringstream out;
  out << "lr = " << fmt_double(lr) << "\n";
  out << "beta1 = " << fmt_double(beta1) << "\n";
  out << "beta2 = " << fmt_double(beta2) << "\n";
  out << "adam-eps = " << fmt_double(adam_eps) << "\n";
  out << "batch = " << batch << "\n";
  out << "steps = " << steps << "\n";
  out << "tau = " << fmt_double(tau) << "\n";
  out << "cycle-len = " << cycle_len << "\n";
  out << "gamma-lo = " << fmt_double(gamma_lo) << "\n";
  out << "gamma-hi = " << fmt_double(gamma_hi) << "\n";
  out << "flip-prob = " << fmt_double(flip_prob) << "\n";
  out << "method = " << method_name(method) << "\n";
  out << "color-aug = " << (color_aug ? "on" : "off") << "\n";
  out << "mask-norm = " << (mask_norm_by_count ? "count" : "frame") << "\n";
  out << "seed = " << seed << "\n";
  out << "precision = " << dtype_name(precision) << "\n";
  out << "deterministic = " << (deterministic ? 1 : 0) << "\n";
  out << "threads = " << threads << "\n";
  out << "padding = " << padding_name(encoder.padding) << "\n";
  out << "enc-blocks = " << encoder.num_blocks << "\n";
  out << "enc-channels = ";
  for (size_t i = 0; i < encoder.channels.size(); ++i)
    out << (i ? "," : "") << encoder.channels[i];
  out << "\n";
  out << "enc-kernel = " << encoder.kernel_size << "\n";
  out << "enc-downsample = " << encoder.downsample_factor << "\n";
  out << "enc-head = "
      << (encoder.head == EncoderConfig::Head::kConv1x1 ? "conv1x1" : "two_fc")
      << "\n";
  out << "enc-head-hidden = " << encoder.head_hidden << "\n";
  out << "enc-embed-dim = " << encoder.embed_dim << "\n";
  out << "enc-stride-layout = "
      << (encoder.stride_layout == EncoderConfig::StrideLayout::kStridedConvs
              ? "strided"
              : "final_pool")
      << "\n";
  out << "enc-norm-eps = " << fmt_double(encoder.norm_eps) << "\n";
  return out.str();
}

TrainConfig TrainConfig::from_kv(const std::string& text) {
  TrainConfig config;
  std::istringstream in(text);
  std::string line;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("TrainConfig: bad line: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto d = [&]() { return std::strtod(value.c_str(), nullptr); };
    auto i = [&]() { return static_cast<int>(std::strtol(value.c_str(), nullptr, 10)); };

    if (key == "lr")
      config.lr = d();
    else if (key == "beta1")
      config.beta1 = d();
    else if (key == "beta2")
      config.beta2 = d();
    else if (key == "adam-eps")
      config.adam_eps = d();
    else if (key == "batch")
      config.batch = i();
    else if (key == "steps")
      config.steps = i();
    else if (key == "tau")
      config.tau = d();
    else if (key == "cycle-len")
      config.cycle_len = i();
    else if (key == "gamma-lo")
      config.gamma_lo = d();
    else if (key == "gamma-hi")
      config.gamma_hi = d();
    else if (key == "flip-prob")
      config.flip_prob = d();
    else if (key == "method")
      config.method = method_from_name(value);
    else if (key == "color-aug")
      config.color_aug = value == "on";
    else if (key == "mask-norm")
      config.mask_norm_by_count = value == "count";
    else if (key == "seed")
      config.seed = std::strtoull(value.c_str(), nullptr, 10);
    else if (key == "precision")
      config.precision = dtype_from_name(value);
    else if (key == "deterministic")
      config.deterministic = value == "1" || value == "true";
    else if (key == "threads")
      config.threads = i();
    else if (key == "padding")
      config.encoder.padding = padding_from_name(value);
    else if (key == "enc-blocks")
      config.encoder.num_blocks = i();
    else if (key == "enc-channels") {
      config.encoder.channels.clear();
      std::istringstream list(value);
      std::string item;
      while (std::getline(list, item, ','))
        config.encoder.channels.push_back(
            static_cast<int>(std::strtol(item.c_str(), nullptr, 10)));
    } else if (key == "enc-kernel")
      config.encoder.kernel_size = i();
    else if (key == "enc-downsample")
      config.encoder.downsample_factor = i();
    else if (key == "enc-head")
      config.encoder.head = value == "two_fc" ? EncoderConfig::Head::kTwoFc
                                              : EncoderConfig::Head::kConv1x1;
    else if (key == "enc-head-hidden")
      config.encoder.head_hidden = i();
    else if (key == "enc-embed-dim")
      config.encoder.embed_dim = i();
    else if (key == "enc-stride-layout")
      config.encoder.stride_layout =
          value == "final_pool" ? EncoderConfig::StrideLayout::kFinalPool
                                : EncoderConfig::StrideLayout::kStridedConvs;
    else if (key == "enc-norm-eps")
      config.encoder.norm_eps = d();
    else
      throw std::invalid_argument("TrainConfig: unknown key: " + key);
  }
  return config;
}

int resolve_threads(const TrainConfig& config) {
  if (config.deterministic) return 1;
  int want = config.threads;
  if (want <= 0) want = static_cast<int>(std::thread::hardware_concurrency());
  if (want < 1) want = 1;
  if (const char* env = std::getenv("CW3_THREADS")) {
    const int cap = static_cast<int>(std::strtol(env, nullptr, 10));
    if (cap >= 1) want = std::min(want, cap);
  }
  return std::max(1, std::min(want, config.batch));
}

void adam_step(std::vector<Tensor>& params,
               const std::vector<std::vector<double>>& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: params/grads length mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Tensor::zeros(p.shape(), p.dtype()));
      state.v.push_back(Tensor::zeros(p.shape(), p.dtype()));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adam_step: state does not match params");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != static_cast<size_t>(params[i].numel()))
      throw std::invalid_argument("adam_step: grad length mismatch");
    // Moments round through storage precision before use so a checkpoint
    // boundary between steps is invisible to the trajectory.
    auto update = [&]<class T>() {
      auto w = params[i].data<T>();
      auto m = state.m[i].data<T>();
      auto v = state.v[i].data<T>();
      for (size_t j = 0; j < w.size(); ++j) {
        const double g = grads[i][j];
        m[j] = static_cast<T>(beta1 * static_cast<double>(m[j]) +
                              (1.0 - beta1) * g);
        v[j] = static_cast<T>(beta2 * static_cast<double>(v[j]) +
                              (1.0 - beta2) * g * g);
        const double mhat = static_cast<double>(m[j]) / bc1;
        const double vhat = static_cast<double>(v[j]) / bc2;
        w[j] = static_cast<T>(static_cast<double>(w[j]) -
                              lr * mhat / (std::sqrt(vhat) + eps));
      }
    };
    if (params[i].dtype() == Dtype::kF32)
      update.template operator()<float>();
    else
      update.template operator()<double>();
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  ByteWriter bw;
  bw.bytes("CW3K", 4);
  bw.u32(ckpt.version);
  bw.str(ckpt.config.to_kv());
  bw.u64(static_cast<uint64_t>(ckpt.step));
  bw.u32(static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors)
    write_tensor_record(bw, name, tensor);
  const uint32_t crc = crc32_of(bw.buffer().data(), bw.buffer().size());
  bw.u32(crc);
  write_file_bytes(path, bw.buffer());
}

Checkpoint load_checkpoint(const std::string& path) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() < 16) throw FormatError("checkpoint truncated", bytes.size());
  uint32_t stored = 0;
  for (int i = 3; i >= 0; --i)
    stored = (stored << 8) | bytes[bytes.size() - 4 + static_cast<size_t>(i)];
  const uint32_t actual = crc32_of(bytes.data(), bytes.size() - 4);
  if (stored != actual)
    throw FormatError("checkpoint CRC mismatch", bytes.size() - 4);
  bytes.resize(bytes.size() - 4);

  ByteReader br(std::move(bytes));
  char magic[4];
  br.bytes(magic, 4);
  if (std::memcmp(magic, "CW3K", 4) != 0)
    throw FormatError("bad checkpoint magic", 0);
  Checkpoint ckpt;
  ckpt.version = br.u32();
  if (ckpt.version != 1)
    throw FormatError("unsupported checkpoint version", br.pos());
  ckpt.config = TrainConfig::from_kv(br.str());
  ckpt.step = static_cast<int64_t>(br.u64());
  const uint32_t count = br.u32();
  for (uint32_t i = 0; i < count; ++i)
    ckpt.tensors.push_back(read_tensor_record(br));
  if (!br.at_end()) throw FormatError("trailing bytes in checkpoint", br.pos());
  return ckpt;
}

Checkpoint make_checkpoint(const TrainConfig& config,
                           const EncoderWeights& weights, const AdamState& adam,
                           int64_t step) {
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.step = step;
  const auto named = weights.named();
  if (!adam.m.empty() && adam.m.size() != named.size())
    throw std::logic_error("make_checkpoint: moments do not match weights");
  for (const auto& entry : named) ckpt.tensors.push_back(entry);
  for (size_t i = 0; i < adam.m.size(); ++i) {
    ckpt.tensors.emplace_back("adam_m." + named[i].first, adam.m[i]);
    ckpt.tensors.emplace_back("adam_v." + named[i].first, adam.v[i]);
  }
  return ckpt;
}

EncoderWeights checkpoint_weights(const Checkpoint& ckpt) {
  std::vector<std::pair<std::string, Tensor>> entries;
  for (const auto& entry : ckpt.tensors)
    if (entry.first.rfind("adam_", 0) != 0) entries.push_back(entry);
  return EncoderWeights::from_named(entries, ckpt.config.encoder);
}

namespace {

AdamState adam_from_checkpoint(const Checkpoint& ckpt,
                               const EncoderWeights& weights) {
  std::map<std::string, Tensor> by_name;
  bool any_moment = false;
  for (const auto& [name, tensor] : ckpt.tensors) {
    by_name.emplace(name, tensor);
    if (name.rfind("adam_", 0) == 0) any_moment = true;
  }
  AdamState state;
  if (!any_moment) {
    if (ckpt.step != 0)
      throw FormatError("checkpoint lacks optimizer moments past step 0", 0);
    return state;
  }
  state.step = ckpt.step;
  for (const auto& [name, tensor] : weights.named()) {
    const auto mi = by_name.find("adam_m." + name);
    const auto vi = by_name.find("adam_v." + name);
    if (mi == by_name.end() || vi == by_name.end())
      throw FormatError("checkpoint missing moments for " + name, 0);
    state.m.push_back(mi->second);
    state.v.push_back(vi->second);
  }
  return state;
}

struct SeqResult {
  std::vector<std::vector<double>> grads;
  double loss = 0;
  AffineTransform bf, bb;
};

struct TrainContext {
  const TrainConfig* config = nullptr;
  const std::vector<std::vector<Tensor>>* clips = nullptr;
  const EncoderWeights* weights = nullptr;
  NodeGeometry geom;
  int64_t image_h = 0, image_w = 0;
  int64_t grid_rows = 0, grid_cols = 0;
};

SeqResult run_sequence(const TrainContext& ctx, int64_t step, int seq) {
  const TrainConfig& cfg = *ctx.config;
  const auto& clips = *ctx.clips;
  const auto ustep = static_cast<uint64_t>(step);
  const auto useq = static_cast<uint64_t>(seq);

  Rng pick(mix_stream(cfg.seed, "pick", ustep, useq));
  const auto& clip =
      clips[static_cast<size_t>(pick.uniform_int(0, static_cast<int64_t>(clips.size()) - 1))];
  const int64_t t0 =
      pick.uniform_int(0, static_cast<int64_t>(clip.size()) - cfg.cycle_len);

  TransformParams tp;
  tp.scale_lo = cfg.gamma_lo;
  tp.scale_hi = cfg.gamma_hi;
  tp.flip_prob = cfg.flip_prob;
  Rng rf(mix_stream(cfg.seed, "transform-f", ustep, useq));
  const AffineTransform bf = sample_transform(rf, tp);
  AffineTransform bb = bf;
  if (cfg.method == Method::kStfc3) {
    Rng rb(mix_stream(cfg.seed, "transform-b", ustep, useq));
    bb = sample_transform(rb, tp);
  }

  std::vector<Tensor> fwd, bwd;
  for (int t = 0; t < cfg.cycle_len; ++t) {
    fwd.push_back(warp_image_chw(clip[static_cast<size_t>(t0 + t)], bf));
    bwd.push_back(warp_image_chw(clip[static_cast<size_t>(t0 + t)], bb));
  }
  if (cfg.color_aug) {
    Rng cf(mix_stream(cfg.seed, "color-f", ustep, useq));
    for (auto& f : fwd)
      color_augment_frame(f, ColorAugConfig::forward_track(), cf);
    if (cfg.method == Method::kStfc3) {
      Rng cb(mix_stream(cfg.seed, "color-b", ustep, useq));
      for (auto& f : bwd)
        color_augment_frame(f, ColorAugConfig::backward_track(), cb);
    } else {
      // Single-track method: the whole augmentation is shared, so replaying
      // the forward stream keeps the two tracks bitwise identical.
      Rng cb(mix_stream(cfg.seed, "color-f", ustep, useq));
      for (auto& f : bwd)
        color_augment_frame(f, ColorAugConfig::forward_track(), cb);
    }
  }

  EncoderWeights worker = ctx.weights->shared_clone(true);
  std::vector<FeatureMap> fmaps, bmaps;
  for (int t = 0; t < cfg.cycle_len; ++t)
    fmaps.push_back({encode_frame(fwd[static_cast<size_t>(t)], worker, cfg.encoder),
                     static_cast<int>(t0) + t, Track::kForward});
  for (int t = 0; t < cfg.cycle_len; ++t)
    bmaps.push_back({encode_frame(bwd[static_cast<size_t>(t)], worker, cfg.encoder),
                     static_cast<int>(t0) + t, Track::kBackward});

  // bf/bb live in the image's normalized frame; the mask and the feature
  // warp act on the node grid, so re-express the crossover transform there.
  const AffineTransform b_fb = node_frame_transform(
      compose_forward_backward(bf, bb), ctx.geom, ctx.image_h, ctx.image_w);
  const auto mask = compute_mask(b_fb, ctx.grid_rows, ctx.grid_cols);
  Tensor loss = multi_cycle_loss(fmaps, bmaps, b_fb, mask, cfg.tau,
                                 cfg.mask_norm_by_count);
  loss.backward();

  SeqResult out;
  out.loss = loss.item();
  out.bf = bf;
  out.bb = bb;
  for (const auto& [name, tensor] : worker.named())
    out.grads.push_back(tensor.grad_to_doubles());
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::string& manifest_path,
                  const std::string& out_dir, const std::string& resume_path) {
  config.validate();
  const auto dirs = read_manifest(manifest_path);
  if (dirs.empty()) throw std::invalid_argument("train: empty manifest");

  std::vector<std::vector<Tensor>> clips;
  int height = -1, width = -1;
  for (const auto& dir : dirs) {
    LoadedClip lc = load_clip(dir);
    if (height < 0) {
      height = lc.height;
      width = lc.width;
    } else if (lc.height != height || lc.width != width) {
      throw std::invalid_argument("train: clips disagree on frame size");
    }
    if (lc.t_count() < config.cycle_len)
      throw std::invalid_argument("train: clip shorter than the cycle length");
    std::vector<Tensor> frames;
    frames.reserve(lc.frames.size());
    for (auto& f : lc.frames)
      frames.push_back(config.precision == Dtype::kF32
                           ? f
                           : f.copy_as(config.precision));
    clips.push_back(std::move(frames));
  }
  const auto [grid_rows, grid_cols] =
      node_grid_extent(config.encoder, height, width);

  EncoderWeights weights;
  AdamState adam;
  int64_t start = 0;
  if (resume_path.empty()) {
    weights = init_weights(config.encoder, config.seed, config.precision);
  } else {
    const Checkpoint ck = load_checkpoint(resume_path);
    if (without_steps_line(ck.config.to_kv()) != without_steps_line(config.to_kv()))
      throw std::invalid_argument("train: resume config mismatch");
    weights = checkpoint_weights(ck);
    adam = adam_from_checkpoint(ck, weights);
    start = ck.step;
    if (start > config.steps)
      throw std::invalid_argument("train: checkpoint is past the step budget");
  }

  auto named = weights.named();
  std::vector<Tensor> params;
  params.reserve(named.size());
  for (auto& [name, tensor] : named) params.push_back(tensor);

  const TrainContext ctx{&config,
                         &clips,
                         &weights,
                         node_geometry(config.encoder, height, width),
                         height,
                         width,
                         grid_rows,
                         grid_cols};
  const int threads = resolve_threads(config);

  std::ofstream metrics, transforms;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics.open(out_dir + "/metrics.csv", std::ios::trunc);
    if (!metrics)
      throw std::runtime_error("train: cannot write to " + out_dir);
    metrics << "step,loss,wall_ms\n";
    transforms.open(out_dir + "/transforms.bin",
                    std::ios::binary | std::ios::trunc);
  }

  TrainResult result;
  for (int64_t step = start; step < config.steps; ++step) {
    const auto tick = std::chrono::steady_clock::now();
    std::vector<SeqResult> outs(static_cast<size_t>(config.batch));
    if (threads <= 1) {
      for (int seq = 0; seq < config.batch; ++seq)
        outs[static_cast<size_t>(seq)] = run_sequence(ctx, step, seq);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
      for (int w = 0; w < threads; ++w)
        pool.emplace_back([&, w]() {
          try {
            for (int seq = w; seq < config.batch; seq += threads)
              outs[static_cast<size_t>(seq)] = run_sequence(ctx, step, seq);
          } catch (...) {
            errors[static_cast<size_t>(w)] = std::current_exception();
          }
        });
      for (auto& th : pool) th.join();
      for (const auto& err : errors)
        if (err) std::rethrow_exception(err);
    }

    // Reduce per-sequence gradients in sequence order so serial and threaded
    // runs agree bitwise.
    std::vector<std::vector<double>> acc(params.size());
    for (size_t i = 0; i < params.size(); ++i)
      acc[i].assign(static_cast<size_t>(params[i].numel()), 0.0);
    double loss_sum = 0;
    for (int seq = 0; seq < config.batch; ++seq) {
      const auto& out = outs[static_cast<size_t>(seq)];
      loss_sum += out.loss;
      for (size_t i = 0; i < acc.size(); ++i)
        for (size_t j = 0; j < acc[i].size(); ++j) acc[i][j] += out.grads[i][j];
    }
    const double inv = 1.0 / static_cast<double>(config.batch);
    for (auto& g : acc)
      for (double& v : g) v *= inv;
    adam_step(params, acc, adam, config.lr, config.beta1, config.beta2,
              config.adam_eps);

    const double loss = loss_sum * inv;
    result.losses.push_back(loss);
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                  tick)
            .count();
    if (metrics.is_open()) {
      char row[96];
      std::snprintf(row, sizeof(row), "%lld,%.17g,%.3f\n",
                    static_cast<long long>(step), loss, wall_ms);
      metrics << row;
    }
    if (transforms.is_open()) {
      ByteWriter bw;
      for (int seq = 0; seq < config.batch; ++seq) {
        for (int track = 0; track < 2; ++track) {
          bw.u64(static_cast<uint64_t>(step));
          bw.u32(static_cast<uint32_t>(seq));
          bw.u8(static_cast<uint8_t>(track));
          const auto& out = outs[static_cast<size_t>(seq)];
          const auto mb = (track == 0 ? out.bf : out.bb).matrix_bytes();
          bw.bytes(mb.data(), mb.size());
        }
      }
      transforms.write(reinterpret_cast<const char*>(bw.buffer().data()),
                       static_cast<std::streamsize>(bw.buffer().size()));
    }
  }

  result.checkpoint = make_checkpoint(config, weights, adam, adam.step);
  if (!out_dir.empty())
    save_checkpoint(out_dir + "/checkpoint.cw3k", result.checkpoint);
  return result;
}

EvalSummary evaluate(const Checkpoint& ckpt, const std::string& manifest_path,
                     const EvalConfig& eval_config, const std::string& out_dir) {
  eval_config.prop.validate();
  if (eval_config.alpha <= 0)
    throw std::invalid_argument("evaluate: alpha > 0 required");
  const TrainConfig& cfg = ckpt.config;
  const EncoderWeights weights = checkpoint_weights(ckpt);
  const auto dirs = read_manifest(manifest_path);
  if (dirs.empty()) throw std::invalid_argument("evaluate: empty manifest");
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  EvalSummary summary;
  double match_sum = 0, j_sum = 0, f_sum = 0;
  int64_t match_rows = 0, region_rows = 0;

  for (const auto& dir : dirs) {
    const LoadedClip clip = load_clip(dir);
    const std::string clip_name = std::filesystem::path(dir).filename().string();
    const NodeGeometry geom =
        node_geometry(cfg.encoder, clip.height, clip.width);

    std::vector<FeatureMap> maps;
    for (int64_t t = 0; t < clip.t_count(); ++t) {
      const Tensor frame = cfg.precision == Dtype::kF32
                               ? clip.frames[static_cast<size_t>(t)]
                               : clip.frames[static_cast<size_t>(t)].copy_as(
                                     cfg.precision);
      maps.push_back({encode_frame(frame, weights, cfg.encoder,
                                   eval_config.use_head),
                      static_cast<int>(t), Track::kForward});
    }

    auto emit = [&](int64_t frame, const char* metric, double value) {
      char row[160];
      std::snprintf(row, sizeof(row), "%s,%lld,%s,%.17g", clip_name.c_str(),
                    static_cast<long long>(frame), metric, value);
      summary.rows.emplace_back(row);
    };

    const LabelMap kp = keypoint_seeds(geom.rows, geom.cols);
    const auto kp_pred = eval_config.identity
                             ? identity_baseline(kp, clip.t_count())
                             : propagate(maps, kp, eval_config.prop);
    const auto rates =
        per_frame_matches(kp_pred, truth_view(clip), eval_config.alpha, geom);
    for (size_t i = 0; i < rates.size(); ++i)
      if (rates[i] >= 0) {
        emit(static_cast<int64_t>(i) + 1, "match_rate", rates[i]);
        match_sum += rates[i];
        ++match_rows;
      }

    const int classes = static_cast<int>(clip.motion.sprites.size()) + 1;
    if (classes > 1) {
      const LabelMap seg = segmentation_seeds(clip.motion, geom, classes);
      const auto seg_pred = eval_config.identity
                                ? identity_baseline(seg, clip.t_count())
                                : propagate(maps, seg, eval_config.prop);
      for (int64_t t = 1; t < clip.t_count(); ++t) {
        double jc = 0, bf = 0;
        for (int c = 1; c < classes; ++c) {
          const RegionScore rs = score_region(
              label_class_mask(seg_pred[static_cast<size_t>(t)], c),
              sprite_node_mask(clip.motion, c - 1, static_cast<double>(t), geom));
          jc += rs.jaccard;
          bf += rs.boundary_f;
        }
        jc /= classes - 1;
        bf /= classes - 1;
        emit(t, "jaccard", jc);
        emit(t, "boundary_f", bf);
        j_sum += jc;
        f_sum += bf;
        ++region_rows;
      }
      if (eval_config.export_maps && !out_dir.empty()) {
        for (int64_t t = 0; t < clip.t_count(); ++t) {
          Image8 img;
          img.h = static_cast<int>(geom.rows);
          img.w = static_cast<int>(geom.cols);
          img.channels = 1;
          img.data.resize(static_cast<size_t>(geom.rows * geom.cols));
          const auto& pred = seg_pred[static_cast<size_t>(t)];
          for (int64_t n = 0; n < geom.rows * geom.cols; ++n)
            img.data[static_cast<size_t>(n)] = static_cast<uint8_t>(
                pred.argmax_channel(n) * 255 / (classes - 1));
          char name[96];
          std::snprintf(name, sizeof(name), "%s_seg_%04lld.pgm",
                        clip_name.c_str(), static_cast<long long>(t));
          write_pnm(out_dir + "/" + name, img);
        }
      }
    }
    ++summary.clips;
  }

  summary.match_rate =
      match_rows ? match_sum / static_cast<double>(match_rows) : 0.0;
  summary.jaccard = region_rows ? j_sum / static_cast<double>(region_rows) : 0.0;
  summary.boundary_f =
      region_rows ? f_sum / static_cast<double>(region_rows) : 0.0;

  if (!out_dir.empty()) {
    std::ofstream csv(out_dir + "/eval.csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("evaluate: cannot write to " + out_dir);
    csv << "clip,frame,metric,value\n";
    for (const auto& row : summary.rows) csv << row << "\n";
  }
  return summary;
}

DiagnosticReport diagnose(const Checkpoint& ckpt,
                          const std::string& manifest_path,
                          const std::string& out_dir, double probe_lambda) {
  const TrainConfig& cfg = ckpt.config;
  const EncoderWeights weights = checkpoint_weights(ckpt);
  const auto dirs = read_manifest(manifest_path);
  if (dirs.size() < 2)
    throw std::invalid_argument("diagnose: >= 2 clips required for unrelated pairs");
  const size_t use = std::min<size_t>(dirs.size(), 16);

  std::vector<LoadedClip> clips;
  clips.reserve(use);
  for (size_t i = 0; i < use; ++i) clips.push_back(load_clip(dirs[i]));

  auto frame_at = [&](const LoadedClip& clip, size_t t) {
    return cfg.precision == Dtype::kF32 ? clip.frames[t]
                                        : clip.frames[t].copy_as(cfg.precision);
  };

  std::vector<FramePair> pairs;
  for (size_t i = 0; i < use; ++i) {
    if (clips[i].t_count() >= 2)
      pairs.push_back({frame_at(clips[i], 0), frame_at(clips[i], 1), true});
    pairs.push_back(
        {frame_at(clips[i], 0), frame_at(clips[(i + 1) % use], 0), false});
  }
  DiagnosticReport report =
      affinity_pair_report(weights, cfg.encoder, pairs, cfg.tau, true);

  std::vector<FeatureMap> probe_maps;
  for (size_t i = 0; i < use; ++i)
    probe_maps.push_back({encode_frame(frame_at(clips[i], 0), weights, cfg.encoder),
                          static_cast<int>(i), Track::kForward});
  const ProbeR2 r2 = position_probe(probe_maps, probe_lambda);
  report.probe_r2_x = r2.x;
  report.probe_r2_y = r2.y;
  report.probe_maps = static_cast<int64_t>(use);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream csv(out_dir + "/diagnostics.csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("diagnose: cannot write to " + out_dir);
    csv << report_to_csv(report);
    write_frame(pca_rgb(probe_maps[0]), out_dir + "/pca_clip0.ppm");
  }
  return report;
}

std::string gen_data(uint64_t seed, int count, const ClipConfig& config,
                     const std::string& out_dir) {
  if (count < 0) throw std::invalid_argument("gen_data: count >= 0 required");
  config.validate();
  std::filesystem::create_directories(out_dir);
  // The manifest lists bare clip names; the reader resolves them against its
  // own directory, so a generated set is byte-identical wherever it lands.
  std::vector<std::string> names;
  names.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%04d", i);
    const uint64_t clip_seed = mix_stream(seed, "clip", static_cast<uint64_t>(i));
    write_clip(out_dir + "/" + name, generate_clip(clip_seed, config), clip_seed);
    names.emplace_back(name);
  }
  const std::string manifest = out_dir + "/manifest.txt";
  write_manifest(manifest, names);
  return manifest;
}

}  // namespace cw3
