#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cw3/diagnostics.hpp"
#include "cw3/encoder.hpp"
#include "cw3/propagate.hpp"
#include "cw3/synth.hpp"
#include "cw3/tensor.hpp"

namespace cw3 {

enum class Method : uint8_t { kVanillaFc3 = 0, kStfc3 = 1 };

std::string method_name(Method m);
Method method_from_name(const std::string& name);
Dtype dtype_from_name(const std::string& name);

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  int batch = 8;
  int steps = 2000;
  double tau = 0.05;
  int cycle_len = 4;
  double gamma_lo = 0.08, gamma_hi = 1.0;
  double flip_prob = 0.5;
  Method method = Method::kStfc3;
  bool color_aug = true;
  bool mask_norm_by_count = false;
  EncoderConfig encoder;
  uint64_t seed = 1;
  Dtype precision = Dtype::kF32;
  bool deterministic = false;
  int threads = 0;  // 0: CW3_THREADS if set, else hardware concurrency

  void validate() const;
  // key = value text, one line per field; exact decimal round trip.
  std::string to_kv() const;
  static TrainConfig from_kv(const std::string& text);
};

int resolve_threads(const TrainConfig& config);

// First-moment / second-moment buffers in the parameters' own dtype so a
// checkpoint round trip is a bitwise no-op; update arithmetic runs in double.
struct AdamState {
  std::vector<Tensor> m, v;
  int64_t step = 0;
};

void adam_step(std::vector<Tensor>& params,
               const std::vector<std::vector<double>>& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps);

struct Checkpoint {
  uint32_t version = 1;
  TrainConfig config;
  int64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;  // weights + adam moments
};

// Container: "CW3K", version, config text, step, tensor records, CRC32.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint make_checkpoint(const TrainConfig& config,
                           const EncoderWeights& weights, const AdamState& adam,
                           int64_t step);
EncoderWeights checkpoint_weights(const Checkpoint& ckpt);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;  // one per step, batch mean
};

// Runs the cycle-consistency training loop over the manifest's clips.
// out_dir (optional) receives metrics.csv, transforms.bin and checkpoint.cw3k;
// resume_path continues from a saved checkpoint (config must match except
// the step budget). Bit-deterministic per (config, seed), independent of
// thread count: per-sequence gradients are reduced in sequence order.
TrainResult train(const TrainConfig& config, const std::string& manifest_path,
                  const std::string& out_dir = "",
                  const std::string& resume_path = "");

struct EvalConfig {
  PropagationConfig prop;
  double alpha = 0.1;
  bool use_head = false;  // test-time features default to the pre-head block
  bool identity = false;  // score the no-motion copy baseline instead
  bool export_maps = false;
};

struct EvalSummary {
  double match_rate = 0;
  double jaccard = 0;
  double boundary_f = 0;
  int64_t clips = 0;
  // clip,frame,metric,value rows (header excluded).
  std::vector<std::string> rows;
};

EvalSummary evaluate(const Checkpoint& ckpt, const std::string& manifest_path,
                     const EvalConfig& eval_config,
                     const std::string& out_dir = "");

// Affinity diagonality on adjacent/unrelated pairs, position probe, and PCA
// exports; writes diagnostics.csv plus pca_*.ppm when out_dir is given.
DiagnosticReport diagnose(const Checkpoint& ckpt,
                          const std::string& manifest_path,
                          const std::string& out_dir = "",
                          double probe_lambda = 1e-3);

// Writes `count` clips under out_dir plus out_dir/manifest.txt.
std::string gen_data(uint64_t seed, int count, const ClipConfig& config,
                     const std::string& out_dir);

}  // namespace cw3
