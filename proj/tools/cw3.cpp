// cw3: generate synthetic clips, train correspondence encoders, evaluate
// label propagation, and export diagnostic / plot-ready CSVs.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cw3/diagnostics.hpp"
#include "cw3/propagate.hpp"
#include "cw3/synth.hpp"
#include "cw3/train.hpp"

namespace {

struct TrainFlags {
  cw3::TrainConfig config;
  std::string config_file;
  std::string method = "stfc3";
  std::string padding = "zero";
  std::string color_aug = "on";
  std::string mask_norm = "frame";
  std::string precision = "f32";
  std::string data, out, resume;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config_file,
                  "key = value file, full training schema; CLI overrides");
  cmd->add_option("--data", f.data, "dataset manifest")->required();
  cmd->add_option("--out", f.out, "output directory for checkpoint and metrics");
  cmd->add_option("--resume", f.resume, "checkpoint to continue from");
  cmd->add_option("--seed", f.config.seed, "training seed");
  cmd->add_option("--method", f.method)
      ->check(CLI::IsMember({"vanilla_fc3", "stfc3"}));
  cmd->add_option("--padding", f.padding)
      ->check(CLI::IsMember({"zero", "replicate", "reflect", "none"}));
  cmd->add_option("--gamma-lo", f.config.gamma_lo, "crop area fraction, low");
  cmd->add_option("--gamma-hi", f.config.gamma_hi, "crop area fraction, high");
  cmd->add_option("--tau", f.config.tau, "softmax temperature");
  cmd->add_option("--cycle-len", f.config.cycle_len, "frames per track");
  cmd->add_option("--batch", f.config.batch, "sequences per step");
  cmd->add_option("--lr", f.config.lr, "Adam learning rate");
  cmd->add_option("--steps", f.config.steps, "optimizer steps");
  cmd->add_option("--color-aug", f.color_aug)->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--mask-norm", f.mask_norm)
      ->check(CLI::IsMember({"frame", "count"}));
  cmd->add_option("--precision", f.precision)->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_option("--threads", f.config.threads, "0 = hardware concurrency");
  cmd->add_flag("--deterministic", f.config.deterministic,
                "serial execution, bit-exact per (config, seed)");
}

// The config file carries the same key = value schema the trainer stores in
// checkpoints, so every field (including encoder ones without a dedicated
// flag) is reachable; flags given on the command line override the file.
cw3::TrainConfig resolve_train_config(const CLI::App& cmd, const TrainFlags& f) {
  cw3::TrainConfig config;
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) throw std::runtime_error("cannot open config file " + f.config_file);
    std::stringstream text;
    text << in.rdbuf();
    config = cw3::TrainConfig::from_kv(text.str());
  }
  auto passed = [&](const char* name) { return cmd.count(name) > 0; };
  if (passed("--seed")) config.seed = f.config.seed;
  if (passed("--gamma-lo")) config.gamma_lo = f.config.gamma_lo;
  if (passed("--gamma-hi")) config.gamma_hi = f.config.gamma_hi;
  if (passed("--tau")) config.tau = f.config.tau;
  if (passed("--cycle-len")) config.cycle_len = f.config.cycle_len;
  if (passed("--batch")) config.batch = f.config.batch;
  if (passed("--lr")) config.lr = f.config.lr;
  if (passed("--steps")) config.steps = f.config.steps;
  if (passed("--threads")) config.threads = f.config.threads;
  if (passed("--deterministic")) config.deterministic = f.config.deterministic;
  if (passed("--method")) config.method = cw3::method_from_name(f.method);
  if (passed("--padding"))
    config.encoder.padding = cw3::padding_from_name(f.padding);
  if (passed("--color-aug")) config.color_aug = f.color_aug == "on";
  if (passed("--mask-norm")) config.mask_norm_by_count = f.mask_norm == "count";
  if (passed("--precision")) config.precision = cw3::dtype_from_name(f.precision);
  return config;
}

int run_plot_data(const std::vector<std::string>& runs, const std::string& out) {
  std::filesystem::create_directories(out);
  std::ofstream losses(out + "/losses.csv", std::ios::trunc);
  std::ofstream evals(out + "/evals.csv", std::ios::trunc);
  if (!losses || !evals) {
    std::cerr << "cw3: cannot write to " << out << "\n";
    return 1;
  }
  losses << "run,step,loss,wall_ms\n";
  evals << "run,clip,frame,metric,value\n";
  for (const auto& run : runs) {
    const std::string name = std::filesystem::path(run).filename().string();
    std::string line;
    std::ifstream metrics(run + "/metrics.csv");
    if (metrics && std::getline(metrics, line))
      while (std::getline(metrics, line))
        if (!line.empty()) losses << name << "," << line << "\n";
    std::ifstream eval(run + "/eval.csv");
    if (eval && std::getline(eval, line))
      while (std::getline(eval, line))
        if (!line.empty()) evals << name << "," << line << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised video correspondence workbench"};
  app.require_subcommand(1);

  uint64_t gd_seed = 1;
  int gd_count = 8;
  std::string gd_out = "data";
  cw3::ClipConfig clip_config;
  auto* gen = app.add_subcommand("gen-data", "write synthetic clips + manifest");
  gen->add_option("--seed", gd_seed);
  gen->add_option("--count", gd_count, "number of clips");
  gen->add_option("--out", gd_out)->required();
  gen->add_option("--frames", clip_config.frames);
  gen->add_option("--height", clip_config.height);
  gen->add_option("--width", clip_config.width);
  gen->add_option("--sprites", clip_config.num_sprites);
  gen->add_option("--motion-mag", clip_config.motion_mag);

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "optimize an encoder");
  add_train_flags(train, tf);

  std::string ev_ckpt, ev_data, ev_out;
  cw3::EvalConfig ev;
  std::string ev_features = "block";
  double ev_tau = -1;
  auto* eval = app.add_subcommand("eval", "propagate labels and score them");
  eval->set_config("--config")->description("key = value file; CLI overrides");
  eval->add_option("--ckpt", ev_ckpt, "trained checkpoint")->required();
  eval->add_option("--data", ev_data, "dataset manifest")->required();
  eval->add_option("--out", ev_out, "directory for eval.csv");
  eval->add_option("--m", ev.prop.m, "context frames beyond the first");
  eval->add_option("--r", ev.prop.r, "restriction radius, node units");
  eval->add_option("--k", ev.prop.k, "neighbours kept per query");
  eval->add_option("--alpha", ev.alpha, "match tolerance fraction");
  auto* tau_opt =
      eval->add_option("--tau", ev_tau, "test temperature; default = training tau");
  eval->add_option("--features", ev_features, "block = pre-head, head = projected")
      ->check(CLI::IsMember({"block", "head"}));
  eval->add_flag("--identity", ev.identity, "score the copy-seed baseline");
  eval->add_flag("--export-maps", ev.export_maps, "write segmentation PGMs");

  std::string dg_ckpt, dg_data, dg_out;
  double dg_lambda = 1e-3;
  auto* diag = app.add_subcommand("diagnose", "affinity and probe report");
  diag->add_option("--ckpt", dg_ckpt)->required();
  diag->add_option("--data", dg_data)->required();
  diag->add_option("--out", dg_out, "directory for diagnostics.csv + pca ppm");
  diag->add_option("--lambda", dg_lambda, "probe ridge strength");

  std::vector<std::string> plot_runs;
  std::string plot_out = "plots";
  auto* plot = app.add_subcommand("plot-data", "merge run CSVs for plotting");
  plot->add_option("runs", plot_runs, "run directories")->required();
  plot->add_option("--out", plot_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const std::string manifest =
          cw3::gen_data(gd_seed, gd_count, clip_config, gd_out);
      std::printf("wrote %d clips, manifest %s\n", gd_count, manifest.c_str());
    } else if (train->parsed()) {
      const cw3::TrainConfig config = resolve_train_config(*train, tf);
      const cw3::TrainResult result = cw3::train(config, tf.data, tf.out, tf.resume);
      const double last = result.losses.empty() ? 0.0 : result.losses.back();
      std::printf("trained to step %lld, last loss %.6f\n",
                  static_cast<long long>(result.checkpoint.step), last);
    } else if (eval->parsed()) {
      const cw3::Checkpoint ckpt = cw3::load_checkpoint(ev_ckpt);
      ev.prop.tau_test = tau_opt->count() > 0 ? ev_tau : ckpt.config.tau;
      ev.use_head = ev_features == "head";
      const cw3::EvalSummary s = cw3::evaluate(ckpt, ev_data, ev, ev_out);
      std::printf("clips %lld  match_rate %.6f  jaccard %.6f  boundary_f %.6f\n",
                  static_cast<long long>(s.clips), s.match_rate, s.jaccard,
                  s.boundary_f);
    } else if (diag->parsed()) {
      const cw3::Checkpoint ckpt = cw3::load_checkpoint(dg_ckpt);
      const cw3::DiagnosticReport r =
          cw3::diagnose(ckpt, dg_data, dg_out, dg_lambda);
      std::printf(
          "diag_adjacent %.6f  diag_unrelated %.6f  probe_r2 (%.6f, %.6f)\n",
          r.diag_adjacent, r.diag_unrelated, r.probe_r2_x, r.probe_r2_y);
    } else if (plot->parsed()) {
      return run_plot_data(plot_runs, plot_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "cw3: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
