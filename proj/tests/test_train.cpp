#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "cw3/serialize.hpp"
#include "cw3/train.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cw3;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("cw3_train_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small data set and model so a training step costs milliseconds.
std::string tiny_manifest(const std::string& tag, int clips = 2) {
  ClipConfig cc;
  cc.frames = 4;
  cc.height = 32;
  cc.width = 32;
  cc.num_sprites = 1;
  cc.sprite_radius_lo = 4;
  cc.sprite_radius_hi = 6;
  return gen_data(99, clips, cc, (temp_dir(tag) / "data").string());
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch = 2;
  c.steps = 3;
  c.cycle_len = 2;
  c.encoder.num_blocks = 2;
  c.encoder.channels = {6, 6};
  c.encoder.embed_dim = 6;
  c.encoder.downsample_factor = 4;
  c.precision = Dtype::kF64;
  c.deterministic = true;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("train config text round-trips every field") {
  TrainConfig c;
  c.lr = 3.5e-3;
  c.beta1 = 0.85;
  c.beta2 = 0.995;
  c.adam_eps = 1e-9;
  c.batch = 5;
  c.steps = 77;
  c.tau = 0.07;
  c.cycle_len = 3;
  c.gamma_lo = 0.1 + 0.2;  // force a non-terminating binary fraction
  c.gamma_hi = 0.9;
  c.flip_prob = 0.25;
  c.method = Method::kVanillaFc3;
  c.color_aug = false;
  c.mask_norm_by_count = true;
  c.seed = 123456789012345ull;
  c.precision = Dtype::kF64;
  c.deterministic = true;
  c.threads = 4;
  c.encoder.num_blocks = 3;
  c.encoder.channels = {8, 16, 16};
  c.encoder.kernel_size = 5;
  c.encoder.padding = PaddingMode::kReflect;
  c.encoder.downsample_factor = 2;
  c.encoder.head = EncoderConfig::Head::kTwoFc;
  c.encoder.head_hidden = 33;
  c.encoder.embed_dim = 12;
  c.encoder.stride_layout = EncoderConfig::StrideLayout::kFinalPool;
  c.encoder.norm_eps = 2e-6;

  const std::string kv = c.to_kv();
  const TrainConfig back = TrainConfig::from_kv(kv);
  CHECK(back.to_kv() == kv);
  CHECK(back.gamma_lo == c.gamma_lo);
  CHECK(back.seed == c.seed);
  CHECK(back.method == Method::kVanillaFc3);
  CHECK(back.encoder.channels == c.encoder.channels);

  CHECK_THROWS_AS(TrainConfig::from_kv("nonsense = 1\n"), std::invalid_argument);
}

TEST_CASE("train config validation rejects bad values") {
  TrainConfig c;
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.tau = -0.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.cycle_len = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.gamma_lo = 0.9;
  c.gamma_hi = 0.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.flip_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("adam matches a hand-stepped oracle") {
  Rng rng(801);
  const int64_t n = 23;
  auto w0 = gradcheck::random_values(rng, n, -1, 1);
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  for (Dtype dt : {Dtype::kF64, Dtype::kF32}) {
    std::vector<Tensor> params = {Tensor::from_doubles({n}, w0).copy_as(dt)};
    AdamState state;

    // The oracle carries moments and weights at storage precision, exactly
    // like the implementation claims to.
    auto quant = [&](double x) {
      return dt == Dtype::kF32 ? static_cast<double>(static_cast<float>(x)) : x;
    };
    std::vector<double> w(n), m(n, 0.0), v(n, 0.0);
    for (int64_t i = 0; i < n; ++i) w[static_cast<size_t>(i)] = quant(w0[static_cast<size_t>(i)]);

    for (int step = 1; step <= 4; ++step) {
      auto g = gradcheck::random_values(rng, n, -2, 2);
      adam_step(params, {g}, state, lr, b1, b2, eps);

      const double bc1 = 1.0 - std::pow(b1, step);
      const double bc2 = 1.0 - std::pow(b2, step);
      for (int64_t i = 0; i < n; ++i) {
        const auto j = static_cast<size_t>(i);
        m[j] = quant(b1 * m[j] + (1 - b1) * g[j]);
        v[j] = quant(b2 * v[j] + (1 - b2) * g[j] * g[j]);
        w[j] = quant(w[j] - lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps));
        CHECK(params[0].at(i) == w[j]);
      }
      CHECK(state.m[0].dtype() == dt);
      CHECK(state.step == step);
    }
  }
}

TEST_CASE("adam rejects mismatched gradients") {
  std::vector<Tensor> params = {Tensor::zeros({4}, Dtype::kF64)};
  AdamState state;
  std::vector<std::vector<double>> bad = {{1.0, 2.0}};
  CHECK_THROWS_AS(adam_step(params, bad, state, 0.1, 0.9, 0.999, 1e-8),
                  std::invalid_argument);
}

TEST_CASE("checkpoint bytes round-trip and corruption is caught") {
  const auto dir = temp_dir("ckpt");
  TrainConfig config = tiny_config();
  auto weights = init_weights(config.encoder, 7, Dtype::kF32);
  AdamState adam;
  Rng grng(5);
  std::vector<Tensor> params;
  std::vector<std::vector<double>> grads;
  for (auto& [name, t] : weights.named()) {
    params.push_back(t);
    grads.push_back(gradcheck::random_values(grng, t.numel(), -1, 1));
  }
  adam_step(params, grads, adam, 1e-3, 0.9, 0.999, 1e-8);

  const Checkpoint ckpt = make_checkpoint(config, weights, adam, 17);
  const auto path = (dir / "a.cw3k").string();
  save_checkpoint(path, ckpt);
  const Checkpoint back = load_checkpoint(path);

  CHECK(back.step == 17);
  CHECK(back.config.to_kv() == config.to_kv());
  REQUIRE(back.tensors.size() == ckpt.tensors.size());
  for (size_t i = 0; i < ckpt.tensors.size(); ++i) {
    CHECK(back.tensors[i].first == ckpt.tensors[i].first);
    CHECK(back.tensors[i].second.dtype() == ckpt.tensors[i].second.dtype());
    const auto a = ckpt.tensors[i].second.to_doubles();
    const auto b = back.tensors[i].second.to_doubles();
    CHECK(a == b);
  }

  // Saving the loaded checkpoint reproduces the file bit for bit.
  const auto path2 = (dir / "b.cw3k").string();
  save_checkpoint(path2, back);
  CHECK(slurp(path) == slurp(path2));

  // Weights and optimizer state survive extraction.
  EncoderWeights w2 = checkpoint_weights(back);
  CHECK(w2.conv[0].to_doubles() == weights.conv[0].to_doubles());

  // One flipped byte anywhere must fail the checksum.
  auto bytes = slurp(path);
  bytes[bytes.size() / 2] ^= 0x40;
  const auto bad = (dir / "bad.cw3k").string();
  std::ofstream(bad, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(load_checkpoint(bad), FormatError);

  // Truncation must fail too.
  auto cut = slurp(path);
  cut.resize(cut.size() - 9);
  const auto short_path = (dir / "short.cw3k").string();
  std::ofstream(short_path, std::ios::binary)
      .write(reinterpret_cast<const char*>(cut.data()),
             static_cast<std::streamsize>(cut.size()));
  CHECK_THROWS_AS(load_checkpoint(short_path), FormatError);
}

TEST_CASE("generated data is seed-deterministic on disk") {
  ClipConfig cc;
  cc.frames = 3;
  cc.height = 32;
  cc.width = 32;
  cc.num_sprites = 1;
  cc.sprite_radius_lo = 4;
  cc.sprite_radius_hi = 6;
  const auto da = temp_dir("gen_a"), db = temp_dir("gen_b");
  const auto ma = gen_data(31, 2, cc, (da / "d").string());
  const auto mb = gen_data(31, 2, cc, (db / "d").string());

  std::ifstream ia(ma), ib(mb);
  std::string la, lb;
  int clips = 0;
  while (std::getline(ia, la)) {
    REQUIRE(std::getline(ib, lb));
    CHECK(fs::path(la).filename() == fs::path(lb).filename());
    ++clips;
  }
  CHECK(clips == 2);

  for (const auto& e : fs::recursive_directory_iterator(da / "d")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), da / "d");
    CHECK(slurp(e.path()) == slurp(db / "d" / rel));
  }
}

TEST_CASE("training is bit-deterministic and thread-count independent") {
  const auto manifest = tiny_manifest("det");
  TrainConfig config = tiny_config();

  const auto oa = temp_dir("det_out_a"), ob = temp_dir("det_out_b");
  const auto ra = train(config, manifest, oa.string());
  const auto rb = train(config, manifest, ob.string());
  REQUIRE(ra.losses.size() == 3);
  CHECK(ra.losses == rb.losses);
  CHECK(slurp(oa / "checkpoint.cw3k") == slurp(ob / "checkpoint.cw3k"));
  CHECK(slurp(oa / "transforms.bin") == slurp(ob / "transforms.bin"));

  // A two-thread run must reduce to the same bits as the serial one.
  TrainConfig threaded = config;
  threaded.deterministic = false;
  threaded.threads = 2;
  const auto rc = train(threaded, manifest);
  CHECK(rc.losses == ra.losses);
}

TEST_CASE("resume reproduces the uninterrupted run bit for bit") {
  const auto manifest = tiny_manifest("resume");
  TrainConfig config = tiny_config();
  config.steps = 4;

  const auto full = temp_dir("resume_full");
  const auto rf = train(config, manifest, full.string());

  TrainConfig half = config;
  half.steps = 2;
  const auto mid = temp_dir("resume_mid");
  train(half, manifest, mid.string());

  const auto done = temp_dir("resume_done");
  const auto rr = train(config, manifest, done.string(),
                        (mid / "checkpoint.cw3k").string());
  REQUIRE(rr.losses.size() == 2);
  CHECK(rr.losses[0] == rf.losses[2]);
  CHECK(rr.losses[1] == rf.losses[3]);
  CHECK(slurp(full / "checkpoint.cw3k") == slurp(done / "checkpoint.cw3k"));

  // Any config change except the step budget blocks the resume.
  TrainConfig other = config;
  other.tau = 0.06;
  CHECK_THROWS_AS(
      train(other, manifest, "", (mid / "checkpoint.cw3k").string()),
      std::invalid_argument);
}

TEST_CASE("degenerate augmentation makes both methods coincide exactly") {
  const auto manifest = tiny_manifest("degen");
  TrainConfig config = tiny_config();
  config.gamma_lo = 1.0;
  config.gamma_hi = 1.0;
  config.flip_prob = 0.0;
  config.color_aug = false;

  TrainConfig vanilla = config;
  vanilla.method = Method::kVanillaFc3;
  TrainConfig stf = config;
  stf.method = Method::kStfc3;

  const auto rv = train(vanilla, manifest);
  const auto rs = train(stf, manifest);
  REQUIRE(rv.losses.size() == rs.losses.size());
  for (size_t i = 0; i < rv.losses.size(); ++i)
    CHECK(rv.losses[i] == rs.losses[i]);
}

TEST_CASE("methods diverge once the backward track is transformed") {
  const auto manifest = tiny_manifest("diverge");
  TrainConfig config = tiny_config();
  config.steps = 1;

  TrainConfig vanilla = config;
  vanilla.method = Method::kVanillaFc3;
  const auto rv = train(vanilla, manifest);
  const auto rs = train(config, manifest);
  CHECK(rv.losses[0] != rs.losses[0]);
}

TEST_CASE("losses are finite under both mask normalizations") {
  const auto manifest = tiny_manifest("norm");
  TrainConfig config = tiny_config();
  config.steps = 1;
  config.mask_norm_by_count = true;
  const auto r = train(config, manifest);
  CHECK(std::isfinite(r.losses[0]));
  CHECK(r.losses[0] > 0.0);
}

TEST_CASE("metrics file lists one row per step") {
  const auto manifest = tiny_manifest("metrics");
  TrainConfig config = tiny_config();
  const auto out = temp_dir("metrics_out");
  const auto r = train(config, manifest, out.string());

  std::ifstream in(out / "metrics.csv");
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "step,loss,wall_ms");
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    REQUIRE(c1 != std::string::npos);
    REQUIRE(c2 != std::string::npos);
    const double loss = std::strtod(line.c_str() + c1 + 1, nullptr);
    CHECK(loss == r.losses[static_cast<size_t>(rows)]);
    ++rows;
  }
  CHECK(rows == 3);
}

TEST_CASE("empty manifests are rejected") {
  const auto dir = temp_dir("empty");
  ClipConfig cc;
  cc.frames = 3;
  cc.height = 32;
  cc.width = 32;
  cc.num_sprites = 0;
  const auto manifest = gen_data(1, 0, cc, (dir / "d").string());
  TrainConfig config = tiny_config();
  CHECK_THROWS_AS(train(config, manifest), std::invalid_argument);
}

TEST_CASE("evaluation produces bounded aggregate scores") {
  const auto manifest = tiny_manifest("eval", 2);
  TrainConfig config = tiny_config();
  config.steps = 1;
  const auto out = temp_dir("eval_train");
  const auto r = train(config, manifest, out.string());

  EvalConfig ev;
  ev.prop.m = 1;
  ev.prop.r = 2;
  ev.prop.k = 4;
  ev.prop.tau_test = config.tau;
  const auto eo = temp_dir("eval_out");
  const auto summary = evaluate(r.checkpoint, manifest, ev, eo.string());
  CHECK(summary.clips == 2);
  CHECK(summary.match_rate >= 0.0);
  CHECK(summary.match_rate <= 1.0);
  CHECK(summary.jaccard >= 0.0);
  CHECK(summary.jaccard <= 1.0);
  CHECK(!summary.rows.empty());
  CHECK(fs::exists(eo / "eval.csv"));

  // The identity baseline runs the same protocol without the model.
  EvalConfig idf = ev;
  idf.identity = true;
  const auto base = evaluate(r.checkpoint, manifest, idf);
  CHECK(base.match_rate >= 0.0);
  CHECK(base.match_rate <= 1.0);

  // Map export writes one image per scored frame of each clip.
  EvalConfig em = ev;
  em.export_maps = true;
  const auto mo = temp_dir("eval_maps");
  evaluate(r.checkpoint, manifest, em, mo.string());
  bool any_pgm = false;
  for (const auto& e : fs::directory_iterator(mo))
    if (e.path().extension() == ".pgm") any_pgm = true;
  CHECK(any_pgm);
}

TEST_CASE("diagnose summarizes affinities and the position probe") {
  const auto manifest = tiny_manifest("diag", 3);
  TrainConfig config = tiny_config();
  config.steps = 1;
  const auto r = train(config, manifest);

  const auto dout = temp_dir("diag_out");
  const auto report = diagnose(r.checkpoint, manifest, dout.string());
  CHECK(report.adjacent_pairs > 0);
  CHECK(report.unrelated_pairs > 0);
  CHECK(report.probe_maps > 0);
  CHECK(std::isfinite(report.probe_r2_x));
  CHECK(fs::exists(dout / "diagnostics.csv"));

  const auto back = report_from_csv([&] {
    std::ifstream in(dout / "diagnostics.csv");
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
  }());
  CHECK(back.diag_adjacent == report.diag_adjacent);
  CHECK(back.probe_r2_y == report.probe_r2_y);
}

TEST_CASE("thread resolution honors determinism and batch bounds") {
  TrainConfig config;
  config.deterministic = true;
  config.threads = 8;
  CHECK(resolve_threads(config) == 1);

  config.deterministic = false;
  config.threads = 3;
  config.batch = 2;
  CHECK(resolve_threads(config) == 2);

  config.threads = 2;
  config.batch = 8;
  CHECK(resolve_threads(config) == 2);
}
