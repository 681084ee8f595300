#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "contextvp/trainer.hpp"
#include "oracles.hpp"

using namespace cvp;

namespace {

Dataset scenes(Index n, Index t, Index size, std::uint64_t seed, double speed = 1.0) {
  ShapeSceneParams p;
  p.n_sequences = n;
  p.frames = t;
  p.height = p.width = size;
  p.size_min = 2;
  p.size_max = 3;
  p.speed_min = p.speed_max = speed;
  p.seed = seed;
  return generate_bouncing_shapes(p);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.model = ModelSpec::contextvp({3});
  c.model.input_len = 3;
  c.input_len = 3;
  c.loss = LossSpec::for_p(2);
  c.epochs = 2;
  c.batch_size = 4;
  c.micro_batch = 2;
  c.val_fraction = 0.25;
  return c;
}

struct ThreadsEnv {
  explicit ThreadsEnv(const char* value) { setenv("CONTEXTVP_THREADS", value, 1); }
  ~ThreadsEnv() { unsetenv("CONTEXTVP_THREADS"); }
};

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("contextvp_test_trainer_" + name);
}

}  // namespace

TEST_CASE("config validation and presets") {
  TrainConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.lr = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.lr_decay = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.val_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(train_preset("nope"), ConfigError);

  const TrainConfig desk = train_preset("desk");
  CHECK(desk.model.layers.size() == 2);
  CHECK(desk.model.layers[0].hidden == 8);
  CHECK(desk.model.blend_mode == BlendMode::Weighted);
  CHECK(desk.model.dws);
  CHECK(desk.lr == 1e-3);
  TrainConfig u = train_preset("ablation-u");
  CHECK(u.model.blend_mode == BlendMode::Uniform);
  u.model.blend_mode = BlendMode::Weighted;
  CHECK(to_json(u) == to_json(train_preset("ablation-w")));
  TrainConfig off = train_preset("dws-off");
  CHECK_FALSE(off.model.dws);
  off.model.dws = true;
  CHECK(to_json(off) == to_json(train_preset("dws-on")));
  CHECK(train_preset("convlstm").model.kind == ModelKind::ConvLSTMBaseline);
}

TEST_CASE("config JSON is strict and follows the loss rule") {
  const TrainConfig base = tiny_config();
  CHECK(to_json(train_config_from_json(to_json(base), base)) == to_json(base));
  CHECK_THROWS_AS(train_config_from_json({{"epoch", 3}}, base), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"loss", {{"q", 1}}}}, base), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"model", {{"depth", 1}}}}, base), ConfigError);
  CHECK(train_config_from_json({{"loss", {{"p", 1}}}}, base).loss.lambda_gdl == 1.0);
  CHECK(train_config_from_json({{"loss", {{"p", 1}, {"lambda_gdl", 0.5}}}}, base).loss.lambda_gdl == 0.5);
  const TrainConfig four = train_config_from_json({{"model", {{"layers", {2, 2, 2, 2}}}}}, base);
  CHECK(four.model.skip_pairs == default_skip_pairs(4));
  CHECK(train_config_from_json({{"epochs", 7}}, base).epochs == 7);
}

TEST_CASE("lr = 0 leaves the initial parameters untouched") {
  TrainConfig c = tiny_config();
  c.lr = 0.0;
  const Dataset ds = scenes(4, 5, 8, 1);
  const TrainResult r = train(c, ds);
  CHECK(serialize_model(r.model) == serialize_model(build(c.model, c.seed)));
  REQUIRE(r.history.size() == 2);
  CHECK(r.history[0].train_loss == doctest::Approx(r.history[1].train_loss).epsilon(1e-12));
}

TEST_CASE("training is deterministic across runs and thread counts") {
  const Dataset ds = scenes(6, 5, 8, 2);
  TrainConfig c = tiny_config();
  std::vector<std::uint8_t> bytes[3];
  std::vector<double> losses[3];
  const char* threads[] = {"1", "1", "4"};
  for (int k = 0; k < 3; ++k) {
    ThreadsEnv env(threads[k]);
    const TrainResult r = train(c, ds);
    bytes[k] = serialize_model(r.model);
    for (const auto& e : r.history) losses[k].push_back(e.train_loss);
  }
  CHECK(bytes[0] == bytes[1]);
  CHECK(bytes[0] == bytes[2]);
  CHECK(losses[0] == losses[2]);
  c.seed = 2;
  CHECK(serialize_model(train(c, ds).model) != bytes[0]);
}

TEST_CASE("overfitting a single sequence") {
  const Dataset ds = scenes(1, 6, 8, 3);
  TrainConfig c = tiny_config();
  c.model = ModelSpec::contextvp({4});
  c.epochs = 150;
  c.lr = 1e-2;
  c.val_fraction = 0.0;
  std::vector<double> losses;
  train(c, ds, [&](const EpochRecord& e) { losses.push_back(e.train_loss); });
  REQUIRE(losses.size() == 150);
  CHECK(losses.back() * 10.0 <= losses.front());
  // Median over sliding windows of 10 epochs trends down.
  auto median = [&](std::size_t start) {
    std::vector<double> w(losses.begin() + static_cast<std::ptrdiff_t>(start),
                          losses.begin() + static_cast<std::ptrdiff_t>(start + 10));
    std::nth_element(w.begin(), w.begin() + 5, w.end());
    return w[5];
  };
  for (std::size_t s = 0; s + 20 <= losses.size(); s += 10) CHECK(median(s + 10) <= median(s));
}

TEST_CASE("history log and checkpoints") {
  TrainConfig c = tiny_config();
  c.log_path = temp_path("history.jsonl");
  c.checkpoint_path = temp_path("ckpt.cvpm");
  c.checkpoint_every = 1;
  const TrainResult r = train(c, scenes(4, 5, 8, 4));
  std::ifstream in(c.log_path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch").get<int>() == lines + 1);
    for (const char* key : {"lr", "train_loss", "val_psnr", "val_ssim"}) CHECK(j.contains(key));
    CHECK(j.at("val_ssim").is_null());  // 8x8 frames are below the SSIM window
    ++lines;
  }
  CHECK(lines == 2);
  CHECK(serialize_model(load_model(c.checkpoint_path)) == serialize_model(r.model));
  std::filesystem::remove(c.log_path);
  std::filesystem::remove(c.checkpoint_path);
}

TEST_CASE("non-finite loss aborts and keeps the last good parameters") {
  TrainConfig c = tiny_config();
  c.loss.lambda_p = 1e308;
  c.checkpoint_path = temp_path("nan.cvpm");
  std::filesystem::remove(c.checkpoint_path);
  CHECK_THROWS_AS(train(c, scenes(4, 5, 8, 5)), NumericError);
  REQUIRE(std::filesystem::exists(c.checkpoint_path));
  CHECK(serialize_model(load_model(c.checkpoint_path)) == serialize_model(build(c.model, c.seed)));
  std::filesystem::remove(c.checkpoint_path);
}

TEST_CASE("training rejects unusable datasets") {
  TrainConfig c = tiny_config();
  CHECK_THROWS_AS(train(c, Dataset{}), ConfigError);
  c.input_len = 5;
  CHECK_THROWS_AS(train(c, scenes(4, 5, 8, 6)), ConfigError);
  ShapeSceneParams rgb;
  rgb.channels = 3;
  rgb.n_sequences = 2;
  rgb.frames = 5;
  CHECK_THROWS_AS(train(tiny_config(), generate_bouncing_shapes(rgb)), ShapeError);
}

TEST_CASE("copy-last-frame baseline") {
  const Tensor frames = oracle::random_tensor(Shape{3, 4, 4, 1}, 7, 0, 1);
  CHECK(copy_last_frame_baseline(frames) == take(frames, 0, 2));
  const Dataset still = scenes(3, 6, 12, 8, 0.0);
  EvalOptions opt;
  opt.input_len = 3;
  const MetricReport r = evaluate(copy_last_frame_predictor(), still, opt);
  CHECK(r.overall.psnr == kPsnrCap);
  CHECK(r.overall.mse == 0.0);
  REQUIRE(r.overall.ssim.has_value());
  CHECK(*r.overall.ssim == doctest::Approx(1.0));
  CHECK(r.overall.count == 3 * 3);
  const MetricReport moving = evaluate(copy_last_frame_predictor(), scenes(3, 6, 12, 8), opt);
  CHECK(moving.overall.psnr < kPsnrCap);
}

TEST_CASE("evaluation matches per-window recomputation") {
  const Dataset ds = scenes(3, 7, 8, 9);
  const Model m = build(ModelSpec::contextvp({2}), 10);
  EvalOptions opt;
  opt.input_len = 3;
  opt.batch = 2;
  const MetricReport r = evaluate(m, ds, opt);
  double total = 0.0, total_mse = 0.0;
  Index n = 0;
  for (const auto& w : window(ds, 3)) {
    const Tensor y = forward_predict(m, w.input);
    total += psnr(w.target, y);
    total_mse += mse(w.target, y);
    ++n;
  }
  CHECK(r.overall.count == n);
  CHECK(r.overall.psnr == doctest::Approx(total / static_cast<double>(n)).epsilon(1e-12));
  CHECK(r.overall.mse == doctest::Approx(total_mse / static_cast<double>(n)).epsilon(1e-12));
  CHECK_FALSE(r.overall.ssim.has_value());
  REQUIRE(r.steps.size() == 1);
}

TEST_CASE("recursive evaluation reports every step") {
  const Dataset ds = scenes(2, 12, 8, 11);
  const Model m = build(ModelSpec::contextvp({2}), 12);
  EvalOptions opt;
  opt.input_len = 3;
  opt.recursive_p = 8;
  const MetricReport r = evaluate(m, ds, opt);
  REQUIRE(r.steps.size() == 8);
  for (const auto& s : r.steps) {
    CHECK(std::isfinite(s.psnr));
    CHECK(s.count == 2 * 2);
  }
  // Step 1 of the recursive protocol equals the next-frame prediction on the same windows.
  const auto ms = multistep_windows(ds, 3, 8);
  double first = 0.0;
  for (const auto& w : ms) first += psnr(w.targets[0], forward_predict(m, w.input));
  CHECK(r.steps[0].psnr == doctest::Approx(first / static_cast<double>(ms.size())).epsilon(1e-12));
  const auto j = to_json(r);
  CHECK(j.at("steps").size() == 8);
  CHECK(j.at("steps")[7].at("step").get<int>() == 8);
}

TEST_CASE("motion-masked evaluation") {
  const Dataset ds = scenes(2, 6, 8, 13);
  EvalOptions opt;
  opt.input_len = 3;
  opt.motion_mask = true;
  const MetricReport r = evaluate(copy_last_frame_predictor(), ds, opt);
  CHECK(r.motion_masked);
  double total = 0.0;
  Index n = 0;
  for (const auto& w : window(ds, 3)) {
    const Tensor last = take(w.input, 0, 2), prev = take(w.input, 0, 1);
    const auto m = masked_mse(w.target, last, motion_mask(last, prev));
    if (!m) continue;
    total += psnr_from_mse(*m);
    ++n;
  }
  REQUIRE(n > 0);
  CHECK(r.overall.count == n);
  CHECK(r.overall.psnr == doctest::Approx(total / static_cast<double>(n)).epsilon(1e-12));
}
