#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contextvp/data.hpp"
#include "contextvp/loss.hpp"
#include "contextvp/metrics.hpp"
#include "contextvp/model.hpp"

namespace cvp {

struct TrainConfig {
  ModelSpec model = ModelSpec::contextvp({8, 8});
  LossSpec loss;
  int epochs = 30;
  Index batch_size = 8;
  Index input_len = 4;
  std::uint64_t seed = 1;
  /// Save a checkpoint every n epochs (0 = never).
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
  /// JSONL history destination (empty = none).
  std::filesystem::path log_path;
  double lr = 1e-3;
  double lr_decay = 0.99;
  int lr_decay_every = 5;
  /// Windows per independent tape; fixes the gradient summation order.
  Index micro_batch = 4;
  double val_fraction = 0.1;

  void validate() const;
};

/// Named desk-scale presets: desk, ablation-u, ablation-w, dws-on, dws-off,
/// convlstm.
TrainConfig train_preset(const std::string& name);
std::vector<std::string> train_preset_names();

nlohmann::json to_json(const TrainConfig& c);
/// Strict: unknown keys are rejected; missing keys keep `base` values.
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean per window
  double val_psnr = 0.0;
  std::optional<double> val_ssim;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded, thread-count-invariant training. Throws NumericError on a
/// non-finite loss or gradient after saving the last good parameters to
/// `checkpoint_path` (when set).
TrainResult train(const TrainConfig& config, const Dataset& dataset, const EpochCallback& on_epoch = {});

/// Maps a batch of inputs [N, T, H, W, C] to predictions [N, H, W, C].
using BatchPredictor = std::function<Tensor(const Tensor&)>;

struct EvalOptions {
  Index input_len = 4;
  /// Recursive steps per window; 1 = next-frame prediction.
  int recursive_p = 1;
  /// PSNR/MSE restricted to |x_T - x_{T-1}| > 0.05 (non-default protocol).
  bool motion_mask = false;
  Index batch = 16;
};

MetricReport evaluate(const BatchPredictor& predictor, const Dataset& dataset, const EvalOptions& options);
MetricReport evaluate(const Model& model, const Dataset& dataset, const EvalOptions& options);

/// The last input frame, unchanged: [T,H,W,C] -> [H,W,C] or batched.
Tensor copy_last_frame_baseline(const Tensor& frames);
BatchPredictor copy_last_frame_predictor();
BatchPredictor model_predictor(const Model& model);

nlohmann::json to_json(const MetricReport& r);

}  // namespace cvp
