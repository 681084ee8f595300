#include "contextvp/trainer.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "contextvp/io.hpp"
#include "contextvp/optim.hpp"
#include "contextvp/parallel.hpp"
#include "contextvp/random.hpp"

namespace cvp {

using nlohmann::json;

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (micro_batch < 1) throw ConfigError("micro_batch must be >= 1");
  if (input_len < 1) throw ConfigError("input_len must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ConfigError("lr_decay must be in (0, 1]");
  if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in [0, 1)");
}

std::vector<std::string> train_preset_names() {
  return {"desk", "ablation-u", "ablation-w", "dws-on", "dws-off", "convlstm"};
}

TrainConfig train_preset(const std::string& name) {
  TrainConfig c;
  c.model = ModelSpec::contextvp({8, 8}, BlendMode::Weighted, true);
  c.model.input_len = 4;
  c.input_len = 4;
  c.loss = LossSpec::for_p(2);
  if (name == "desk" || name == "ablation-w" || name == "dws-on") return c;
  if (name == "ablation-u") {
    c.model.blend_mode = BlendMode::Uniform;
    return c;
  }
  if (name == "dws-off") {
    c.model.dws = false;
    return c;
  }
  if (name == "convlstm") {
    c.model = matched_convlstm_baseline(c.model, 2, 64);
    return c;
  }
  std::string known;
  for (const auto& n : train_preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

json to_json(const TrainConfig& c) {
  return {{"model", to_json(c.model)},
          {"loss",
           {{"p", c.loss.p},
            {"lambda_p", c.loss.lambda_p},
            {"lambda_gdl", c.loss.lambda_gdl},
            {"per_pixel_mean", c.loss.per_pixel_mean},
            {"gdl_outer_abs", c.loss.gdl_outer_abs}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"input_len", c.input_len},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"checkpoint_path", c.checkpoint_path.string()},
          {"log_path", c.log_path.string()},
          {"lr", c.lr},
          {"lr_decay", c.lr_decay},
          {"lr_decay_every", c.lr_decay_every},
          {"micro_batch", c.micro_batch},
          {"val_fraction", c.val_fraction}};
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  const json defaults = to_json(base);
  for (const auto& [key, value] : j.items())
    if (!defaults.contains(key)) throw ConfigError("unknown train config key '" + key + "'");
  try {
    TrainConfig c = base;
    if (j.contains("model")) {
      const json& patch = j.at("model");
      if (!patch.is_object()) throw ConfigError("model must be a JSON object");
      json merged = defaults.at("model");
      // A new layer list without explicit skips takes the default wiring.
      if (patch.contains("layers") && !patch.contains("skip_pairs")) merged.erase("skip_pairs");
      for (const auto& [key, value] : patch.items()) merged[key] = value;
      c.model = model_spec_from_json(merged);
    }
    if (j.contains("loss")) {
      const json& patch = j.at("loss");
      if (!patch.is_object()) throw ConfigError("loss must be a JSON object");
      for (const auto& [key, value] : patch.items())
        if (!defaults.at("loss").contains(key)) throw ConfigError("unknown loss key '" + key + "'");
      if (patch.contains("p")) {
        const int p = patch.at("p").get<int>();
        if (p != c.loss.p && !patch.contains("lambda_gdl")) c.loss.lambda_gdl = LossSpec::for_p(p).lambda_gdl;
        c.loss.p = p;
      }
      c.loss.lambda_p = patch.value("lambda_p", c.loss.lambda_p);
      c.loss.lambda_gdl = patch.value("lambda_gdl", c.loss.lambda_gdl);
      c.loss.per_pixel_mean = patch.value("per_pixel_mean", c.loss.per_pixel_mean);
      c.loss.gdl_outer_abs = patch.value("gdl_outer_abs", c.loss.gdl_outer_abs);
    }
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.input_len = j.value("input_len", c.input_len);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.checkpoint_path = j.value("checkpoint_path", c.checkpoint_path.string());
    c.log_path = j.value("log_path", c.log_path.string());
    c.lr = j.value("lr", c.lr);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
    c.micro_batch = j.value("micro_batch", c.micro_batch);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
}

json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"lr", r.lr},
          {"train_loss", r.train_loss},
          {"val_psnr", r.val_psnr},
          {"val_ssim", r.val_ssim ? json(*r.val_ssim) : json(nullptr)}};
}

// ---------------------------------------------------------------------------

namespace {

template <typename Item, typename Get>
Tensor batch_of(const std::vector<Item>& items, std::span<const std::size_t> idx, Get get) {
  std::vector<Tensor> parts;
  parts.reserve(idx.size());
  for (std::size_t k : idx) parts.push_back(get(items[k]));
  return stack(std::span<const Tensor>(parts), 0);
}

struct MicroResult {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

MicroResult micro_step(const Model& model, const LossSpec& loss, const std::vector<Window>& windows,
                       std::span<const std::size_t> idx) {
  Tape tape;
  Var x = tape.constant(batch_of(windows, idx, [](const Window& w) { return w.input; }));
  Var y = tape.constant(batch_of(windows, idx, [](const Window& w) { return w.target; }));
  Var l = combined_loss(y, forward(model, x), loss);
  tape.backward(l);
  MicroResult r;
  r.loss = l.value().item();
  for (const auto& p : model.parameters()) r.grads.push_back(tape.grad(p.tensor));
  return r;
}

void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  if (path.empty()) return;
  std::string text;
  for (const auto& r : history) text += to_json(r).dump() + "\n";
  write_file_atomic(path, text);
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& dataset, const EpochCallback& on_epoch) {
  config.validate();
  dataset.validate();
  if (dataset.sequences.empty()) throw ConfigError("cannot train on an empty dataset");
  if (dataset.sequence_shape()[3] != config.model.channels)
    throw ShapeError("dataset has " + std::to_string(dataset.sequence_shape()[3]) + " channels, model expects " +
                     std::to_string(config.model.channels));

  auto [train_set, val_set] = split_validation(dataset, config.val_fraction);
  if (train_set.sequences.empty()) throw ConfigError("validation split leaves no training sequences");
  if (val_set.sequences.empty()) val_set = train_set;
  const std::vector<Window> windows = window(train_set, config.input_len);
  if (windows.empty()) throw ConfigError("no training windows for input_len " + std::to_string(config.input_len));

  TrainResult result{build(config.model, config.seed), {}};
  Model& model = result.model;
  const auto& params = model.parameters();
  AdamState adam = make_adam(params, config.lr);
  adam.decay = config.lr_decay;
  adam.decay_every = config.lr_decay_every;

  SplitMix64 order_rng(config.seed ^ 0xD1B54A32D192ED03ULL);
  std::vector<std::size_t> order(windows.size());
  const std::size_t workers = worker_count();
  EvalOptions val_options;
  val_options.input_len = config.input_len;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    adam.epoch = epoch;
    adam.lr = lr_schedule(adam, epoch);
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    shuffle(order, order_rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto mb = static_cast<std::size_t>(config.micro_batch);
      const std::size_t n_micro = (end - start + mb - 1) / mb;
      std::vector<MicroResult> parts(n_micro);
      parallel_for(n_micro, workers, [&](std::size_t m) {
        const std::size_t a = start + m * mb;
        const std::size_t b = std::min(end, a + mb);
        parts[m] = micro_step(model, config.loss, windows, std::span<const std::size_t>(order.data() + a, b - a));
      });

      double batch_loss = 0.0;
      std::vector<Tensor> grads = std::move(parts[0].grads);
      batch_loss += parts[0].loss;
      for (std::size_t m = 1; m < n_micro; ++m) {
        batch_loss += parts[m].loss;
        for (std::size_t k = 0; k < grads.size(); ++k) grads[k].array() += parts[m].grads[k].array();
      }
      if (!std::isfinite(batch_loss)) {
        std::string where;
        if (!config.checkpoint_path.empty()) {
          save_model(model, config.checkpoint_path);
          where = "; last good parameters saved to " + config.checkpoint_path.string();
        }
        throw NumericError("non-finite training loss in epoch " + std::to_string(epoch + 1) + where);
      }
      try {
        adam_step(adam, params, grads);
      } catch (const NumericError&) {
        if (!config.checkpoint_path.empty()) save_model(model, config.checkpoint_path);
        throw;
      }
      epoch_loss += batch_loss;
    }

    EpochRecord record;
    record.epoch = epoch + 1;
    record.lr = adam.lr;
    record.train_loss = epoch_loss / static_cast<double>(windows.size());
    const MetricReport val = evaluate(model, val_set, val_options);
    record.val_psnr = val.overall.psnr;
    record.val_ssim = val.overall.ssim;
    result.history.push_back(record);
    write_history(config.log_path, result.history);
    if (on_epoch) on_epoch(record);
    if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() && (epoch + 1) % config.checkpoint_every == 0)
      save_model(model, config.checkpoint_path);
  }
  return result;
}

// ---------------------------------------------------------------------------

Tensor copy_last_frame_baseline(const Tensor& frames) {
  if (frames.rank() != 4 && frames.rank() != 5) throw ShapeError("copy_last_frame expects [T,H,W,C] or [N,T,H,W,C]");
  const int axis = frames.rank() - 4;
  if (frames.dim(axis) < 1) throw ShapeError("copy_last_frame needs T >= 1");
  return take(frames, axis, frames.dim(axis) - 1);
}

BatchPredictor copy_last_frame_predictor() { return [](const Tensor& x) { return copy_last_frame_baseline(x); }; }

BatchPredictor model_predictor(const Model& model) {
  return [&model](const Tensor& x) { return forward_predict(model, x); };
}

namespace {

struct WindowScores {
  std::vector<double> mse, psnr, ssim;  // one entry per step
  bool skipped = false;
};

MetricRow mean_row(const std::vector<WindowScores>& scores, std::optional<std::size_t> step, bool with_ssim) {
  MetricRow row;
  double sum_mse = 0.0, sum_psnr = 0.0, sum_ssim = 0.0;
  for (const auto& s : scores) {
    if (s.skipped) continue;
    const std::size_t lo = step ? *step : 0, hi = step ? *step + 1 : s.mse.size();
    for (std::size_t k = lo; k < hi; ++k) {
      sum_mse += s.mse[k];
      sum_psnr += s.psnr[k];
      if (with_ssim) sum_ssim += s.ssim[k];
      ++row.count;
    }
  }
  if (row.count == 0) return row;
  const auto n = static_cast<double>(row.count);
  row.mse = sum_mse / n;
  row.psnr = sum_psnr / n;
  if (with_ssim) row.ssim = sum_ssim / n;
  return row;
}

}  // namespace

MetricReport evaluate(const BatchPredictor& predictor, const Dataset& dataset, const EvalOptions& options) {
  if (options.recursive_p < 1) throw ConfigError("recursive_p must be >= 1");
  if (options.motion_mask && options.input_len < 2) throw ConfigError("motion mask needs input_len >= 2");
  MetricReport report;
  report.motion_masked = options.motion_mask;
  if (dataset.sequences.empty()) return report;
  const auto windows = multistep_windows(dataset, options.input_len, options.recursive_p);
  const Shape frame = dataset.sequence_shape().without(0);
  const bool with_ssim = frame[0] >= kSsimWindow && frame[1] >= kSsimWindow;

  const auto batch = static_cast<std::size_t>(std::max<Index>(1, options.batch));
  const std::size_t n_batches = (windows.size() + batch - 1) / batch;
  std::vector<WindowScores> scores(windows.size());
  parallel_for(n_batches, worker_count(), [&](std::size_t b) {
    const std::size_t lo = b * batch, hi = std::min(windows.size(), lo + batch);
    std::vector<Tensor> inputs;
    for (std::size_t k = lo; k < hi; ++k) inputs.push_back(windows[k].input);
    Tensor x = stack(std::span<const Tensor>(inputs), 0);
    const Index t = x.dim(1);
    for (int step = 0; step < options.recursive_p; ++step) {
      const Tensor pred = predictor(x);
      for (std::size_t k = lo; k < hi; ++k) {
        const Tensor p = take(pred, 0, static_cast<Index>(k - lo));
        const Tensor& y = windows[k].targets[static_cast<std::size_t>(step)];
        WindowScores& s = scores[k];
        double m;
        if (options.motion_mask) {
          const Tensor& in = windows[k].input;
          const auto masked = masked_mse(y, p, motion_mask(take(in, 0, in.dim(0) - 1), take(in, 0, in.dim(0) - 2)));
          if (!masked) {
            s.skipped = true;
            continue;
          }
          m = *masked;
        } else {
          m = mse(y, p);
        }
        s.mse.push_back(m);
        s.psnr.push_back(psnr_from_mse(m));
        if (with_ssim) s.ssim.push_back(ssim(y, p));
      }
      if (step + 1 == options.recursive_p) break;
      const Tensor parts[] = {slice(x, 1, 1, t), pred.reshaped(pred.shape().with_inserted(1, 1))};
      x = concat(std::span<const Tensor>(parts), 1);
    }
  });

  report.overall = mean_row(scores, std::nullopt, with_ssim);
  for (int step = 0; step < options.recursive_p; ++step)
    report.steps.push_back(mean_row(scores, static_cast<std::size_t>(step), with_ssim));
  return report;
}

MetricReport evaluate(const Model& model, const Dataset& dataset, const EvalOptions& options) {
  return evaluate(model_predictor(model), dataset, options);
}

json to_json(const MetricReport& r) {
  auto row = [](const MetricRow& m) {
    return json{{"psnr", m.psnr}, {"ssim", m.ssim ? json(*m.ssim) : json(nullptr)}, {"mse", m.mse}, {"count", m.count}};
  };
  json steps = json::array();
  for (std::size_t k = 0; k < r.steps.size(); ++k) {
    json s = row(r.steps[k]);
    s["step"] = k + 1;
    steps.push_back(s);
  }
  return {{"overall", row(r.overall)}, {"steps", steps}, {"motion_masked", r.motion_masked}};
}

}  // namespace cvp
