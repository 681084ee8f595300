#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "contextvp/coverage.hpp"
#include "contextvp/data.hpp"
#include "contextvp/io.hpp"
#include "contextvp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cvp;

namespace {

json read_json_file(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// Applies `dotted.key=value` to `config`; the key must already exist.
void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  *node = value;
}

json effective(json base, const std::string& config_path, const std::vector<std::string>& overrides) {
  const json base_loss = base.contains("loss") ? base["loss"] : json();
  bool explicit_gdl = false;
  if (!config_path.empty()) {
    const json file = read_json_file(config_path);
    if (!file.is_object()) throw ConfigError(config_path + ": config must be a JSON object");
    for (const auto& [key, value] : file.items()) {
      if (!base.contains(key)) throw ConfigError(config_path + ": unknown config key '" + key + "'");
      if (value.is_object() && base[key].is_object()) {
        if (key == "model" && value.contains("layers") && !value.contains("skip_pairs")) base[key].erase("skip_pairs");
        for (const auto& [k2, v2] : value.items()) {
          if (!base[key].contains(k2) && !(key == "model" && k2 == "skip_pairs"))
            throw ConfigError(config_path + ": unknown config key '" + key + "." + k2 + "'");
          base[key][k2] = v2;
          explicit_gdl = explicit_gdl || (key == "loss" && k2 == "lambda_gdl");
        }
      } else {
        base[key] = value;
      }
    }
  }
  for (const auto& o : overrides) {
    if (o.rfind("model.layers=", 0) == 0 && base.contains("model")) {
      base["model"].erase("skip_pairs");
      base["model"]["layers"] = json::parse(o.substr(13));
      continue;
    }
    apply_override(base, o);
    explicit_gdl = explicit_gdl || o.rfind("loss.lambda_gdl=", 0) == 0;
  }
  // Changing p without an explicit GDL weight selects that p's default weight.
  if (base_loss.is_object() && !explicit_gdl && base["loss"]["p"] != base_loss["p"])
    base["loss"]["lambda_gdl"] = LossSpec::for_p(base["loss"]["p"].get<int>()).lambda_gdl;
  return base;
}

void echo_config(const char* what, const json& config) { std::cout << what << " config: " << config.dump() << "\n"; }

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string fmt_ssim(const std::optional<double>& v) { return v ? fmt("%.4f", *v) : std::string("   n/a"); }

// --------------------------------------------------------------------------- gen

int cmd_gen(const std::string& config_path, const std::vector<std::string>& overrides, const fs::path& out) {
  const json config = effective(to_json(ShapeSceneParams{}), config_path, overrides);
  const ShapeSceneParams params = scene_params_from_json(config);
  echo_config("gen", to_json(params));
  const Dataset ds = generate_bouncing_shapes(params);
  save_dataset(ds, out);
  const Shape s = ds.sequence_shape();
  std::cout << "wrote " << out.string() << " (" << ds.size() << " sequences of " << s.str() << ")\n";
  std::cout << "checksum: " << hex64(dataset_checksum(ds)) << "\n";
  return 0;
}

// --------------------------------------------------------------------------- train

int cmd_train(const std::string& preset, const std::string& config_path, const std::vector<std::string>& overrides,
              const fs::path& data, const fs::path& out, const std::string& log, const std::string& checkpoint) {
  const TrainConfig base = train_preset(preset);
  json config = effective(to_json(base), config_path, overrides);
  if (!log.empty()) config["log_path"] = log;
  if (!checkpoint.empty()) config["checkpoint_path"] = checkpoint;
  const TrainConfig cfg = train_config_from_json(config, base);
  echo_config("train", to_json(cfg));
  const Dataset ds = load_dataset(data);
  std::cout << "model parameters: " << count_parameters(cfg.model) << "\n";
  std::cout << "epoch  lr          train_loss    val_psnr  val_ssim\n";
  const TrainResult result = train(cfg, ds, [](const EpochRecord& r) {
    char line[128];
    std::snprintf(line, sizeof line, "%5d  %.4e  %12.6f  %8.3f  ", r.epoch, r.lr, r.train_loss, r.val_psnr);
    std::cout << line << fmt_ssim(r.val_ssim) << std::endl;
  });
  save_model(result.model, out);
  std::cout << "wrote " << out.string() << "\n";
  if (!cfg.log_path.empty()) std::cout << "history " << cfg.log_path.string() << "\n";
  return 0;
}

// --------------------------------------------------------------------------- predict

int cmd_predict(const fs::path& model_path, const fs::path& data, int steps, const fs::path& out_dir) {
  if (steps < 1) throw ConfigError("--steps must be >= 1");
  const Model model = load_model(model_path);
  const Dataset ds = load_dataset(data);
  const Index input_len = model.spec().input_len;
  const auto windows = multistep_windows(ds, input_len, steps);
  fs::create_directories(out_dir);
  const char* ext = ds.sequence_shape()[3] == 1 ? "pgm" : "ppm";
  std::size_t index = 0;
  for (const auto& w : windows) {
    const auto preds = predict_recursive(model, w.input, steps);
    for (int k = 0; k < steps; ++k, ++index) {
      char name[48];
      std::snprintf(name, sizeof name, "pred_%03zu.%s", index, ext);
      write_pnm(out_dir / name, preds[static_cast<std::size_t>(k)]);
      std::snprintf(name, sizeof name, "target_%03zu.%s", index, ext);
      write_pnm(out_dir / name, w.targets[static_cast<std::size_t>(k)]);
    }
  }
  std::cout << "wrote " << index << " predictions (" << windows.size() << " windows x " << steps << " steps) to "
            << out_dir.string() << "\n";
  return 0;
}

// --------------------------------------------------------------------------- eval

void print_report(const char* label, const MetricReport& r) {
  if (r.steps.size() > 1) {
    for (std::size_t k = 0; k < r.steps.size(); ++k) {
      const auto& s = r.steps[k];
      std::printf("%-16s step %2zu  %8.3f  %s  %.6f\n", label, k + 1, s.psnr, fmt_ssim(s.ssim).c_str(), s.mse);
    }
  }
  std::printf("%-16s mean     %8.3f  %s  %.6f\n", label, r.overall.psnr, fmt_ssim(r.overall.ssim).c_str(),
              r.overall.mse);
}

int cmd_eval(const fs::path& model_path, const fs::path& data, int recursive, bool motion_mask,
             const std::string& report_path) {
  const Model model = load_model(model_path);
  const Dataset ds = load_dataset(data);
  EvalOptions opt;
  opt.input_len = model.spec().input_len;
  opt.recursive_p = recursive;
  opt.motion_mask = motion_mask;
  echo_config("eval", {{"model", model_path.string()},
                       {"data", data.string()},
                       {"input_len", opt.input_len},
                       {"recursive", recursive},
                       {"motion_mask", motion_mask}});
  const MetricReport ours = evaluate(model, ds, opt);
  const MetricReport copy = evaluate(copy_last_frame_predictor(), ds, opt);
  if (motion_mask) std::cout << "motion-masked evaluation (|x_T - x_T-1| > 0.05)\n";
  std::printf("%-16s %-7s  %8s  %6s  %s\n", "method", "row", "psnr", "ssim", "mse");
  print_report("contextvp", ours);
  print_report("copy-last-frame", copy);
  const json report = {{"model", to_json(ours)}, {"copy_last_frame", to_json(copy)}};
  if (!report_path.empty()) {
    write_file_atomic(report_path, report.dump(2) + "\n");
    std::cout << "report " << report_path << "\n";
  }
  return 0;
}

// --------------------------------------------------------------------------- analyze

ModelSpec arch_from_arg(const std::string& arg) {
  static const std::regex builtin(R"((convlstm|contextvp)(?::(\d+))?)");
  std::smatch m;
  if (!fs::exists(arg) && std::regex_match(arg, m, builtin)) {
    const std::size_t layers = m[2].matched ? std::stoul(m[2].str()) : 1;
    if (m[1] == "convlstm") return ModelSpec::convlstm_baseline(layers, 4);
    return ModelSpec::contextvp(std::vector<Index>(layers, 4));
  }
  return model_spec_from_json(read_json_file(arg));
}

int cmd_analyze(const std::string& arch, const std::string& size, const std::string& target_arg,
                const std::string& out_dir, bool empirical, int seeds, double threshold) {
  std::smatch m;
  static const std::regex size_re(R"((\d+)x(\d+)x(\d+))");
  static const std::regex target_re(R"((\d+),(\d+))");
  if (!std::regex_match(size, m, size_re)) throw ConfigError("--size must be HxWxT, got '" + size + "'");
  const Index h = std::stol(m[1]), w = std::stol(m[2]), t = std::stol(m[3]);
  Pixel target{h / 2, w / 2};
  if (!target_arg.empty()) {
    if (!std::regex_match(target_arg, m, target_re)) throw ConfigError("--target must be i,j");
    target = {std::stol(m[1]), std::stol(m[2])};
  }
  if (target.i >= h || target.j >= w)
    throw ConfigError("target (" + std::to_string(target.i) + "," + std::to_string(target.j) + ") outside " +
                      std::to_string(h) + "x" + std::to_string(w) + " frame");
  const ModelSpec spec = arch_from_arg(arch);
  echo_config("analyze", {{"arch", to_json(spec)}, {"size", size}, {"target", {target.i, target.j}}});
  const BlindSpotReport report = blind_spot_report(spec, target, t, h, w);
  std::cout << report.to_text();
  json j = report.to_json();
  if (empirical) {
    std::vector<std::uint64_t> seed_list;
    for (int s = 1; s <= seeds; ++s) seed_list.push_back(static_cast<std::uint64_t>(s));
    const SupportMask emp = empirical_support(spec, target, t, h, w, seed_list, threshold);
    const auto outside = emp.difference(report.mask);
    const auto missing = report.mask.difference(emp);
    std::cout << "empirical support (" << seeds << " seeds, threshold " << threshold << "): " << emp.count() << " of "
              << report.mask.count() << " exact positions\n";
    std::cout << "outside exact mask: " << outside.size() << "\n";
    if (outside.empty() && missing.empty())
      std::cout << "support mismatch: none\n";
    else
      std::cout << "support mismatch: " << outside.size() << " extra, " << missing.size() << " missing\n";
    j["empirical"] = {{"seeds", seeds},
                      {"threshold", threshold},
                      {"covered", emp.count()},
                      {"outside_exact", outside.size()},
                      {"missing", missing.size()}};
  }
  if (!out_dir.empty()) {
    const auto paths = report.write_heatmaps(out_dir);
    write_file_atomic(fs::path(out_dir) / "coverage.json", j.dump(2) + "\n");
    std::cout << "wrote " << paths.size() << " heatmaps and coverage.json to " << out_dir << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ContextVP video prediction: data generation, training, evaluation and coverage analysis"};
  app.require_subcommand(1);

  std::string config_path, preset = "desk", log, checkpoint, report_path, arch, size, target, out_dir;
  std::vector<std::string> overrides;
  fs::path out, data, model_path;
  int steps = 1, recursive = 1, seeds = 3;
  bool motion = false, empirical = false;
  double threshold = 1e-12;

  auto* gen = app.add_subcommand("gen", "Generate a bouncing-shapes dataset");
  gen->add_option("--config", config_path, "JSON scene config")->check(CLI::ExistingFile);
  gen->add_option("--set", overrides, "Override a config key: dotted.key=value (repeatable)");
  gen->add_option("--out", out, "Output dataset file")->required();

  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  tr->add_option("--preset", preset, "Base config preset")
      ->check(CLI::IsMember(train_preset_names()))
      ->capture_default_str();
  tr->add_option("--config", config_path, "JSON train config applied over the preset")->check(CLI::ExistingFile);
  tr->add_option("--set", overrides, "Override a config key: dotted.key=value (repeatable)");
  tr->add_option("--data", data, "Dataset file")->required();
  tr->add_option("--out", out, "Output model file")->required();
  tr->add_option("--log", log, "JSONL history file");
  tr->add_option("--checkpoint", checkpoint, "Checkpoint file");

  auto* pr = app.add_subcommand("predict", "Write predicted and target frames as images");
  pr->add_option("--model", model_path, "Model file")->required();
  pr->add_option("--data", data, "Dataset file")->required();
  pr->add_option("--steps", steps, "Recursive prediction steps")->capture_default_str();
  pr->add_option("--out-dir", out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a model against copy-last-frame");
  ev->add_option("--model", model_path, "Model file")->required();
  ev->add_option("--data", data, "Dataset file")->required();
  ev->add_option("--recursive", recursive, "Recursive prediction steps")->capture_default_str();
  ev->add_flag("--motion-mask", motion, "Restrict PSNR/MSE to moving pixels");
  ev->add_option("--report", report_path, "JSON report path");

  auto* an = app.add_subcommand("analyze", "Exact blind-spot coverage of an architecture");
  an->add_option("--arch", arch, "Model spec JSON file, or convlstm[:L] / contextvp[:L]")->required();
  an->add_option("--size", size, "Frame size and length HxWxT")->required();
  an->add_option("--target", target, "Output pixel i,j (default: center)");
  an->add_option("--out-dir", out_dir, "Directory for heatmaps and coverage.json");
  an->add_flag("--empirical", empirical, "Compare with gradient support of random models");
  an->add_option("--seeds", seeds, "Seeds for --empirical")->capture_default_str();
  an->add_option("--threshold", threshold, "Gradient magnitude threshold")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen(config_path, overrides, out);
    if (tr->parsed()) return cmd_train(preset, config_path, overrides, data, out, log, checkpoint);
    if (pr->parsed()) return cmd_predict(model_path, data, steps, out);
    if (ev->parsed()) return cmd_eval(model_path, data, recursive, motion, report_path);
    if (an->parsed()) return cmd_analyze(arch, size, target, out_dir, empirical, seeds, threshold);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
