#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "contextvp/pmd.hpp"

namespace cvp {

enum class ModelKind { ContextVP, ConvLSTMBaseline };

std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& name);

struct LayerSpec {
  Index hidden = 8;  // N1: PMD hidden units
  Index blend = 8;   // N2: blending outputs (ignored by the baseline)

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Declarative architecture description.
///
/// Skip pairs are 1-based (source, destination) layer indices. The stage
/// after `destination` receives concat(sources..., destination) along
/// channels; after the last layer that stage is the output projection.
struct ModelSpec {
  ModelKind kind = ModelKind::ContextVP;
  Index channels = 1;
  std::vector<LayerSpec> layers;
  Index kernel = 3;
  BlendMode blend_mode = BlendMode::Weighted;
  bool dws = true;
  std::vector<std::pair<int, int>> skip_pairs;
  Activation blend_activation = Activation::Identity;
  bool blend_layer_norm = false;
  Activation output_activation = Activation::Sigmoid;
  /// Frames per input window the model is meant for (metadata).
  Index input_len = 10;

  void validate() const;

  /// Context layers with N1 = N2 = hidden[l] and the default skips.
  static ModelSpec contextvp(std::vector<Index> hidden, BlendMode mode = BlendMode::Weighted, bool dws = true);
  /// Stack of t- recurrent layers of equal width.
  static ModelSpec convlstm_baseline(std::size_t layers, Index width);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// (1,3),(2,4) when there are at least four layers, otherwise none.
std::vector<std::pair<int, int>> default_skip_pairs(std::size_t layers);

nlohmann::json to_json(const ModelSpec& spec);
/// Strict: unknown keys are rejected. Missing keys take defaults.
ModelSpec model_spec_from_json(const nlohmann::json& j);

/// One layer's parameters. The baseline uses only the t- unit and no blend.
struct ModelLayer {
  DirectionalUnits units;
  BlendBlock blend;
};

/// Instantiated parameters for a ModelSpec.
///
/// Names: `layer<l>.<group>.<W_i|...|b_c>`, `layer<l>.blend.<W|b>`,
/// `head.<W|b>`, where group is the direction (t-, h-, h+, w-, w+), or
/// h / w for a tied pair. Tied tensors appear once.
class Model {
 public:
  /// Zero-valued parameters with the right shapes and aliasing.
  explicit Model(ModelSpec spec);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  /// Deep copy with the same aliasing structure.
  Model clone() const;

  const ModelSpec& spec() const { return spec_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::shared_ptr<Tensor> parameter(const std::string& name) const;

  const std::vector<ModelLayer>& layers() const { return layers_; }
  std::vector<ModelLayer>& layers() { return layers_; }
  const std::shared_ptr<Tensor>& head_weight() const { return head_W_; }
  const std::shared_ptr<Tensor>& head_bias() const { return head_b_; }

  /// Channels entering layer l (0-based) and the output head.
  Index layer_input_channels(std::size_t l) const;
  Index head_input_channels() const;

 private:
  void add(const std::string& name, const std::shared_ptr<Tensor>& t);

  ModelSpec spec_;
  std::vector<ModelLayer> layers_;
  std::shared_ptr<Tensor> head_W_, head_b_;
  std::vector<NamedTensor> params_;
};

/// Xavier-initialized kernels (one splitmix64 stream in canonical parameter
/// order), zero biases.
Model build(const ModelSpec& spec, std::uint64_t seed);

/// Prediction [N, H, W, C] for frames [N, T, H, W, C], recorded on the frames' tape.
Var forward(const Model& model, Var frames);

/// Next frame for [T,H,W,C] -> [H,W,C] or [N,T,H,W,C] -> [N,H,W,C].
Tensor forward_predict(const Model& model, const Tensor& frames);

/// Feed each prediction back through a sliding window of fixed length.
std::vector<Tensor> predict_recursive(const Model& model, const Tensor& frames, int steps);

/// Distinct scalars; tied tensors counted once.
Index count_parameters(const Model& model);
Index count_parameters(const ModelSpec& spec);

/// Baseline spec whose parameter count is closest to `target`, searching
/// widths 1..max_width.
ModelSpec matched_convlstm_baseline(const ModelSpec& target, std::size_t layers = 20, Index max_width = 256);

std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace cvp
