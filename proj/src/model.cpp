#include "contextvp/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "contextvp/optim.hpp"

namespace cvp {

std::string to_string(ModelKind k) { return k == ModelKind::ContextVP ? "contextvp" : "convlstm_baseline"; }

ModelKind parse_model_kind(const std::string& name) {
  if (name == "contextvp") return ModelKind::ContextVP;
  if (name == "convlstm_baseline") return ModelKind::ConvLSTMBaseline;
  throw ConfigError("unknown model kind '" + name + "'");
}

std::vector<std::pair<int, int>> default_skip_pairs(std::size_t layers) {
  if (layers >= 4) return {{1, 3}, {2, 4}};
  return {};
}

void ModelSpec::validate() const {
  if (layers.empty()) throw ConfigError("model needs at least one layer");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel size must be odd and positive, got " + std::to_string(kernel));
  if (channels < 1) throw ConfigError("channels must be positive");
  if (input_len < 1) throw ConfigError("input_len must be positive");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].hidden < 1) throw ConfigError("layer " + std::to_string(l + 1) + ": hidden units must be positive");
    if (kind == ModelKind::ContextVP && layers[l].blend < 1)
      throw ConfigError("layer " + std::to_string(l + 1) + ": blend units must be positive");
  }
  const int n = static_cast<int>(layers.size());
  std::set<std::pair<int, int>> seen;
  for (auto [src, dst] : skip_pairs) {
    if (src < 1 || dst > n || src >= dst)
      throw ConfigError("invalid skip pair (" + std::to_string(src) + "," + std::to_string(dst) + ") for " +
                        std::to_string(n) + " layers");
    if (!seen.insert({src, dst}).second)
      throw ConfigError("duplicate skip pair (" + std::to_string(src) + "," + std::to_string(dst) + ")");
  }
  if (output_activation != Activation::Sigmoid) throw ConfigError("output activation must be sigmoid");
}

ModelSpec ModelSpec::contextvp(std::vector<Index> hidden, BlendMode mode, bool dws) {
  ModelSpec s;
  s.kind = ModelKind::ContextVP;
  for (Index h : hidden) s.layers.push_back({h, h});
  s.blend_mode = mode;
  s.dws = dws;
  s.skip_pairs = default_skip_pairs(s.layers.size());
  return s;
}

ModelSpec ModelSpec::convlstm_baseline(std::size_t layers, Index width) {
  ModelSpec s;
  s.kind = ModelKind::ConvLSTMBaseline;
  s.layers.assign(layers, LayerSpec{width, width});
  s.skip_pairs = default_skip_pairs(layers);
  return s;
}

// ---------------------------------------------------------------------------

namespace {

Index layer_output_channels(const ModelSpec& spec, std::size_t l) {
  return spec.kind == ModelKind::ContextVP ? spec.layers[l].blend : spec.layers[l].hidden;
}

// Channels of the stage fed by layer `l` (0-based) plus its skip sources.
Index stage_channels(const ModelSpec& spec, std::size_t l) {
  Index c = layer_output_channels(spec, l);
  for (auto [src, dst] : spec.skip_pairs)
    if (static_cast<std::size_t>(dst) == l + 1) c += layer_output_channels(spec, static_cast<std::size_t>(src - 1));
  return c;
}

std::string group_name(Direction d, bool tied) {
  if (!tied || d == Direction::TMinus) return to_string(d);
  return (d == Direction::HMinus || d == Direction::HPlus) ? "h" : "w";
}

}  // namespace

Index Model::layer_input_channels(std::size_t l) const {
  return l == 0 ? spec_.channels : stage_channels(spec_, l - 1);
}

Index Model::head_input_channels() const { return stage_channels(spec_, spec_.layers.size() - 1); }

void Model::add(const std::string& name, const std::shared_ptr<Tensor>& t) {
  for (const auto& p : params_)
    if (p.name == name) throw Error("duplicate parameter name " + name);
  params_.push_back({name, t});
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l + 1) + ".";
    const Index cin = layer_input_channels(l);
    const Index hidden = spec_.layers[l].hidden;
    ModelLayer layer;
    if (spec_.kind == ModelKind::ContextVP) {
      for (Direction d : kDirections) unit(layer.units, d) = PMDUnit::zeros(spec_.kernel, cin, hidden);
      if (spec_.dws) tie_dws(layer.units);
      std::set<const Tensor*> registered;
      for (Direction d : kDirections) {
        const PMDUnit& u = unit(layer.units, d);
        if (!registered.insert(u.W_i.get()).second) continue;
        for (const auto& [suffix, t] : u.named_tensors()) add(prefix + group_name(d, spec_.dws) + "." + suffix, t);
      }
      layer.blend = BlendBlock::zeros(spec_.blend_mode, hidden, spec_.layers[l].blend);
      layer.blend.f = spec_.blend_activation;
      layer.blend.layer_norm = spec_.blend_layer_norm;
      add(prefix + "blend.W", layer.blend.W);
      add(prefix + "blend.b", layer.blend.b);
    } else {
      PMDUnit& u = unit(layer.units, Direction::TMinus);
      u = PMDUnit::zeros(spec_.kernel, cin, hidden);
      for (const auto& [suffix, t] : u.named_tensors()) add(prefix + "t-." + suffix, t);
    }
    layers_.push_back(std::move(layer));
  }
  head_W_ = std::make_shared<Tensor>(Shape{head_input_channels(), spec_.channels});
  head_b_ = std::make_shared<Tensor>(Shape{spec_.channels});
  add("head.W", head_W_);
  add("head.b", head_b_);
}

Model Model::clone() const {
  Model copy(spec_);
  for (std::size_t k = 0; k < params_.size(); ++k) *copy.params_[k].tensor = *params_[k].tensor;
  return copy;
}

std::shared_ptr<Tensor> Model::parameter(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw Error("no parameter named " + name);
}

Model build(const ModelSpec& spec, std::uint64_t seed) {
  Model model(spec);
  SplitMix64 rng(seed);
  for (const auto& p : model.parameters())
    if (p.tensor->rank() >= 2) xavier_uniform(*p.tensor, rng);
  return model;
}

// ---------------------------------------------------------------------------

Var forward(const Model& model, Var frames) {
  const ModelSpec& spec = model.spec();
  if (frames.shape().rank() != 5) throw ShapeError("forward expects [N,T,H,W,C], got " + frames.shape().str());
  if (frames.shape()[1] < 1) throw ShapeError("forward needs at least one input frame");
  if (frames.shape()[4] != spec.channels)
    throw ShapeError("input has " + std::to_string(frames.shape()[4]) + " channels (axis 4), model expects " +
                     std::to_string(spec.channels));
  Tape& tape = frames.tape();

  std::vector<Var> outputs;
  auto stage = [&](std::size_t l) {
    std::vector<Var> parts;
    for (auto [src, dst] : spec.skip_pairs)
      if (static_cast<std::size_t>(dst) == l + 1) parts.push_back(outputs[static_cast<std::size_t>(src - 1)]);
    parts.push_back(outputs[l]);
    return parts.size() == 1 ? parts[0] : concat(std::span<const Var>(parts), -1);
  };

  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    Var x = l == 0 ? frames : stage(l - 1);
    const ModelLayer& layer = model.layers()[l];
    if (spec.kind == ModelKind::ContextVP)
      outputs.push_back(context_layer(layer.units, layer.blend, x));
    else
      outputs.push_back(pmd_scan(unit(layer.units, Direction::TMinus), x, Direction::TMinus));
  }
  Var features = stage(spec.layers.size() - 1);
  Var last = take(features, 1, features.shape()[1] - 1);
  return sigmoid(linear(last, tape.parameter(model.head_weight()), tape.parameter(model.head_bias())));
}

Tensor forward_predict(const Model& model, const Tensor& frames) {
  const bool single = frames.rank() == 4;
  if (!single && frames.rank() != 5) throw ShapeError("forward_predict expects [T,H,W,C] or [N,T,H,W,C]");
  if (frames.dim(single ? 0 : 1) < 1) throw ShapeError("forward_predict needs T >= 1");
  Tape tape(false);
  Var in = tape.constant(single ? frames.reshaped(frames.shape().with_inserted(0, 1)) : frames);
  Tensor out = forward(model, in).value();
  return single ? out.reshaped(out.shape().without(0)) : out;
}

std::vector<Tensor> predict_recursive(const Model& model, const Tensor& frames, int steps) {
  if (steps < 1) throw ConfigError("recursive prediction needs at least one step");
  if (frames.rank() != 4) throw ShapeError("predict_recursive expects [T,H,W,C], got " + frames.shape().str());
  std::vector<Tensor> predictions;
  Tensor window = frames;
  const Index t = frames.dim(0);
  for (int k = 0; k < steps; ++k) {
    Tensor next = forward_predict(model, window);
    predictions.push_back(next);
    if (k + 1 == steps) break;
    const Tensor parts[] = {slice(window, 0, 1, t), next.reshaped(next.shape().with_inserted(0, 1))};
    window = concat(std::span<const Tensor>(parts), 0);
  }
  return predictions;
}

Index count_parameters(const Model& model) {
  std::set<const Tensor*> seen;
  Index n = 0;
  for (const auto& p : model.parameters())
    if (seen.insert(p.tensor.get()).second) n += p.tensor->size();
  return n;
}

Index count_parameters(const ModelSpec& spec) { return count_parameters(Model(spec)); }

ModelSpec matched_convlstm_baseline(const ModelSpec& target, std::size_t layers, Index max_width) {
  const Index goal = count_parameters(target);
  ModelSpec best;
  Index best_gap = -1;
  for (Index width = 1; width <= max_width; ++width) {
    ModelSpec candidate = ModelSpec::convlstm_baseline(layers, width);
    candidate.channels = target.channels;
    candidate.kernel = target.kernel;
    candidate.input_len = target.input_len;
    const Index n = count_parameters(candidate);
    const Index gap = std::abs(n - goal);
    if (best_gap < 0 || gap < best_gap) {
      best = candidate;
      best_gap = gap;
    }
    if (n > goal) break;  // counts grow with width
  }
  return best;
}

}  // namespace cvp
