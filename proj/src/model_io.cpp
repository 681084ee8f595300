#include <cstring>
#include <set>

#include "contextvp/io.hpp"
#include "contextvp/model.hpp"

namespace cvp {

using nlohmann::json;

namespace {

constexpr char kModelMagic[4] = {'C', 'V', 'P', 'M'};
constexpr std::uint32_t kModelVersion = 1;

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

json to_json(const ModelSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) layers.push_back({{"hidden", l.hidden}, {"blend", l.blend}});
  json skips = json::array();
  for (auto [s, d] : spec.skip_pairs) skips.push_back({s, d});
  return {{"kind", to_string(spec.kind)},
          {"channels", spec.channels},
          {"layers", layers},
          {"kernel", spec.kernel},
          {"blend_mode", to_string(spec.blend_mode)},
          {"dws", spec.dws},
          {"skip_pairs", skips},
          {"blend_activation", to_string(spec.blend_activation)},
          {"blend_layer_norm", spec.blend_layer_norm},
          {"output_activation", to_string(spec.output_activation)},
          {"input_len", spec.input_len}};
}

ModelSpec model_spec_from_json(const json& j) {
  static const std::set<std::string> known = {"kind",     "channels",         "layers",           "kernel",
                                              "blend_mode", "dws",            "skip_pairs",       "blend_activation",
                                              "blend_layer_norm", "output_activation", "input_len"};
  if (!j.is_object()) throw ConfigError("model spec must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown model spec key '" + key + "'");
  try {
    ModelSpec s;
    s.kind = parse_model_kind(get_or<std::string>(j, "kind", "contextvp"));
    s.channels = get_or<Index>(j, "channels", 1);
    s.kernel = get_or<Index>(j, "kernel", 3);
    s.blend_mode = parse_blend_mode(get_or<std::string>(j, "blend_mode", "weighted"));
    s.dws = get_or<bool>(j, "dws", true);
    s.blend_activation = parse_activation(get_or<std::string>(j, "blend_activation", "identity"));
    s.blend_layer_norm = get_or<bool>(j, "blend_layer_norm", false);
    s.output_activation = parse_activation(get_or<std::string>(j, "output_activation", "sigmoid"));
    s.input_len = get_or<Index>(j, "input_len", 10);
    for (const auto& l : j.value("layers", json::array())) {
      if (l.is_number_integer()) {
        s.layers.push_back({l.get<Index>(), l.get<Index>()});
      } else {
        for (const auto& [key, value] : l.items())
          if (key != "hidden" && key != "blend") throw ConfigError("unknown layer key '" + key + "'");
        const Index hidden = l.at("hidden").get<Index>();
        s.layers.push_back({hidden, get_or<Index>(l, "blend", hidden)});
      }
    }
    if (j.contains("skip_pairs")) {
      for (const auto& p : j.at("skip_pairs")) s.skip_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    } else {
      s.skip_pairs = default_skip_pairs(s.layers.size());
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model spec: ") + e.what());
  }
}

std::vector<std::uint8_t> serialize_model(const Model& model) {
  ByteWriter w;
  w.raw(std::string_view(kModelMagic, 4));
  w.u32(kModelVersion);
  const std::string spec = to_json(model.spec()).dump();
  w.u64(spec.size());
  w.raw(spec);
  w.u64(model.parameters().size());
  for (const auto& p : model.parameters()) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.raw(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor->rank()));
    for (Index e : p.tensor->shape()) w.u64(static_cast<std::uint64_t>(e));
    for (Index i = 0; i < p.tensor->size(); ++i) w.f64(p.tensor->data()[i]);
  }
  return std::move(w.bytes());
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  using Kind = FormatError::Kind;
  ByteReader r(bytes);
  if (r.remaining() < 4 || std::memcmp(bytes.data(), kModelMagic, 4) != 0)
    throw FormatError(Kind::BadMagic, "not a model file (bad magic)");
  r.raw(4, "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kModelVersion) throw FormatError(Kind::BadVersion, "unsupported model file version " + std::to_string(version));
  const std::uint64_t spec_len = r.u64("spec length");
  if (spec_len > r.remaining()) throw FormatError(Kind::Truncated, "truncated file while reading model spec");
  const std::string spec_text = r.raw(static_cast<std::size_t>(spec_len), "model spec");
  json spec_json;
  try {
    spec_json = json::parse(spec_text);
  } catch (const json::exception& e) {
    throw FormatError(Kind::Mismatch, std::string("model spec is not valid JSON: ") + e.what());
  }
  Model model(model_spec_from_json(spec_json));

  const std::uint64_t count = r.u64("tensor count");
  std::set<std::string> seen;
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = r.u32("tensor name length");
    const std::string name = r.raw(name_len, "tensor name");
    if (!seen.insert(name).second) throw FormatError(Kind::NameCollision, "duplicate tensor name '" + name + "'");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank > static_cast<std::uint32_t>(kMaxRank))
      throw FormatError(Kind::DimOverflow, "tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const std::uint64_t e = r.u64("tensor extent");
      if (e > (std::uint64_t{1} << 32)) throw FormatError(Kind::DimOverflow, "tensor '" + name + "' extent too large");
      shape.push_back(static_cast<Index>(e));
    }
    std::shared_ptr<Tensor> target;
    try {
      target = model.parameter(name);
    } catch (const Error&) {
      throw FormatError(Kind::Mismatch, "model file has unexpected tensor '" + name + "'");
    }
    if (!(target->shape() == shape))
      throw FormatError(Kind::Mismatch, "tensor '" + name + "' has shape " + shape.str() + ", spec implies " +
                                            target->shape().str());
    if (static_cast<std::uint64_t>(shape.numel()) * 8 > r.remaining())
      throw FormatError(Kind::Truncated, "truncated file while reading tensor '" + name + "'");
    for (Index i = 0; i < target->size(); ++i) target->data()[i] = r.f64("tensor data");
  }
  if (seen.size() != model.parameters().size())
    throw FormatError(Kind::Mismatch, "model file is missing parameter tensors");
  if (r.remaining() != 0) throw FormatError(Kind::Mismatch, "trailing bytes after model data");
  return model;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace cvp
