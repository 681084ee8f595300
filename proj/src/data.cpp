#include "contextvp/data.hpp"

#include <cmath>
#include <cstring>
#include <set>

#include "contextvp/io.hpp"
#include "contextvp/parallel.hpp"
#include "contextvp/random.hpp"

namespace cvp {

using nlohmann::json;

std::string to_string(ShapeKind k) { return k == ShapeKind::Square ? "square" : "disc"; }

ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "square") return ShapeKind::Square;
  if (name == "disc") return ShapeKind::Disc;
  throw ConfigError("unknown shape kind '" + name + "'");
}

void ShapeSceneParams::validate() const {
  if (n_sequences < 1 || frames < 1 || height < 1 || width < 1) throw ConfigError("scene dimensions must be positive");
  if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
  if (n_shapes < 0) throw ConfigError("n_shapes must be non-negative");
  if (kinds.empty()) throw ConfigError("at least one shape kind is required");
  if (size_min < 1 || size_max < size_min)
    throw ConfigError("shape sizes must satisfy 1 <= size_min <= size_max");
  if (size_max >= std::min(height, width))
    throw ConfigError("degenerate geometry: shape size " + std::to_string(size_max) + " does not fit a " +
                      std::to_string(height) + "x" + std::to_string(width) + " frame");
  if (speed_min < 0.0 || speed_max < speed_min) throw ConfigError("speeds must satisfy 0 <= speed_min <= speed_max");
}

json to_json(const ShapeSceneParams& p) {
  json kinds = json::array();
  for (ShapeKind k : p.kinds) kinds.push_back(to_string(k));
  return {{"n_sequences", p.n_sequences}, {"frames", p.frames},       {"height", p.height},
          {"width", p.width},             {"channels", p.channels},   {"n_shapes", p.n_shapes},
          {"kinds", kinds},               {"size_min", p.size_min},   {"size_max", p.size_max},
          {"speed_min", p.speed_min},     {"speed_max", p.speed_max}, {"seed", p.seed}};
}

ShapeSceneParams scene_params_from_json(const json& j) {
  const json defaults = to_json(ShapeSceneParams{});
  if (!j.is_object()) throw ConfigError("scene config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!defaults.contains(key)) throw ConfigError("unknown scene key '" + key + "'");
  json merged = defaults;
  merged.update(j);
  try {
    ShapeSceneParams p;
    p.n_sequences = merged.at("n_sequences").get<Index>();
    p.frames = merged.at("frames").get<Index>();
    p.height = merged.at("height").get<Index>();
    p.width = merged.at("width").get<Index>();
    p.channels = merged.at("channels").get<Index>();
    p.n_shapes = merged.at("n_shapes").get<int>();
    p.kinds.clear();
    for (const auto& k : merged.at("kinds")) p.kinds.push_back(parse_shape_kind(k.get<std::string>()));
    p.size_min = merged.at("size_min").get<int>();
    p.size_max = merged.at("size_max").get<int>();
    p.speed_min = merged.at("speed_min").get<double>();
    p.speed_max = merged.at("speed_max").get<double>();
    p.seed = merged.at("seed").get<std::uint64_t>();
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed scene config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

void advance(MovingShape& s, Index height, Index width) {
  auto step = [](double& pos, double& vel, double limit) {
    pos += vel;
    if (pos > limit) {
      pos = limit;
      vel = -vel;
    } else if (pos < 0.0) {
      pos = 0.0;
      vel = -vel;
    }
  };
  step(s.x, s.vx, static_cast<double>(width - s.size));
  step(s.y, s.vy, static_cast<double>(height - s.size));
}

namespace {

bool covers(const MovingShape& s, Index r, Index c) {
  if (s.kind == ShapeKind::Square) return true;
  const double half = 0.5 * s.size;
  const double dy = static_cast<double>(r) + 0.5 - half;
  const double dx = static_cast<double>(c) + 0.5 - half;
  return dx * dx + dy * dy <= half * half;
}

}  // namespace

Tensor render_scene(std::vector<MovingShape> shapes, Index frames, Index height, Index width, Index channels) {
  Tensor out(Shape{frames, height, width, channels});
  for (Index t = 0; t < frames; ++t) {
    for (const MovingShape& s : shapes) {
      const auto top = static_cast<Index>(std::floor(s.y));
      const auto left = static_cast<Index>(std::floor(s.x));
      for (Index r = 0; r < s.size; ++r)
        for (Index c = 0; c < s.size; ++c) {
          const Index row = top + r, col = left + c;
          if (row < 0 || row >= height || col < 0 || col >= width || !covers(s, r, c)) continue;
          for (Index ch = 0; ch < channels; ++ch) out(t, row, col, ch) = 1.0;
        }
    }
    for (MovingShape& s : shapes) advance(s, height, width);
  }
  return out;
}

Shape Dataset::sequence_shape() const {
  if (sequences.empty()) throw ShapeError("empty dataset");
  return sequences.front().shape();
}

void Dataset::validate() const {
  if (sequences.empty()) return;
  const Shape s = sequence_shape();
  if (s.rank() != 4) throw ShapeError("sequences must be [T,H,W,C], got " + s.str());
  for (const Tensor& seq : sequences) {
    if (!(seq.shape() == s)) throw ShapeError("sequence shape mismatch: " + seq.shape().str() + " vs " + s.str());
    if ((seq.array() < 0.0).any() || (seq.array() > 1.0).any()) throw NumericError("pixel values outside [0, 1]");
  }
}

Dataset generate_bouncing_shapes(const ShapeSceneParams& params) {
  params.validate();
  // One derived seed per sequence so sequences can be generated independently.
  SplitMix64 master(params.seed);
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(params.n_sequences));
  for (auto& s : seeds) s = master();

  static constexpr int kCompass[8][2] = {{1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}};
  Dataset ds;
  ds.generator = "bouncing_shapes";
  ds.seed = params.seed;
  ds.sequences.resize(seeds.size());
  parallel_for(seeds.size(), worker_count(), [&](std::size_t n) {
    SplitMix64 rng(seeds[n]);
    std::vector<MovingShape> shapes;
    for (int k = 0; k < params.n_shapes; ++k) {
      MovingShape s;
      s.kind = params.kinds[static_cast<std::size_t>(rng.below(params.kinds.size()))];
      s.size = params.size_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(params.size_max - params.size_min + 1)));
      s.x = rng.uniform(0.0, static_cast<double>(params.width - s.size));
      s.y = rng.uniform(0.0, static_cast<double>(params.height - s.size));
      const double speed = rng.uniform(params.speed_min, params.speed_max);
      const auto* dir = kCompass[rng.below(8)];
      s.vx = speed * dir[0];
      s.vy = speed * dir[1];
      shapes.push_back(s);
    }
    ds.sequences[n] = render_scene(std::move(shapes), params.frames, params.height, params.width, params.channels);
  });
  return ds;
}

// ---------------------------------------------------------------------------

std::vector<Window> window(const Dataset& dataset, Index input_len) {
  std::vector<Window> out;
  if (dataset.sequences.empty()) return out;
  const Index t = dataset.sequence_shape()[0];
  if (input_len < 1 || input_len >= t)
    throw ConfigError("window length " + std::to_string(input_len) + " must be in [1, T) with T = " + std::to_string(t));
  for (std::size_t n = 0; n < dataset.sequences.size(); ++n) {
    const Tensor& seq = dataset.sequences[n];
    for (Index start = 0; start + input_len < t; ++start)
      out.push_back({slice(seq, 0, start, start + input_len), take(seq, 0, start + input_len), n, start});
  }
  return out;
}

std::vector<MultiStepWindow> multistep_windows(const Dataset& dataset, Index input_len, Index steps) {
  std::vector<MultiStepWindow> out;
  if (dataset.sequences.empty()) return out;
  const Index t = dataset.sequence_shape()[0];
  if (input_len < 1 || steps < 1 || input_len + steps > t)
    throw ConfigError("need input_len + steps <= T (input_len " + std::to_string(input_len) + ", steps " +
                      std::to_string(steps) + ", T " + std::to_string(t) + ")");
  for (std::size_t n = 0; n < dataset.sequences.size(); ++n) {
    const Tensor& seq = dataset.sequences[n];
    for (Index start = 0; start + input_len + steps <= t; ++start) {
      MultiStepWindow w{slice(seq, 0, start, start + input_len), {}, n, start};
      for (Index k = 0; k < steps; ++k) w.targets.push_back(take(seq, 0, start + input_len + k));
      out.push_back(std::move(w));
    }
  }
  return out;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& dataset, double fraction) {
  const auto n = dataset.sequences.size();
  const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  Dataset train, val;
  train.generator = val.generator = dataset.generator;
  train.seed = val.seed = dataset.seed;
  train.sequences.assign(dataset.sequences.begin(), dataset.sequences.end() - static_cast<std::ptrdiff_t>(n_val));
  val.sequences.assign(dataset.sequences.end() - static_cast<std::ptrdiff_t>(n_val), dataset.sequences.end());
  return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kDatasetMagic[4] = {'C', 'V', 'P', 'D'};
constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 5 * 4 + 1;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 36;

void write_payload(const Dataset& dataset, ByteWriter& w) {
  for (const Tensor& seq : dataset.sequences)
    for (Index i = 0; i < seq.size(); ++i) w.f32(static_cast<float>(seq.data()[i]));
}

}  // namespace

std::vector<std::uint8_t> serialize_dataset(const Dataset& dataset) {
  dataset.validate();
  ByteWriter w;
  w.raw(std::string_view(kDatasetMagic, 4));
  w.u32(kDatasetVersion);
  const Shape s = dataset.sequences.empty() ? Shape{0, 0, 0, 0} : dataset.sequence_shape();
  w.u32(static_cast<std::uint32_t>(dataset.sequences.size()));
  for (int a = 0; a < 4; ++a) w.u32(static_cast<std::uint32_t>(s[a]));
  w.u8(kDtypeF32);
  write_payload(dataset, w);
  return std::move(w.bytes());
}

Dataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  using Kind = FormatError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kDatasetMagic, 4) != 0)
    throw FormatError(Kind::BadMagic, "not a dataset file (bad magic)");
  ByteReader r(bytes);
  r.raw(4, "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion) throw FormatError(Kind::BadVersion, "unsupported dataset version " + std::to_string(version));
  std::uint64_t dims[5];
  for (auto& d : dims) d = r.u32("dimensions");
  const std::uint8_t dtype = r.u8("dtype");
  if (dtype != kDtypeF32) throw FormatError(Kind::Mismatch, "unsupported dtype code " + std::to_string(dtype));
  std::uint64_t total = 1;
  for (std::uint64_t d : dims) {
    if (d != 0 && total > kMaxElements / d) throw FormatError(Kind::DimOverflow, "dataset dimensions overflow");
    total *= d;
  }
  if (total > kMaxElements) throw FormatError(Kind::DimOverflow, "dataset dimensions overflow");
  if (r.remaining() < total * 4) throw FormatError(Kind::Truncated, "truncated dataset payload");
  if (r.remaining() > total * 4) throw FormatError(Kind::Mismatch, "trailing bytes after dataset payload");

  Dataset ds;
  const Shape seq_shape{static_cast<Index>(dims[1]), static_cast<Index>(dims[2]), static_cast<Index>(dims[3]),
                        static_cast<Index>(dims[4])};
  for (std::uint64_t n = 0; n < dims[0]; ++n) {
    Tensor seq(seq_shape);
    for (Index i = 0; i < seq.size(); ++i) seq.data()[i] = static_cast<double>(r.f32("payload"));
    ds.sequences.push_back(std::move(seq));
  }
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return deserialize_dataset(read_file(path)); }

std::uint64_t dataset_checksum(const Dataset& dataset) {
  ByteWriter w;
  write_payload(dataset, w);
  return fnv1a64(w.bytes());
}

}  // namespace cvp
