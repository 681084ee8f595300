#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contextvp/tensor.hpp"

namespace cvp {

enum class ShapeKind { Square, Disc };

std::string to_string(ShapeKind k);
ShapeKind parse_shape_kind(const std::string& name);

/// Parameters of the bouncing-shapes generator.
struct ShapeSceneParams {
  Index n_sequences = 16;
  Index frames = 12;  // T
  Index height = 16;
  Index width = 16;
  Index channels = 1;
  int n_shapes = 1;
  std::vector<ShapeKind> kinds{ShapeKind::Square};
  int size_min = 3;
  int size_max = 4;
  double speed_min = 1.0;
  double speed_max = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const ShapeSceneParams& p);
ShapeSceneParams scene_params_from_json(const nlohmann::json& j);

/// A shape's bounding box corner (x = column, y = row) and velocity in
/// pixels per frame.
struct MovingShape {
  ShapeKind kind = ShapeKind::Square;
  int size = 2;
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;
};

/// Constant-velocity step. A box that would leave the frame is clamped to
/// the wall and its velocity component flips.
void advance(MovingShape& shape, Index height, Index width);

/// Renders `frames` steps of the scene (drawing, then advancing) into
/// [T, H, W, C]. Intensity 1 on 0, overlaps clamp to 1, positions floored.
Tensor render_scene(std::vector<MovingShape> shapes, Index frames, Index height, Index width, Index channels);

/// N equally shaped [T, H, W, C] sequences with values in [0, 1].
struct Dataset {
  std::vector<Tensor> sequences;
  std::string generator = "file";
  std::uint64_t seed = 0;

  Index size() const { return static_cast<Index>(sequences.size()); }
  Shape sequence_shape() const;
  void validate() const;
};

Dataset generate_bouncing_shapes(const ShapeSceneParams& params);

struct Window {
  Tensor input;   // [input_len, H, W, C]
  Tensor target;  // [H, W, C]
  std::size_t sequence = 0;
  Index start = 0;
};

/// All maximal sliding windows, sequence-major; T - input_len per sequence.
std::vector<Window> window(const Dataset& dataset, Index input_len);

/// Windows of `input_len` inputs followed by `steps` targets.
struct MultiStepWindow {
  Tensor input;
  std::vector<Tensor> targets;
  std::size_t sequence = 0;
  Index start = 0;
};
std::vector<MultiStepWindow> multistep_windows(const Dataset& dataset, Index input_len, Index steps);

/// First sequences for training, the last `fraction` (floored) for validation.
std::pair<Dataset, Dataset> split_validation(const Dataset& dataset, double fraction);

/// CVPD byte layout: magic, version u32, N T H W C u32, dtype u8 (1 = f32),
/// then float32 data in [n][t][h][w][c] order, all little-endian.
std::vector<std::uint8_t> serialize_dataset(const Dataset& dataset);
Dataset deserialize_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// FNV-1a 64 over the data payload (bytes after the header).
std::uint64_t dataset_checksum(const Dataset& dataset);

}  // namespace cvp
