#pragma once

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "contextvp/autodiff.hpp"

namespace cvp {

/// Recurrence direction of a PMD unit over a [T, H, W, C] cuboid.
///
/// t- walks frames forward in time. h+/w+ walk rows/columns in increasing
/// index order, h-/w- in decreasing order.
enum class Direction { TMinus = 0, HMinus = 1, HPlus = 2, WMinus = 3, WPlus = 4 };

/// The five directions in weighted-blending concatenation order.
inline constexpr std::array<Direction, 5> kDirections = {Direction::TMinus, Direction::HMinus, Direction::HPlus,
                                                         Direction::WMinus, Direction::WPlus};

std::string to_string(Direction d);
Direction parse_direction(const std::string& name);
std::optional<Direction> opposite(Direction d);

/// Parameters of one LSTM whose gate transforms are 2-D convolutions.
///
/// Input-to-state kernels are [k, k, Cin, Ch], state-to-state kernels
/// [k, k, Ch, Ch], biases [Ch]. Tensors are shared_ptr so that tied
/// directions alias the same storage.
struct PMDUnit {
  std::shared_ptr<Tensor> W_i, W_f, W_o, W_c;
  std::shared_ptr<Tensor> H_i, H_f, H_o, H_c;
  std::shared_ptr<Tensor> b_i, b_f, b_o, b_c;

  static PMDUnit zeros(Index kernel, Index in_channels, Index hidden);

  Index kernel() const { return W_i->dim(0); }
  Index in_channels() const { return W_i->dim(2); }
  Index hidden() const { return W_i->dim(3); }

  /// (suffix, tensor) pairs in canonical order: W_i W_f W_o W_c H_i ... b_c.
  std::vector<std::pair<std::string, std::shared_ptr<Tensor>>> named_tensors() const;
  Index scalar_count() const;
  void validate() const;
  bool shares_storage_with(const PMDUnit& other) const { return W_i == other.W_i; }
};

/// Index a DirectionalUnits array by Direction.
using DirectionalUnits = std::array<PMDUnit, 5>;
inline PMDUnit& unit(DirectionalUnits& u, Direction d) { return u[static_cast<std::size_t>(d)]; }
inline const PMDUnit& unit(const DirectionalUnits& u, Direction d) { return u[static_cast<std::size_t>(d)]; }

struct CellState {
  Var c;
  Var s;
};

/// One LSTM step on a plane: x is [..., A, B, Cin]; c_prev and s_prev are
/// [..., A, B, Ch] or invalid Vars for the zero initial state.
CellState pmd_step(const PMDUnit& unit, Var x, Var c_prev = {}, Var s_prev = {});

/// Split a cuboid ([T,H,W,C] or [N,T,H,W,C]) into planes in scan order.
std::vector<Tensor> reorient(const Tensor& cuboid, Direction d);
Tensor inverse_reorient(std::span<const Tensor> planes, Direction d);
std::vector<Var> reorient(Var cuboid, Direction d);
Var inverse_reorient(std::span<const Var> planes, Direction d);

/// Hidden states of `unit` scanned along `d`, laid out like the input cuboid
/// with Ch channels. States start at zero.
Var pmd_scan(const PMDUnit& unit, Var cuboid, Direction d);

enum class BlendMode { Uniform, Weighted };

BlendMode parse_blend_mode(const std::string& name);
std::string to_string(BlendMode m);

/// Pointwise combination of the five directional state cuboids.
struct BlendBlock {
  BlendMode mode = BlendMode::Weighted;
  std::shared_ptr<Tensor> W;  // [N1, N2] uniform, [5 N1, N2] weighted
  std::shared_ptr<Tensor> b;  // [N2]
  Activation f = Activation::Identity;
  bool layer_norm = false;    // across channels, before f

  static BlendBlock zeros(BlendMode mode, Index hidden, Index out_units);
  Index out_units() const { return W->dim(1); }
  void validate() const;
};

Var blend_uniform(std::span<const Var> states, const BlendBlock& block);
Var blend_weighted(std::span<const Var> states, const BlendBlock& block);
Var blend(std::span<const Var> states, const BlendBlock& block);

/// Make h+ alias h- and w+ alias w- (t- untouched).
void tie_dws(DirectionalUnits& units);

/// Number of distinct parameter sets among the five units.
std::size_t distinct_units(const DirectionalUnits& units);

/// Context layer: five scans followed by a blend.
Var context_layer(const DirectionalUnits& units, const BlendBlock& block, Var cuboid);

}  // namespace cvp
