#include "contextvp/pmd.hpp"

#include <algorithm>
#include <set>

namespace cvp {

std::string to_string(Direction d) {
  switch (d) {
    case Direction::TMinus: return "t-";
    case Direction::HMinus: return "h-";
    case Direction::HPlus: return "h+";
    case Direction::WMinus: return "w-";
    case Direction::WPlus: return "w+";
  }
  return "?";
}

Direction parse_direction(const std::string& name) {
  for (Direction d : kDirections)
    if (to_string(d) == name) return d;
  throw ConfigError("unknown direction '" + name + "'");
}

std::optional<Direction> opposite(Direction d) {
  switch (d) {
    case Direction::HMinus: return Direction::HPlus;
    case Direction::HPlus: return Direction::HMinus;
    case Direction::WMinus: return Direction::WPlus;
    case Direction::WPlus: return Direction::WMinus;
    case Direction::TMinus: return std::nullopt;
  }
  return std::nullopt;
}

BlendMode parse_blend_mode(const std::string& name) {
  if (name == "uniform") return BlendMode::Uniform;
  if (name == "weighted") return BlendMode::Weighted;
  throw ConfigError("unknown blend mode '" + name + "'");
}

std::string to_string(BlendMode m) { return m == BlendMode::Uniform ? "uniform" : "weighted"; }

// ---------------------------------------------------------------------------

PMDUnit PMDUnit::zeros(Index kernel, Index in_channels, Index hidden) {
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel size must be odd, got " + std::to_string(kernel));
  auto w = [&] { return std::make_shared<Tensor>(Shape{kernel, kernel, in_channels, hidden}); };
  auto h = [&] { return std::make_shared<Tensor>(Shape{kernel, kernel, hidden, hidden}); };
  auto b = [&] { return std::make_shared<Tensor>(Shape{hidden}); };
  return PMDUnit{w(), w(), w(), w(), h(), h(), h(), h(), b(), b(), b(), b()};
}

std::vector<std::pair<std::string, std::shared_ptr<Tensor>>> PMDUnit::named_tensors() const {
  return {{"W_i", W_i}, {"W_f", W_f}, {"W_o", W_o}, {"W_c", W_c}, {"H_i", H_i}, {"H_f", H_f},
          {"H_o", H_o}, {"H_c", H_c}, {"b_i", b_i}, {"b_f", b_f}, {"b_o", b_o}, {"b_c", b_c}};
}

Index PMDUnit::scalar_count() const {
  Index n = 0;
  for (const auto& [name, t] : named_tensors()) n += t->size();
  return n;
}

void PMDUnit::validate() const {
  const Index k = kernel(), cin = in_channels(), ch = hidden();
  if (k % 2 == 0) throw ShapeError("PMD kernel size must be odd, got " + std::to_string(k));
  for (const auto& [name, t] : named_tensors()) {
    const Shape expected = name[0] == 'W'   ? Shape{k, k, cin, ch}
                           : name[0] == 'H' ? Shape{k, k, ch, ch}
                                            : Shape{ch};
    if (!(t->shape() == expected))
      throw ShapeError("PMD tensor " + name + " has shape " + t->shape().str() + ", expected " + expected.str());
  }
}

namespace {

struct GateParams {
  Var W;  // [k, k, Cin, 4 Ch], gate order i f o c
  Var H;  // [k, k, Ch, 4 Ch]
  Var b;  // [4 Ch]
  Index hidden;
};

GateParams gate_params(Tape& tape, const PMDUnit& u) {
  auto p = [&](const std::shared_ptr<Tensor>& t) { return tape.parameter(t); };
  return {concat({p(u.W_i), p(u.W_f), p(u.W_o), p(u.W_c)}, 3), concat({p(u.H_i), p(u.H_f), p(u.H_o), p(u.H_c)}, 3),
          concat({p(u.b_i), p(u.b_f), p(u.b_o), p(u.b_c)}, 0), u.hidden()};
}

// z holds W*x + b for all four gates; the recurrent term is added here.
CellState lstm_cell(Var z, const CellState& prev, const GateParams& g) {
  if (prev.s.valid()) z = z + conv2d(prev.s, g.H);
  const Index ch = g.hidden;
  Var sig = sigmoid(slice(z, -1, 0, 3 * ch));
  Var i = slice(sig, -1, 0, ch);
  Var f = slice(sig, -1, ch, 2 * ch);
  Var o = slice(sig, -1, 2 * ch, 3 * ch);
  Var candidate = tanh(slice(z, -1, 3 * ch, 4 * ch));
  Var c = prev.c.valid() ? f * prev.c + i * candidate : i * candidate;
  return {c, o * tanh(c)};
}

void check_channels(const Var& v, Index expected, const char* what) {
  const Index got = v.shape()[v.shape().rank() - 1];
  if (got != expected)
    throw ShapeError(std::string("pmd: ") + what + " has " + std::to_string(got) + " channels (last axis), expected " +
                     std::to_string(expected));
}

int scan_axis(int rank, Direction d) {
  if (rank != 4 && rank != 5) throw ShapeError("cuboid must be [T,H,W,C] or [N,T,H,W,C], got rank " + std::to_string(rank));
  switch (d) {
    case Direction::TMinus: return rank - 4;
    case Direction::HMinus:
    case Direction::HPlus: return rank - 3;
    case Direction::WMinus:
    case Direction::WPlus: return rank - 2;
  }
  return rank - 4;
}

std::vector<int> scan_permutation(int rank, Direction d) {
  const int axis = scan_axis(rank, d);
  std::vector<int> perm{axis};
  for (int a = 0; a < rank; ++a)
    if (a != axis) perm.push_back(a);
  return perm;
}

bool increasing(Direction d) { return d == Direction::TMinus || d == Direction::HPlus || d == Direction::WPlus; }

Index plane_index(Index step, Index count, Direction d) { return increasing(d) ? step : count - 1 - step; }

}  // namespace

CellState pmd_step(const PMDUnit& unit, Var x, Var c_prev, Var s_prev) {
  unit.validate();
  check_channels(x, unit.in_channels(), "input plane");
  if (c_prev.valid()) check_channels(c_prev, unit.hidden(), "previous cell state");
  if (s_prev.valid()) check_channels(s_prev, unit.hidden(), "previous hidden state");
  const GateParams g = gate_params(x.tape(), unit);
  return lstm_cell(conv2d(x, g.W, g.b), CellState{c_prev, s_prev}, g);
}

std::vector<Tensor> reorient(const Tensor& cuboid, Direction d) {
  const auto perm = scan_permutation(cuboid.rank(), d);
  const Tensor moved = permute(cuboid, std::span<const int>(perm));
  const Index n = moved.dim(0);
  std::vector<Tensor> planes;
  planes.reserve(static_cast<std::size_t>(n));
  for (Index step = 0; step < n; ++step) planes.push_back(take(moved, 0, plane_index(step, n, d)));
  return planes;
}

Tensor inverse_reorient(std::span<const Tensor> planes, Direction d) {
  const Index n = static_cast<Index>(planes.size());
  std::vector<Tensor> ordered(planes.size());
  for (Index step = 0; step < n; ++step) ordered[static_cast<std::size_t>(plane_index(step, n, d))] = planes[static_cast<std::size_t>(step)];
  const Tensor moved = stack(std::span<const Tensor>(ordered), 0);
  const auto inv = inverse_permutation(scan_permutation(moved.rank(), d));
  return permute(moved, std::span<const int>(inv));
}

std::vector<Var> reorient(Var cuboid, Direction d) {
  const auto perm = scan_permutation(cuboid.shape().rank(), d);
  Var moved = permute(cuboid, std::span<const int>(perm));
  const Index n = moved.shape()[0];
  std::vector<Var> planes;
  planes.reserve(static_cast<std::size_t>(n));
  for (Index step = 0; step < n; ++step) planes.push_back(take(moved, 0, plane_index(step, n, d)));
  return planes;
}

Var inverse_reorient(std::span<const Var> planes, Direction d) {
  const Index n = static_cast<Index>(planes.size());
  std::vector<Var> ordered(planes.size());
  for (Index step = 0; step < n; ++step) ordered[static_cast<std::size_t>(plane_index(step, n, d))] = planes[static_cast<std::size_t>(step)];
  Var moved = stack(std::span<const Var>(ordered), 0);
  const auto inv = inverse_permutation(scan_permutation(moved.shape().rank(), d));
  return permute(moved, std::span<const int>(inv));
}

Var pmd_scan(const PMDUnit& unit, Var cuboid, Direction d) {
  unit.validate();
  check_channels(cuboid, unit.in_channels(), "cuboid");
  const auto perm = scan_permutation(cuboid.shape().rank(), d);
  const GateParams g = gate_params(cuboid.tape(), unit);

  // Input projections of every plane at once; planes are independent.
  Var moved = permute(cuboid, std::span<const int>(perm));
  Var projected = conv2d(moved, g.W, g.b);
  const Index n = moved.shape()[0];

  std::vector<Var> states(static_cast<std::size_t>(n));
  CellState state;
  for (Index step = 0; step < n; ++step) {
    const Index k = plane_index(step, n, d);
    state = lstm_cell(take(projected, 0, k), state, g);
    states[static_cast<std::size_t>(k)] = state.s;
  }
  Var stacked = stack(std::span<const Var>(states), 0);
  const auto inv = inverse_permutation(perm);
  return permute(stacked, std::span<const int>(inv));
}

// ---------------------------------------------------------------------------

BlendBlock BlendBlock::zeros(BlendMode mode, Index hidden, Index out_units) {
  BlendBlock b;
  b.mode = mode;
  b.W = std::make_shared<Tensor>(Shape{mode == BlendMode::Weighted ? 5 * hidden : hidden, out_units});
  b.b = std::make_shared<Tensor>(Shape{out_units});
  return b;
}

void BlendBlock::validate() const {
  if (!W || !b || W->rank() != 2 || b->rank() != 1 || b->dim(0) != W->dim(1))
    throw ShapeError("blend block needs W [N1 x N2] and b [N2]");
  if (mode == BlendMode::Weighted && W->dim(0) % 5 != 0)
    throw ShapeError("weighted blend W first extent must be 5 * N1, got " + W->shape().str());
}

namespace {

void check_states(std::span<const Var> states) {
  if (states.size() != kDirections.size())
    throw ShapeError("blend expects 5 directional states, got " + std::to_string(states.size()));
  for (const Var& s : states)
    if (!(s.shape() == states[0].shape()))
      throw ShapeError("blend state shape mismatch: " + s.shape().str() + " vs " + states[0].shape().str());
}

Var finish_blend(Var pre, const BlendBlock& block) {
  if (block.layer_norm) pre = layer_norm(pre);
  return activation(pre, block.f);
}

}  // namespace

Var blend_uniform(std::span<const Var> states, const BlendBlock& block) {
  if (block.mode != BlendMode::Uniform) throw ConfigError("blend_uniform called with a weighted block");
  block.validate();
  check_states(states);
  Var total = states[0];
  for (std::size_t k = 1; k < states.size(); ++k) total = total + states[k];
  Tape& tape = total.tape();
  return finish_blend(linear(total, tape.parameter(block.W), tape.parameter(block.b)), block);
}

Var blend_weighted(std::span<const Var> states, const BlendBlock& block) {
  if (block.mode != BlendMode::Weighted) throw ConfigError("blend_weighted called with a uniform block");
  block.validate();
  check_states(states);
  Var stacked = concat(states, -1);
  Tape& tape = stacked.tape();
  return finish_blend(linear(stacked, tape.parameter(block.W), tape.parameter(block.b)), block);
}

Var blend(std::span<const Var> states, const BlendBlock& block) {
  return block.mode == BlendMode::Uniform ? blend_uniform(states, block) : blend_weighted(states, block);
}

void tie_dws(DirectionalUnits& units) {
  for (auto [from, to] : {std::pair{Direction::HMinus, Direction::HPlus}, std::pair{Direction::WMinus, Direction::WPlus}}) {
    const PMDUnit& src = unit(units, from);
    const PMDUnit& dst = unit(units, to);
    src.validate();
    dst.validate();
    if (src.kernel() != dst.kernel() || src.in_channels() != dst.in_channels() || src.hidden() != dst.hidden())
      throw ShapeError("cannot tie " + to_string(to) + " to " + to_string(from) + ": incompatible unit shapes");
    unit(units, to) = src;
  }
}

std::size_t distinct_units(const DirectionalUnits& units) {
  std::set<const Tensor*> seen;
  for (const auto& u : units) seen.insert(u.W_i.get());
  return seen.size();
}

Var context_layer(const DirectionalUnits& units, const BlendBlock& block, Var cuboid) {
  std::array<Var, 5> states;
  for (Direction d : kDirections) states[static_cast<std::size_t>(d)] = pmd_scan(unit(units, d), cuboid, d);
  return blend(std::span<const Var>(states), block);
}

}  // namespace cvp
