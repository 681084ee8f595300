#pragma once

// Independent reference implementations used as test oracles. They share no
// code with the library beyond the tensor container.

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <tuple>
#include <vector>

#include "contextvp/coverage.hpp"
#include "contextvp/model.hpp"
#include "contextvp/random.hpp"

namespace oracle {

using cvp::Index;
using cvp::Shape;
using cvp::Tensor;

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  cvp::SplitMix64 rng(seed);
  Tensor t(shape);
  for (Index k = 0; k < t.size(); ++k) t.data()[k] = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) return INFINITY;
  return (a.array() - b.array()).abs().maxCoeff();
}

/// Direct-loop "same" convolution of [B, H, W, Cin] with [k, k, Cin, Cout].
inline Tensor conv2d_direct(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr) {
  const Index b = x.dim(0), h = x.dim(1), wd = x.dim(2), cin = x.dim(3);
  const Index k = w.dim(0), cout = w.dim(3), r = k / 2;
  Tensor y(Shape{b, h, wd, cout});
  for (Index n = 0; n < b; ++n)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < wd; ++j)
        for (Index o = 0; o < cout; ++o) {
          double acc = bias ? (*bias)(o) : 0.0;
          for (Index di = 0; di < k; ++di)
            for (Index dj = 0; dj < k; ++dj) {
              const Index ii = i + di - r, jj = j + dj - r;
              if (ii < 0 || ii >= h || jj < 0 || jj >= wd) continue;
              for (Index c = 0; c < cin; ++c) acc += x(n, ii, jj, c) * w(di, dj, c, o);
            }
          y(n, i, j, o) = acc;
        }
  return y;
}

inline double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Textbook ConvLSTM over time for one sequence [T, H, W, C]; returns the
/// hidden states [T, H, W, Ch]. Gate order in the unit is i, f, o, c.
inline Tensor convlstm_reference(const cvp::PMDUnit& u, const Tensor& seq) {
  const Index t_len = seq.dim(0), h = seq.dim(1), w = seq.dim(2), cin = seq.dim(3);
  const Index ch = u.hidden();
  Tensor out(Shape{t_len, h, w, ch});
  Tensor c(Shape{1, h, w, ch}), s(Shape{1, h, w, ch});
  for (Index t = 0; t < t_len; ++t) {
    Tensor x(Shape{1, h, w, cin});
    for (Index k = 0; k < x.size(); ++k) x.data()[k] = seq.data()[t * h * w * cin + k];
    const Tensor zi = conv2d_direct(x, *u.W_i, u.b_i.get()), hi = conv2d_direct(s, *u.H_i);
    const Tensor zf = conv2d_direct(x, *u.W_f, u.b_f.get()), hf = conv2d_direct(s, *u.H_f);
    const Tensor zo = conv2d_direct(x, *u.W_o, u.b_o.get()), ho = conv2d_direct(s, *u.H_o);
    const Tensor zc = conv2d_direct(x, *u.W_c, u.b_c.get()), hc = conv2d_direct(s, *u.H_c);
    for (Index k = 0; k < c.size(); ++k) {
      const double ig = sigm(zi.data()[k] + hi.data()[k]);
      const double fg = sigm(zf.data()[k] + hf.data()[k]);
      const double og = sigm(zo.data()[k] + ho.data()[k]);
      const double cand = std::tanh(zc.data()[k] + hc.data()[k]);
      c.data()[k] = fg * c.data()[k] + ig * cand;
      s.data()[k] = og * std::tanh(c.data()[k]);
      out.data()[t * h * w * ch + k] = s.data()[k];
    }
  }
  return out;
}

/// Fills every tensor of a unit with uniform values in [-scale, scale].
inline void randomize(const cvp::PMDUnit& u, std::uint64_t seed, double scale = 0.5) {
  cvp::SplitMix64 rng(seed);
  for (const auto& [name, t] : u.named_tensors())
    for (Index k = 0; k < t->size(); ++k) t->data()[k] = rng.uniform(-scale, scale);
}

inline void randomize(const cvp::Model& m, std::uint64_t seed, double scale = 0.5) {
  cvp::SplitMix64 rng(seed);
  for (const auto& p : m.parameters())
    for (Index k = 0; k < p.tensor->size(); ++k) p.tensor->data()[k] = rng.uniform(-scale, scale);
}

// ---------------------------------------------------------------------------
// Brute-force reachability on the explicitly unrolled computation graph.

struct Node {
  int kind;   // 0 input, 1 gates, 2 cell, 3 hidden, 4 layer output
  int layer;  // -1 for input
  int dir;    // direction index, -1 where not applicable
  Index t, i, j;
  auto key() const { return std::tuple(kind, layer, dir, t, i, j); }
  bool operator<(const Node& o) const { return key() < o.key(); }
};

/// All nodes the given node reads directly.
inline std::vector<Node> node_inputs(const cvp::ModelSpec& spec, const Node& n, Index T, Index H, Index W) {
  std::vector<Node> in;
  const Index r = spec.kernel / 2;
  auto inside = [&](Index t, Index i, Index j) { return t >= 0 && t < T && i >= 0 && i < H && j >= 0 && j < W; };
  // Previous plane in scan order for direction index d (t-, h-, h+, w-, w+).
  auto prev = [&](int d, Index t, Index i, Index j) -> std::array<Index, 3> {
    switch (d) {
      case 0: return {t - 1, i, j};
      case 1: return {t, i + 1, j};
      case 2: return {t, i - 1, j};
      case 3: return {t, i, j + 1};
      default: return {t, i, j - 1};
    }
  };
  // In-plane window: the coordinate along the scan axis is fixed.
  auto window = [&](int d, Index t, Index i, Index j) {
    std::vector<std::array<Index, 3>> pts;
    for (Index a = -r; a <= r; ++a)
      for (Index b = -r; b <= r; ++b) {
        std::array<Index, 3> p{t, i, j};
        if (d == 0) p = {t, i + a, j + b};
        if (d == 1 || d == 2) p = {t + a, i, j + b};
        if (d == 3 || d == 4) p = {t + a, i + b, j};
        if (inside(p[0], p[1], p[2])) pts.push_back(p);
      }
    return pts;
  };
  auto layer_input = [&](int l, Index t, Index i, Index j) {
    if (l == 0) {
      in.push_back({0, -1, -1, t, i, j});
      return;
    }
    for (auto [src, dst] : spec.skip_pairs)
      if (dst == l) in.push_back({4, src - 1, -1, t, i, j});
    in.push_back({4, l - 1, -1, t, i, j});
  };
  switch (n.kind) {
    case 1:
      for (auto p : window(n.dir, n.t, n.i, n.j)) {
        layer_input(n.layer, p[0], p[1], p[2]);
        const auto q = prev(n.dir, p[0], p[1], p[2]);
        if (inside(q[0], q[1], q[2])) in.push_back({3, n.layer, n.dir, q[0], q[1], q[2]});
      }
      break;
    case 2: {
      in.push_back({1, n.layer, n.dir, n.t, n.i, n.j});
      const auto q = prev(n.dir, n.t, n.i, n.j);
      if (inside(q[0], q[1], q[2])) in.push_back({2, n.layer, n.dir, q[0], q[1], q[2]});
      break;
    }
    case 3:
      in.push_back({1, n.layer, n.dir, n.t, n.i, n.j});
      in.push_back({2, n.layer, n.dir, n.t, n.i, n.j});
      break;
    case 4:
      if (spec.kind == cvp::ModelKind::ContextVP)
        for (int d = 0; d < 5; ++d) in.push_back({3, n.layer, d, n.t, n.i, n.j});
      else
        in.push_back({3, n.layer, 0, n.t, n.i, n.j});
      break;
    default: break;
  }
  return in;
}

/// Input positions reachable backward from the output pixel (T-1, i, j).
inline cvp::SupportMask reachability(const cvp::ModelSpec& spec, Index i, Index j, Index T, Index H, Index W) {
  cvp::SupportMask mask(T, H, W);
  std::map<Node, bool> seen;
  std::deque<Node> queue;
  const int last = static_cast<int>(spec.layers.size()) - 1;
  auto push = [&](const Node& n) {
    if (seen.emplace(n, true).second) queue.push_back(n);
  };
  for (auto [src, dst] : spec.skip_pairs)
    if (dst == last + 1) push({4, src - 1, -1, T - 1, i, j});
  push({4, last, -1, T - 1, i, j});
  while (!queue.empty()) {
    const Node n = queue.front();
    queue.pop_front();
    if (n.kind == 0) {
      mask.set(n.t, n.i, n.j);
      continue;
    }
    for (const Node& m : node_inputs(spec, n, T, H, W)) push(m);
  }
  return mask;
}

/// Closed-form single-layer ConvLSTM support: at lag d the square of side
/// 2d + 3 around the target, clipped to the frame.
inline cvp::SupportMask convlstm_square_law(Index i, Index j, Index T, Index H, Index W, Index layers = 1) {
  cvp::SupportMask mask(T, H, W);
  for (Index t = 0; t < T; ++t) {
    const Index radius = (T - 1 - t) + layers;
    for (Index a = 0; a < H; ++a)
      for (Index b = 0; b < W; ++b)
        if (std::abs(a - i) <= radius && std::abs(b - j) <= radius) mask.set(t, a, b);
  }
  return mask;
}

}  // namespace oracle
