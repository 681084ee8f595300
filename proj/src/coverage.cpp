#include "contextvp/coverage.hpp"

#include <cstdio>
#include <sstream>

#include "contextvp/io.hpp"
#include "contextvp/random.hpp"

namespace cvp {

Index SupportMask::count() const {
  Index n = 0;
  for (auto b : bits_) n += b;
  return n;
}

Index SupportMask::count_frame(Index t) const {
  Index n = 0;
  for (Index i = 0; i < h_; ++i)
    for (Index j = 0; j < w_; ++j) n += (*this)(t, i, j) ? 1 : 0;
  return n;
}

void SupportMask::require_same_extents(const SupportMask& other) const {
  if (t_ != other.t_ || h_ != other.h_ || w_ != other.w_) throw ShapeError("support masks have different extents");
}

SupportMask& SupportMask::operator|=(const SupportMask& other) {
  require_same_extents(other);
  for (std::size_t k = 0; k < bits_.size(); ++k) bits_[k] |= other.bits_[k];
  return *this;
}

bool SupportMask::subset_of(const SupportMask& other) const {
  require_same_extents(other);
  for (std::size_t k = 0; k < bits_.size(); ++k)
    if (bits_[k] && !other.bits_[k]) return false;
  return true;
}

std::vector<std::array<Index, 3>> SupportMask::difference(const SupportMask& other) const {
  require_same_extents(other);
  std::vector<std::array<Index, 3>> out;
  for (Index t = 0; t < t_; ++t)
    for (Index i = 0; i < h_; ++i)
      for (Index j = 0; j < w_; ++j)
        if ((*this)(t, i, j) && !other(t, i, j)) out.push_back({t, i, j});
  return out;
}

std::string describe(const ModelSpec& spec) {
  std::string s = to_string(spec.kind) + " " + std::to_string(spec.layers.size()) + "x[";
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    if (l) s += ",";
    s += std::to_string(spec.layers[l].hidden);
  }
  s += "] k" + std::to_string(spec.kernel);
  if (spec.kind == ModelKind::ContextVP) s += " " + to_string(spec.blend_mode) + (spec.dws ? " dws" : "");
  return s;
}

// ---------------------------------------------------------------------------

namespace {

// Index helpers mapping (plane, p, q) of a scan along `axis` to (t, i, j).
struct ScanGeometry {
  int axis;
  bool increasing;
  Index extent[3];

  Index planes() const { return extent[axis]; }
  Index p_extent() const { return extent[axis == 0 ? 1 : 0]; }
  Index q_extent() const { return extent[axis == 2 ? 1 : 2]; }
  std::array<Index, 3> at(Index plane, Index p, Index q) const {
    switch (axis) {
      case 0: return {plane, p, q};
      case 1: return {p, plane, q};
      default: return {p, q, plane};
    }
  }
  Index plane_at_step(Index step) const { return increasing ? step : planes() - 1 - step; }
};

ScanGeometry geometry(Direction d, const SupportMask& m) {
  const Index ext[3] = {m.frames(), m.height(), m.width()};
  switch (d) {
    case Direction::TMinus: return {0, true, {ext[0], ext[1], ext[2]}};
    case Direction::HMinus: return {1, false, {ext[0], ext[1], ext[2]}};
    case Direction::HPlus: return {1, true, {ext[0], ext[1], ext[2]}};
    case Direction::WMinus: return {2, false, {ext[0], ext[1], ext[2]}};
    case Direction::WPlus: return {2, true, {ext[0], ext[1], ext[2]}};
  }
  return {0, true, {ext[0], ext[1], ext[2]}};
}

using Plane = std::vector<std::uint8_t>;

Plane dilate(const Plane& in, Index pe, Index qe, Index radius) {
  Plane out(in.size(), 0);
  for (Index p = 0; p < pe; ++p)
    for (Index q = 0; q < qe; ++q) {
      if (!in[static_cast<std::size_t>(p * qe + q)]) continue;
      for (Index a = std::max<Index>(0, p - radius); a <= std::min(pe - 1, p + radius); ++a)
        for (Index b = std::max<Index>(0, q - radius); b <= std::min(qe - 1, q + radius); ++b)
          out[static_cast<std::size_t>(a * qe + b)] = 1;
    }
  return out;
}

// Backward reachability through one recurrent scan: hidden states needed at
// `needed` -> input positions the scan reads.
SupportMask scan_backward(const SupportMask& needed, Direction d, Index kernel) {
  const ScanGeometry g = geometry(d, needed);
  const Index n = g.planes(), pe = g.p_extent(), qe = g.q_extent();
  const Index radius = kernel / 2;
  const auto plane_size = static_cast<std::size_t>(pe * qe);
  SupportMask input(needed.frames(), needed.height(), needed.width());

  Plane need_s(plane_size, 0), need_c(plane_size, 0);
  for (Index step = n - 1; step >= 0; --step) {
    const Index k = g.plane_at_step(step);
    // Output demand plus whatever the later step required of this one.
    for (Index p = 0; p < pe; ++p)
      for (Index q = 0; q < qe; ++q) {
        const auto [t, i, j] = g.at(k, p, q);
        if (needed(t, i, j)) need_s[static_cast<std::size_t>(p * qe + q)] = 1;
      }
    // s_k needs c_k and the gates at the same position; c_k needs the gates
    // and c_{k-1}. Gates read a (2r+1)^2 window of x_k and s_{k-1}.
    Plane reach(plane_size, 0);
    for (std::size_t u = 0; u < plane_size; ++u) reach[u] = need_s[u] | need_c[u];
    const Plane window = dilate(reach, pe, qe, radius);
    for (Index p = 0; p < pe; ++p)
      for (Index q = 0; q < qe; ++q)
        if (window[static_cast<std::size_t>(p * qe + q)]) {
          const auto [t, i, j] = g.at(k, p, q);
          input.set(t, i, j);
        }
    need_s = window;
    need_c = reach;
  }
  return input;
}

}  // namespace

SupportMask mask_propagate(const ModelSpec& spec, Pixel target, Index frames, Index height, Index width) {
  spec.validate();
  if (frames < 1 || height < 1 || width < 1) throw ConfigError("mask_propagate needs positive T, H, W");
  if (target.i < 0 || target.i >= height || target.j < 0 || target.j >= width)
    throw ConfigError("target (" + std::to_string(target.i) + "," + std::to_string(target.j) + ") outside " +
                      std::to_string(height) + "x" + std::to_string(width) + " frame");
  const std::size_t n_layers = spec.layers.size();
  std::vector<SupportMask> need_out(n_layers, SupportMask(frames, height, width));

  // The stage after layer d is concat(skip sources into d, out_d); demand on
  // the stage is demand on each part.
  auto demand_stage = [&](std::size_t d, const SupportMask& m) {
    need_out[d] |= m;
    for (auto [src, dst] : spec.skip_pairs)
      if (static_cast<std::size_t>(dst) == d + 1) need_out[static_cast<std::size_t>(src - 1)] |= m;
  };

  SupportMask head(frames, height, width);
  head.set(frames - 1, target.i, target.j);
  demand_stage(n_layers - 1, head);

  SupportMask input(frames, height, width);
  for (std::size_t l = n_layers; l-- > 0;) {
    SupportMask reads(frames, height, width);
    if (spec.kind == ModelKind::ContextVP) {
      for (Direction d : kDirections) reads |= scan_backward(need_out[l], d, spec.kernel);
    } else {
      reads = scan_backward(need_out[l], Direction::TMinus, spec.kernel);
    }
    if (l == 0)
      input = reads;
    else
      demand_stage(l - 1, reads);
  }
  input.arch = describe(spec);
  return input;
}

SupportMask gradient_support(const Model& model, const Tensor& frames, Pixel target, double threshold) {
  if (frames.rank() != 4) throw ShapeError("gradient_support expects [T,H,W,C], got " + frames.shape().str());
  const Index t = frames.dim(0), h = frames.dim(1), w = frames.dim(2), c = frames.dim(3);
  if (target.i < 0 || target.i >= h || target.j < 0 || target.j >= w)
    throw ConfigError("target outside the frame");
  SupportMask mask(t, h, w);
  mask.arch = describe(model.spec());
  for (Index oc = 0; oc < model.spec().channels; ++oc) {
    Tape tape;
    Var x = tape.variable(frames.reshaped(frames.shape().with_inserted(0, 1)));
    Var out = forward(model, x);
    Var pixel = take(take(take(take(out, 3, oc), 2, target.j), 1, target.i), 0, 0);
    tape.backward(pixel);
    const Tensor g = tape.grad(x);
    for (Index a = 0; a < t; ++a)
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j)
          for (Index ch = 0; ch < c; ++ch)
            if (std::abs(g(0, a, i, j, ch)) > threshold) mask.set(a, i, j);
  }
  return mask;
}

SupportMask empirical_support(const ModelSpec& spec, Pixel target, Index frames, Index height, Index width,
                              const std::vector<std::uint64_t>& seeds, double threshold) {
  SupportMask mask(frames, height, width);
  mask.arch = describe(spec);
  for (std::uint64_t seed : seeds) {
    const Model model = build(spec, seed);
    SplitMix64 rng(seed ^ 0x5eedf00dULL);
    Tensor x(Shape{frames, height, width, spec.channels});
    for (Index k = 0; k < x.size(); ++k) x.data()[k] = rng.uniform();
    mask |= gradient_support(model, x, target, threshold);
  }
  return mask;
}

// ---------------------------------------------------------------------------

BlindSpotReport blind_spot_report(const SupportMask& mask, Pixel target) {
  BlindSpotReport r;
  r.arch = mask.arch;
  r.frames = mask.frames();
  r.height = mask.height();
  r.width = mask.width();
  r.target = target;
  r.mask = mask;
  const double area = static_cast<double>(r.height * r.width);
  for (Index lag = 0; lag < r.frames; ++lag) {
    LagCoverage row;
    row.lag = lag;
    row.covered = mask.count_frame(r.frames - 1 - lag);
    row.covered_fraction = static_cast<double>(row.covered) / area;
    row.blind_fraction = 1.0 - row.covered_fraction;
    r.lags.push_back(row);
  }
  return r;
}

BlindSpotReport blind_spot_report(const ModelSpec& spec, Pixel target, Index frames, Index height, Index width) {
  return blind_spot_report(mask_propagate(spec, target, frames, height, width), target);
}

std::string BlindSpotReport::to_text() const {
  std::ostringstream os;
  os << "arch: " << arch << "\n";
  os << "frame: " << height << "x" << width << ", T = " << frames << ", target (" << target.i << "," << target.j
     << ")\n";
  os << "  lag  frame  covered   covered_frac  blind_frac\n";
  char line[96];
  for (const auto& row : lags) {
    std::snprintf(line, sizeof line, "  %3lld  %5lld  %7lld   %12.6f  %10.6f\n", static_cast<long long>(row.lag),
                  static_cast<long long>(frames - 1 - row.lag), static_cast<long long>(row.covered),
                  row.covered_fraction, row.blind_fraction);
    os << line;
  }
  const double total = static_cast<double>(mask.count()) / static_cast<double>(frames * height * width);
  std::snprintf(line, sizeof line, "  total covered fraction %.6f\n", total);
  os << line;
  return os.str();
}

nlohmann::json BlindSpotReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : lags)
    rows.push_back({{"lag", row.lag},
                    {"covered", row.covered},
                    {"covered_fraction", row.covered_fraction},
                    {"blind_fraction", row.blind_fraction}});
  return {{"arch", arch},   {"frames", frames}, {"height", height},         {"width", width},
          {"target", {target.i, target.j}}, {"lags", rows}, {"covered_total", mask.count()}};
}

std::vector<std::filesystem::path> BlindSpotReport::write_heatmaps(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (const auto& row : lags) {
    Tensor img(Shape{height, width, 1});
    const Index t = frames - 1 - row.lag;
    for (Index i = 0; i < height; ++i)
      for (Index j = 0; j < width; ++j) img(i, j, 0) = mask(t, i, j) ? 1.0 : 0.0;
    char name[32];
    std::snprintf(name, sizeof name, "lag_%02lld.pgm", static_cast<long long>(row.lag));
    paths.push_back(dir / name);
    write_pnm(paths.back(), img);
  }
  return paths;
}

}  // namespace cvp
