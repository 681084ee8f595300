#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contextvp/model.hpp"

namespace cvp {

/// Boolean [T, H, W] cuboid of input positions that can influence one
/// output pixel. Frame t = T - 1 is the most recent input (lag 0).
class SupportMask {
 public:
  SupportMask() = default;
  SupportMask(Index frames, Index height, Index width)
      : t_(frames), h_(height), w_(width), bits_(static_cast<std::size_t>(frames * height * width), 0) {}

  Index frames() const { return t_; }
  Index height() const { return h_; }
  Index width() const { return w_; }

  bool operator()(Index t, Index i, Index j) const { return bits_[offset(t, i, j)] != 0; }
  void set(Index t, Index i, Index j, bool v = true) { bits_[offset(t, i, j)] = v ? 1 : 0; }

  Index count() const;
  Index count_frame(Index t) const;
  bool full() const { return count() == t_ * h_ * w_; }

  /// Union with a mask of the same extents.
  SupportMask& operator|=(const SupportMask& other);
  bool subset_of(const SupportMask& other) const;
  /// Compares extents and bits; `arch` is ignored.
  friend bool operator==(const SupportMask& a, const SupportMask& b) {
    return a.t_ == b.t_ && a.h_ == b.h_ && a.w_ == b.w_ && a.bits_ == b.bits_;
  }

  /// Positions in `this` but not in `other`.
  std::vector<std::array<Index, 3>> difference(const SupportMask& other) const;

  /// Description of the architecture the mask was computed for.
  std::string arch;

 private:
  std::size_t offset(Index t, Index i, Index j) const {
    return static_cast<std::size_t>((t * h_ + i) * w_ + j);
  }
  void require_same_extents(const SupportMask& other) const;

  Index t_ = 0, h_ = 0, w_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct Pixel {
  Index i = 0;  // row
  Index j = 0;  // column
};

/// Exact dependency propagation through the spec's connectivity: kernel
/// radius per recurrent step, plane order per scan direction, skip
/// concatenations and the 1x1 head at frame T - 1. Assumes generic weights
/// (every connection present).
SupportMask mask_propagate(const ModelSpec& spec, Pixel target, Index frames, Index height, Index width);

/// Input positions whose gradient magnitude w.r.t. output(target) exceeds
/// `threshold` for any input and output channel. `frames` is [T, H, W, C].
SupportMask gradient_support(const Model& model, const Tensor& frames, Pixel target, double threshold = 1e-12);

/// Union of gradient_support over models built from `seeds`, each fed
/// uniform random frames drawn from the same seed.
SupportMask empirical_support(const ModelSpec& spec, Pixel target, Index frames, Index height, Index width,
                              const std::vector<std::uint64_t>& seeds, double threshold = 1e-12);

struct LagCoverage {
  Index lag = 0;      // T - 1 - t
  Index covered = 0;  // |support| in that frame
  double covered_fraction = 0.0;
  double blind_fraction = 0.0;
};

struct BlindSpotReport {
  std::string arch;
  Index frames = 0, height = 0, width = 0;
  Pixel target;
  std::vector<LagCoverage> lags;  // lag 0 first
  SupportMask mask;

  std::string to_text() const;
  nlohmann::json to_json() const;
  /// One binary PGM per lag (`lag_<NN>.pgm`, 255 = covered), returns paths.
  std::vector<std::filesystem::path> write_heatmaps(const std::filesystem::path& dir) const;
};

BlindSpotReport blind_spot_report(const SupportMask& mask, Pixel target);
BlindSpotReport blind_spot_report(const ModelSpec& spec, Pixel target, Index frames, Index height, Index width);

/// Short human-readable architecture label, e.g. "contextvp 1x[8] weighted dws".
std::string describe(const ModelSpec& spec);

}  // namespace cvp
