#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "contextvp/coverage.hpp"
#include "oracles.hpp"

using namespace cvp;

namespace {

ModelSpec convlstm(std::size_t layers, Index width = 2) { return ModelSpec::convlstm_baseline(layers, width); }

ModelSpec contextvp(std::size_t layers, Index width = 2) {
  return ModelSpec::contextvp(std::vector<Index>(layers, width));
}

}  // namespace

TEST_CASE("support mask operations") {
  SupportMask a(2, 3, 4), b(2, 3, 4);
  a.set(0, 1, 2);
  b.set(0, 1, 2);
  b.set(1, 2, 3);
  CHECK(a.count() == 1);
  CHECK(a.subset_of(b));
  CHECK_FALSE(b.subset_of(a));
  CHECK(b.difference(a) == std::vector<std::array<Index, 3>>{{1, 2, 3}});
  a |= b;
  CHECK(a == b);
  CHECK(b.count_frame(1) == 1);
  CHECK_FALSE(b.full());
  CHECK_THROWS_AS(a |= SupportMask(2, 3, 5), ShapeError);
}

TEST_CASE("mask_propagate equals brute-force reachability") {
  ModelSpec wide_kernel = convlstm(2);
  wide_kernel.kernel = 5;
  ModelSpec custom_skips = contextvp(3);
  custom_skips.skip_pairs = {{1, 3}};
  ModelSpec ctx_k1 = contextvp(1);
  ctx_k1.kernel = 1;
  const std::vector<ModelSpec> specs = {convlstm(1), convlstm(2), convlstm(3), convlstm(4), wide_kernel,
                                        contextvp(1), contextvp(2), custom_skips, contextvp(4), ctx_k1};
  const Index t = 4, h = 6, w = 7;
  for (const auto& spec : specs) {
    INFO(describe(spec));
    for (Pixel p : {Pixel{0, 0}, Pixel{2, 3}, Pixel{5, 6}, Pixel{1, 5}}) {
      INFO(p.i << "," << p.j);
      CHECK(mask_propagate(spec, p, t, h, w) == oracle::reachability(spec, p.i, p.j, t, h, w));
    }
  }
}

TEST_CASE("ConvLSTM support is the clipped 2*lag+3 square") {
  const Index t = 6, h = 16, w = 16;
  const SupportMask m = mask_propagate(convlstm(1), {8, 8}, t, h, w);
  CHECK(m == oracle::convlstm_square_law(8, 8, t, h, w));
  CHECK(m == oracle::reachability(convlstm(1), 8, 8, t, h, w));
  for (Index lag = 0; lag < t; ++lag) {
    const Index side = std::min<Index>(2 * lag + 3, 16);
    INFO("lag " << lag);
    if (2 * lag + 3 <= 16) CHECK(m.count_frame(t - 1 - lag) == side * side);
  }
  // Corner targets clip.
  CHECK(mask_propagate(convlstm(1), {0, 0}, t, h, w) == oracle::convlstm_square_law(0, 0, t, h, w));
}

TEST_CASE("recent frames have larger blind areas") {
  const Index t = 6;
  const SupportMask m = mask_propagate(convlstm(1), {8, 8}, t, 16, 16);
  for (Index lag = 1; lag < t; ++lag) CHECK(m.count_frame(t - 1 - lag) > m.count_frame(t - lag));
}

TEST_CASE("a single input frame reaches only the kernel window") {
  const SupportMask m = mask_propagate(convlstm(1), {3, 3}, 1, 8, 8);
  CHECK(m.count() == 9);
  for (Index i = 2; i <= 4; ++i)
    for (Index j = 2; j <= 4; ++j) CHECK(m(0, i, j));
}

TEST_CASE("stacked ConvLSTM support grows with depth") {
  const Index t = 5, h = 24, w = 24;
  SupportMask prev;
  for (Index depth = 1; depth <= 3; ++depth) {
    INFO("depth " << depth);
    const SupportMask m = mask_propagate(convlstm(static_cast<std::size_t>(depth)), {12, 12}, t, h, w);
    // Each layer adds one kernel radius at every lag: side 2 (lag + depth) + 1.
    CHECK(m == oracle::convlstm_square_law(12, 12, t, h, w, depth));
    if (depth > 1) {
      CHECK(prev.subset_of(m));
      CHECK(prev.count() < m.count());
    }
    prev = m;
  }
}

TEST_CASE("one context layer covers the whole past cuboid") {
  for (Index h = 1; h <= 8; ++h)
    for (Index w = 1; w <= 8; ++w)
      for (Index t = 1; t <= 6; ++t)
        for (Index i = 0; i < h; ++i)
          for (Index j = 0; j < w; ++j) {
            const SupportMask m = mask_propagate(contextvp(1), {i, j}, t, h, w);
            if (!m.full()) {
              FAIL_CHECK("not full: " << h << "x" << w << "x" << t << " at " << i << "," << j);
              return;
            }
          }
}

TEST_CASE("directional masks: the blended mask is their union") {
  // A t- only stack is the ConvLSTM case; adding the other scans only grows the mask.
  const SupportMask local = mask_propagate(convlstm(1), {3, 3}, 4, 7, 7);
  const SupportMask blended = mask_propagate(contextvp(1), {3, 3}, 4, 7, 7);
  CHECK(local.subset_of(blended));
  CHECK(blended.full());
}

TEST_CASE("gradient support lies inside the exact mask") {
  for (const auto& spec : {convlstm(1), convlstm(2), contextvp(1)}) {
    INFO(describe(spec));
    const Model m = build(spec, 3);
    const Tensor frames = oracle::random_tensor(Shape{4, 9, 9, 1}, 4, 0, 1);
    for (Pixel p : {Pixel{4, 4}, Pixel{0, 8}}) {
      const SupportMask g = gradient_support(m, frames, p);
      CHECK(g.subset_of(mask_propagate(spec, p, 4, 9, 9)));
      CHECK(g.count() > 0);
    }
  }
}

TEST_CASE("empirical support matches the exact mask") {
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const SupportMask conv = empirical_support(convlstm(1), {8, 8}, 6, 16, 16, seeds);
  CHECK(conv == mask_propagate(convlstm(1), {8, 8}, 6, 16, 16));
  const SupportMask ctx = empirical_support(contextvp(1, 4), {4, 4}, 5, 8, 8, seeds);
  CHECK(ctx.full());
}

TEST_CASE("blind spot report") {
  const BlindSpotReport conv = blind_spot_report(convlstm(1), {16, 16}, 10, 32, 32);
  REQUIRE(conv.lags.size() == 10);
  CHECK(conv.lags[0].lag == 0);
  CHECK(conv.lags[0].covered == 9);
  CHECK(conv.lags[1].covered_fraction == doctest::Approx(25.0 / 1024.0).epsilon(1e-15));
  CHECK(conv.lags[1].blind_fraction == doctest::Approx(1.0 - 25.0 / 1024.0).epsilon(1e-15));
  const BlindSpotReport ctx = blind_spot_report(contextvp(1), {16, 16}, 10, 32, 32);
  for (const auto& l : ctx.lags) CHECK(l.covered_fraction == 1.0);

  const std::string text = conv.to_text();
  CHECK(text.find("lag") != std::string::npos);
  CHECK(text.find("0.0244") != std::string::npos);
  const auto j = conv.to_json();
  CHECK(j.at("lags").size() == 10);
  CHECK(j.at("lags")[1].at("covered").get<Index>() == 25);

  const auto dir = std::filesystem::temp_directory_path() / "contextvp_test_heatmaps";
  std::filesystem::remove_all(dir);
  const auto paths = conv.write_heatmaps(dir);
  REQUIRE(paths.size() == 10);
  CHECK(paths[1].filename() == "lag_01.pgm");
  std::ifstream in(paths[1], std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "P5\n32 32\n255\n";
  REQUIRE(bytes.size() == header.size() + 1024);
  CHECK(bytes.substr(0, header.size()) == header);
  Index lit = 0;
  for (std::size_t k = header.size(); k < bytes.size(); ++k) lit += static_cast<unsigned char>(bytes[k]) == 255;
  CHECK(lit == 25);
  std::filesystem::remove_all(dir);
}
