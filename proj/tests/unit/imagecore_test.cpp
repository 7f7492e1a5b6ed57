#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "jina/image.hpp"
#include "jina/partition.hpp"
#include "jina/png_io.hpp"
#include "jina/rng.hpp"
#include "support/fixtures.hpp"

namespace {

using jina::ArtifactMask;
using jina::Image;

Image random_image(int h, int w, int c, std::uint64_t seed) {
  jina::Rng rng(seed);
  Image img(h, w, c);
  for (double& v : img.values()) v = rng.uniform();
  return img;
}

TEST(Png, BlackAndWhite) {
  fixture::TempDir dir("png");
  jina::save_png(Image(2, 2, 3, 0.0), dir / "black.png");
  jina::save_png(Image(2, 2, 3, 1.0), dir / "white.png");
  const auto black = jina::load_png(dir / "black.png");
  const auto white = jina::load_png(dir / "white.png");
  ASSERT_EQ(black.height(), 2);
  ASSERT_EQ(black.channels(), 3);
  for (double v : black.values()) EXPECT_EQ(v, 0.0);
  for (double v : white.values()) EXPECT_EQ(v, 1.0);
}

TEST(Png, RoundTripWithinOneStep) {
  fixture::TempDir dir("png");
  for (int c : {1, 3}) {
    const Image img = random_image(17, 23, c, 5 + c);
    jina::save_png(img, dir / "x.png");
    const auto back = jina::load_png(dir / "x.png");
    ASSERT_TRUE(back.same_geometry(img));
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_LE(std::abs(back.values()[i] - img.values()[i]), 1.0 / 255);
    EXPECT_EQ(jina::detail::read_png_header(dir / "x.png").bit_depth, 8);
  }
}

TEST(Png, MissingAndCorruptFiles) {
  fixture::TempDir dir("png");
  EXPECT_THROW(jina::load_png(dir / "none.png"), jina::IoError);
  fixture::write_text(dir / "bad.png", "not a png at all");
  EXPECT_THROW(jina::load_png(dir / "bad.png"), jina::Error);
}

TEST(Image, RejectsBadShapes) {
  EXPECT_THROW(Image(0, 3, 3), jina::GeometryError);
  EXPECT_THROW(Image(2, 2, 2), jina::GeometryError);
  EXPECT_THROW(Image(2, 2, 1, std::vector<double>(3)), jina::GeometryError);
  EXPECT_THROW(Image(4, 4, 1).crop(2, 2, 3, 1), jina::GeometryError);
}

TEST(Image, LuminanceWeights) {
  Image img(1, 1, 3);
  img(0, 0, 0) = 1.0;
  EXPECT_DOUBLE_EQ(img.luminance()(0, 0), 0.299);
}

TEST(CenterCrop, DivisibleIsUnchanged) {
  const Image img = random_image(128, 128, 3, 1);
  EXPECT_EQ(jina::center_crop_to_grid(img, 64), img);
}

TEST(CenterCrop, OddRemainder) {
  const Image img = random_image(130, 70, 1, 2);
  const Image out = jina::center_crop_to_grid(img, 64);
  EXPECT_EQ(out.height(), 128);
  EXPECT_EQ(out.width(), 64);
  EXPECT_EQ(out(0, 0), img(1, 3));
  EXPECT_THROW(jina::center_crop_to_grid(img, 100), jina::GeometryError);
}

TEST(Partition, FullMaskIsIdentity) {
  const Image img = random_image(128, 192, 3, 3);
  ArtifactMask mask{64, {}};
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 3; ++c) mask.cells.insert({r, c});
  }
  EXPECT_EQ(jina::artifact_guided_partition(img, mask, 64, 9), img);
}

TEST(Partition, SingleCellIsIdentity) {
  const Image img = random_image(64, 64, 1, 4);
  EXPECT_EQ(jina::artifact_guided_partition(img, {}, 64, 9), img);
}

TEST(Partition, PreservesPixelMultiset) {
  const Image img = random_image(256, 256, 3, 5);
  bool displaced = false;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Image out = jina::artifact_guided_partition(img, {}, 64, seed);
    std::vector<double> a(img.values().begin(), img.values().end());
    std::vector<double> b(out.values().begin(), out.values().end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    displaced = displaced || out != img;
  }
  EXPECT_TRUE(displaced);
}

TEST(Partition, SwapsOnlyWithNeighbours) {
  const Image img(320, 256, 1);
  const auto grid = jina::CellGrid::of(img, 64);
  const ArtifactMask mask{64, {{1, 1}, {4, 0}}};
  const auto src = jina::neighborhood_swap_permutation(grid, mask, 77);
  for (int i = 0; i < grid.count(); ++i) {
    EXPECT_EQ(src[src[i]], i);
    const auto a = grid.coord(i), b = grid.coord(src[i]);
    EXPECT_LE(std::abs(a.row - b.row), 1);
    EXPECT_LE(std::abs(a.col - b.col), 1);
    if (mask.contains(a)) EXPECT_EQ(src[i], i);
  }
}

TEST(Partition, RejectsBadMasks) {
  const Image img(128, 128, 1);
  EXPECT_THROW(jina::artifact_guided_partition(img, {64, {{2, 0}}}, 64, 1), jina::GeometryError);
  EXPECT_THROW(jina::artifact_guided_partition(img, {32, {{0, 0}}}, 64, 1), jina::GeometryError);
  EXPECT_THROW(jina::artifact_guided_partition(Image(100, 128, 1), {}, 64, 1), jina::GeometryError);
}

TEST(Stub, ConstantImageHasNoArtifacts) {
  EXPECT_TRUE(jina::heuristic_artifact_stub(Image(128, 128, 3, 0.4), 64, 2.0).cells.empty());
}

TEST(Stub, FlagsSaltAndPepperCell) {
  Image img(128, 192, 1, 0.5);
  jina::Rng rng(8);
  for (int y = 64; y < 128; ++y) {
    for (int x = 128; x < 192; ++x) {
      if (rng.bernoulli(0.2)) img(y, x) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
  }
  const auto mask = jina::heuristic_artifact_stub(img, 64, 2.0);
  EXPECT_EQ(mask.cells, (std::set<jina::CellCoord>{{1, 2}}));
}

TEST(Mask, FileRoundTrip) {
  fixture::TempDir dir("mask");
  const ArtifactMask mask{32, {{0, 1}, {3, 2}}};
  jina::save_mask(mask, dir / "m.json");
  EXPECT_EQ(jina::load_mask(dir / "m.json"), mask);
  fixture::write_text(dir / "bad.json", R"({"patch_size": 4})");
  EXPECT_THROW(jina::load_mask(dir / "bad.json"), jina::FormatError);
}

TEST(Rng, DeterministicStreams) {
  jina::Rng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next(), b.next());
  EXPECT_NE(jina::Rng(42).next(), c.next());
  jina::Rng r(1);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(r.below(7), 7u);
}

}  // namespace
