#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sproad/features.hpp"
#include "support.hpp"

using namespace sproad;
using namespace sproad::features;

namespace {

superpixel::SlicParams lattice(int rows, int cols) {
  superpixel::SlicParams p;
  p.rows = rows;
  p.cols = cols;
  return p;
}

// Independent u2 table: count bit flips between neighbouring positions.
std::array<int, 256> enumerate_uniform_bins() {
  std::array<int, 256> bins{};
  int next = 0;
  for (int code = 0; code < 256; ++code) {
    int flips = 0;
    for (int k = 0; k < 8; ++k) flips += ((code >> k) & 1) != ((code >> ((k + 1) % 8)) & 1);
    bins[code] = flips <= 2 ? next++ : -1;
  }
  for (auto& b : bins)
    if (b < 0) b = next;
  return bins;
}

Grid<int> gray_patch(std::initializer_list<int> values, int rows, int cols) {
  Grid<int> g(rows, cols, 1);
  std::copy(values.begin(), values.end(), g.values().begin());
  return g;
}

}  // namespace

TEST(LbpTable, MatchesIndependentEnumeration) {
  const auto oracle = enumerate_uniform_bins();
  const auto& table = uniform_lbp_table();
  for (int code = 0; code < 256; ++code) EXPECT_EQ(table[code], oracle[code]) << "code " << code;
  EXPECT_EQ(std::count_if(oracle.begin(), oracle.end(), [](int b) { return b < 58; }), 58);
}

TEST(LbpCodes, ConstantImageIsBin57) {
  const auto codes = lbp_code_map(Grid<int>(5, 6, 1, 42));
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 6; ++c) {
      const bool interior = r > 0 && r < 4 && c > 0 && c < 5;
      EXPECT_EQ(codes(r, c), interior ? 57 : kNoCode);
    }
}

TEST(LbpCodes, SingleBrighterNeighbourIsBin1) {
  // Clockwise from the top-left: 101, then 99 everywhere else.
  const auto codes = lbp_code_map(gray_patch({101, 99, 99, 99, 100, 99, 99, 99, 99}, 3, 3));
  EXPECT_EQ(codes(1, 1), enumerate_uniform_bins()[1]);
  EXPECT_EQ(codes(1, 1), 1);
}

TEST(LbpCodes, AlternatingPatternIsNonUniform) {
  // Bits 0,2,4,6 set: top-left, top-right, bottom-right, bottom-left.
  const auto codes = lbp_code_map(gray_patch({200, 0, 200, 0, 100, 0, 200, 0, 200}, 3, 3));
  EXPECT_EQ(codes(1, 1), 58);
  EXPECT_EQ(uniform_lbp_table()[0b01010101], 58);
}

TEST(LbpCodes, RejectsTinyImages) {
  EXPECT_THROW(lbp_code_map(Grid<int>(2, 5, 1)), DataError);
  EXPECT_THROW(lbp_code_map(Grid<int>(5, 2, 1)), DataError);
}

TEST(Descriptor, PureWhiteImage) {
  const Image img(30, 20, {255, 255, 255});
  const auto seg = superpixel::segment(img, lattice(2, 3));
  const auto d = build_descriptor(img, seg);
  ASSERT_EQ(d.depth(), 69);
  const double expected[9] = {1, 1, 1, 0, 0, 1, 1, 128.0 / 255.0, 128.0 / 255.0};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < 9; ++k) EXPECT_NEAR(d(r, c, k), expected[k], 1e-3) << k;
      for (int b = 0; b < kLbpBins; ++b) EXPECT_EQ(d(r, c, kLbpOffset + b), b == 57 ? 1.0 : 0.0);
    }
}

TEST(Descriptor, TopRowSuperpixelHasNoInteriorPixels) {
  Grid<int> raw(6, 8, 1, 1);
  for (int c = 0; c < 8; ++c) raw(0, c) = 0;
  auto seg = superpixel::merge_components(raw, 1, 2);
  seg.node_of = superpixel::lattice_projection(seg);
  const auto img = testkit::random_image(8, 6, 5);
  const auto d = build_descriptor(img, seg);
  EXPECT_EQ(d(0, 0, kPositionChannel), 0.0);
  for (int b = 0; b < kLbpBins; ++b) EXPECT_EQ(d(0, 0, kLbpOffset + b), 0.0);
  double sum = 0.0;
  for (int b = 0; b < kLbpBins; ++b) sum += d(0, 1, kLbpOffset + b);
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(Descriptor, ColourMeansMatchBruteForce) {
  const auto img = testkit::random_image(40, 40, 21);
  const auto seg = superpixel::segment(img, lattice(2, 2));
  const auto d = build_descriptor(img, seg);
  for (int node = 0; node < 4; ++node) {
    const auto& sp = seg.superpixels[seg.node_of[node]];
    ASSERT_FALSE(sp.empty());
    double acc[9] = {};
    for (int p : sp.pixels) {
      const Rgb rgb = img.pixel(p);
      const auto hsv = imaging::rgb_to_hsv(rgb);
      const auto lab = imaging::rgb_to_lab(rgb);
      for (int k = 0; k < 3; ++k) {
        acc[k] += rgb[k] / 255.0;
        acc[3 + k] += hsv[k];
      }
      acc[6] += lab[0] / 100.0;
      acc[7] += (lab[1] + 128.0) / 255.0;
      acc[8] += (lab[2] + 128.0) / 255.0;
    }
    for (int k = 0; k < 9; ++k) EXPECT_NEAR(d(node / 2, node % 2, k), acc[k] / sp.pixels.size(), 1e-9) << k;
  }
}

TEST(Descriptor, EmptySuperpixelIsAllZero) {
  Grid<int> raw(5, 6, 1, 0);
  for (int r = 0; r < 5; ++r)
    for (int c = 3; c < 6; ++c) raw(r, c) = 2;
  auto seg = superpixel::merge_components(raw, 1, 3);
  seg.node_of = superpixel::lattice_projection(seg);
  const auto d = build_descriptor(testkit::random_image(6, 5, 1), seg);
  for (int k = 0; k < kDescriptorSize; ++k) EXPECT_EQ(d(0, 1, k), 0.0);
}

TEST(Descriptor, RangesAndHistogramSums) {
  for (std::uint64_t s = 1; s <= 3; ++s) {
    const auto img = testkit::random_image(64, 48, s);
    const auto seg = superpixel::segment(img, lattice(3, 4));
    const auto d = build_descriptor(img, seg);
    ASSERT_EQ(d.rows(), 3);
    ASSERT_EQ(d.cols(), 4);
    ASSERT_EQ(d.depth(), 69);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) {
        double sum = 0.0;
        for (int k = 0; k < 69; ++k) {
          EXPECT_GE(d(r, c, k), 0.0);
          EXPECT_LE(d(r, c, k), 1.0);
          if (k >= kLbpOffset) sum += d(r, c, k);
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
      }
  }
}

TEST(Descriptor, BrightnessShiftKeepsLbp) {
  std::mt19937_64 rng(4);
  Image dark(48, 36);
  for (auto& v : dark.data) v = static_cast<std::uint8_t>(rng() % 200);
  Image bright = dark;
  for (auto& v : bright.data) v = static_cast<std::uint8_t>(v + 10);
  const auto seg = superpixel::segment(dark, lattice(3, 3));
  const auto a = build_descriptor(dark, seg);
  const auto b = build_descriptor(bright, seg);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      for (int k = kLbpOffset; k < kDescriptorSize; ++k) EXPECT_EQ(a(r, c, k), b(r, c, k));
}

TEST(Descriptor, PermutedNodeMapPermutesLattice) {
  const auto img = testkit::random_image(60, 40, 8);
  const auto seg = superpixel::segment(img, lattice(2, 3));
  auto permuted = seg;
  const std::vector<int> perm = {4, 0, 5, 1, 3, 2};
  permuted.node_of = perm;
  const auto a = build_descriptor(img, seg);
  const auto b = build_descriptor(img, permuted);
  for (int node = 0; node < 6; ++node)
    for (int k = 0; k < kDescriptorSize; ++k)
      EXPECT_EQ(b(node / 3, node % 3, k), a(perm[node] / 3, perm[node] % 3, k));
}

TEST(Descriptor, RejectsDimensionMismatch) {
  const auto seg = superpixel::segment(testkit::random_image(20, 20, 1), lattice(2, 2));
  EXPECT_THROW(build_descriptor(testkit::random_image(21, 20, 1), seg), DataError);
}

TEST(DescriptorFile, RoundTripAtSinglePrecision) {
  testkit::TempDir dir;
  const auto img = testkit::random_image(30, 30, 2);
  const auto d = build_descriptor(img, superpixel::segment(img, lattice(2, 2)));
  save_descriptor(d, dir / "f.bin");
  const auto back = load_descriptor(dir / "f.bin");
  ASSERT_TRUE(back.same_shape(d));
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(back.values()[i], static_cast<double>(static_cast<float>(d.values()[i])));
  const auto bytes = imaging::read_file(dir / "f.bin");
  EXPECT_EQ(bytes.size(), 19 + 4 * d.size());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 7), "SPFEAT1");
}

TEST(DescriptorFile, BadMagicAndTruncation) {
  testkit::TempDir dir;
  const auto img = testkit::random_image(30, 30, 2);
  const auto d = build_descriptor(img, superpixel::segment(img, lattice(2, 2)));
  save_descriptor(d, dir / "f.bin");
  auto bytes = imaging::read_file(dir / "f.bin");
  auto broken = bytes;
  broken[0] = 'X';
  imaging::write_file_atomic(dir / "magic.bin", broken);
  EXPECT_THROW(load_descriptor(dir / "magic.bin"), FormatError);
  bytes.resize(bytes.size() - 3);
  imaging::write_file_atomic(dir / "short.bin", bytes);
  EXPECT_THROW(load_descriptor(dir / "short.bin"), FormatError);
}
