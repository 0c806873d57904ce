#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <vector>

#include "sproad/color.hpp"
#include "sproad/error.hpp"
#include "sproad/grid.hpp"
#include "sproad/image.hpp"
#include "sproad/io.hpp"
#include "sproad/superpixel.hpp"

namespace sproad::features {

inline constexpr int kColorChannels = 9;
inline constexpr int kPositionChannel = 9;
inline constexpr int kLbpOffset = 10;
inline constexpr int kLbpBins = 59;
inline constexpr int kDescriptorSize = kLbpOffset + kLbpBins;  // 69

// R x C x 69 lattice of superpixel descriptors.
using DescriptorLattice = Grid<double>;

// Number of 0/1 transitions around the circular 8-bit code.
constexpr int circular_transitions(std::uint8_t code) {
  const std::uint8_t rotated = static_cast<std::uint8_t>((code >> 1) | (code << 7));
  return std::popcount(static_cast<unsigned>(code ^ rotated));
}

// Uniform (u2) mapping: the 58 codes with at most two transitions take bins
// 0..57 in ascending code order, everything else shares bin 58.
inline const std::array<std::uint8_t, 256>& uniform_lbp_table() {
  static const std::array<std::uint8_t, 256> table = [] {
    std::array<std::uint8_t, 256> t{};
    std::uint8_t next = 0;
    for (int code = 0; code < 256; ++code) {
      t[code] = circular_transitions(static_cast<std::uint8_t>(code)) <= 2 ? next++ : 58;
    }
    return t;
  }();
  return table;
}

inline constexpr int kNoCode = -1;

// Radius-1 LBP bin per pixel. Bit k is set when neighbour k (clockwise from
// the top-left) is >= the centre. Border pixels carry kNoCode.
template <typename T>
Grid<int> lbp_code_map(const Grid<T>& gray) {
  const int h = gray.rows(), w = gray.cols();
  if (h < 3 || w < 3) throw DataError("lbp_code_map: image must be at least 3x3");
  static constexpr int dr[8] = {-1, -1, -1, 0, 1, 1, 1, 0};
  static constexpr int dc[8] = {-1, 0, 1, 1, 1, 0, -1, -1};
  const auto& table = uniform_lbp_table();
  Grid<int> codes(h, w, 1, kNoCode);
  for (int r = 1; r + 1 < h; ++r) {
    for (int c = 1; c + 1 < w; ++c) {
      const T centre = gray(r, c);
      unsigned code = 0;
      for (int k = 0; k < 8; ++k) {
        if (gray(r + dr[k], c + dc[k]) >= centre) code |= 1u << k;
      }
      codes(r, c) = table[code];
    }
  }
  return codes;
}

// Per superpixel: mean RGB/255, mean HSV, mean (L/100, (a+128)/255,
// (b+128)/255); centroid row / (H-1); normalized 59-bin LBP histogram over
// the superpixel's interior pixels. Empty superpixels stay all-zero.
inline DescriptorLattice build_descriptor(const Image& image, const superpixel::Segmentation& seg) {
  if (image.width != seg.width || image.height != seg.height) throw DataError("build_descriptor: dimension mismatch");
  const Grid<double> lab = imaging::rgb_to_lab(image);
  const Grid<double> hsv = imaging::rgb_to_hsv(image);
  const Grid<int> codes = lbp_code_map(imaging::luma_milli(image));
  const double row_scale = image.height > 1 ? 1.0 / (image.height - 1) : 0.0;

  DescriptorLattice lattice(seg.rows, seg.cols, kDescriptorSize, 0.0);
  for (int r = 0; r < seg.rows; ++r) {
    for (int c = 0; c < seg.cols; ++c) {
      const auto& sp = seg.at_node(r, c);
      if (sp.empty()) continue;
      auto out = lattice.cell(r, c);
      std::array<double, kColorChannels> sum{};
      std::array<double, kLbpBins> hist{};
      double interior = 0.0;
      for (int p : sp.pixels) {
        const Rgb rgb = image.pixel(p);
        for (int k = 0; k < 3; ++k) {
          sum[k] += rgb[k];
          sum[3 + k] += hsv.values()[3 * p + k];
          sum[6 + k] += lab.values()[3 * p + k];
        }
        const int code = codes.values()[p];
        if (code != kNoCode) {
          hist[code] += 1.0;
          interior += 1.0;
        }
      }
      const double n = static_cast<double>(sp.pixels.size());
      for (int k = 0; k < 3; ++k) {
        out[k] = sum[k] / n / 255.0;
        out[3 + k] = sum[3 + k] / n;
      }
      out[6] = sum[6] / n / 100.0;
      out[7] = (sum[7] / n + 128.0) / 255.0;
      out[8] = (sum[8] / n + 128.0) / 255.0;
      for (int k = 0; k < kColorChannels; ++k) out[k] = std::clamp(out[k], 0.0, 1.0);
      out[kPositionChannel] = sp.centroid_row * row_scale;
      if (interior > 0.0) {
        for (int b = 0; b < kLbpBins; ++b) out[kLbpOffset + b] = hist[b] / interior;
      }
    }
  }
  return lattice;
}

// "SPFEAT1" then R, C, depth as u32 little-endian, then float32 values.
inline void save_descriptor(const DescriptorLattice& lattice, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out{'S', 'P', 'F', 'E', 'A', 'T', '1'};
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put32(static_cast<std::uint32_t>(lattice.rows()));
  put32(static_cast<std::uint32_t>(lattice.cols()));
  put32(static_cast<std::uint32_t>(lattice.depth()));
  for (double v : lattice.values()) {
    put32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  imaging::write_file_atomic(path, out);
}

inline DescriptorLattice load_descriptor(const std::filesystem::path& path) {
  const auto bytes = imaging::read_file(path);
  if (bytes.size() < 19 || std::memcmp(bytes.data(), "SPFEAT1", 7) != 0)
    throw FormatError("'" + path.string() + "': bad SPFEAT1 magic");
  auto get32 = [&](std::size_t at) {
    return std::uint32_t{bytes[at]} | (std::uint32_t{bytes[at + 1]} << 8) | (std::uint32_t{bytes[at + 2]} << 16) |
           (std::uint32_t{bytes[at + 3]} << 24);
  };
  const std::uint32_t rows = get32(7), cols = get32(11), depth = get32(15);
  const std::size_t count = static_cast<std::size_t>(rows) * cols * depth;
  if (rows == 0 || cols == 0 || depth == 0 || bytes.size() != 19 + 4 * count)
    throw FormatError("'" + path.string() + "': truncated or oversized SPFEAT1 payload");
  DescriptorLattice lattice(static_cast<int>(rows), static_cast<int>(cols), static_cast<int>(depth));
  for (std::size_t i = 0; i < count; ++i) lattice.values()[i] = std::bit_cast<float>(get32(19 + 4 * i));
  return lattice;
}

}  // namespace sproad::features
