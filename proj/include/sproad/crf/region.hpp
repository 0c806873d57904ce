#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "sproad/error.hpp"
#include "sproad/image.hpp"
#include "sproad/superpixel.hpp"

namespace sproad::crf {

inline constexpr int kNonRoad = 0;
inline constexpr int kRoad = 1;
inline constexpr int kNone = -1;

// Neighbour slots: right, left, up, down. The opposite slot is d ^ 1.
inline constexpr int kDirRow[4] = {0, 0, -1, 1};
inline constexpr int kDirCol[4] = {1, -1, 0, 0};

struct RegionPixel {
  int row = 0;
  int col = 0;
  std::array<double, 3> rgb{};        // in [0,1]
  std::array<std::uint8_t, 3> rgb8{};  // original 8-bit values
  int superpixel = 0;
  int initial = kNonRoad;
  double road_prob = 0.0;
};

// Pixels of the boundary superpixels in row-major order with their 4-grid
// adjacency. A slot points at another region pixel, or carries the fixed
// class of an image pixel outside the region, or neither at the image border.
struct RefinementRegion {
  int width = 0;
  int height = 0;
  std::vector<RegionPixel> pixels;
  std::vector<std::array<int, 4>> neighbors;
  std::vector<std::array<int, 4>> external;
  int min_row = 0, max_row = -1, min_col = 0, max_col = -1;

  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }
};

// Per region pixel, cost of {non-road, road}.
using UnaryTable = std::vector<std::array<double, 2>>;

// Region labels, one per region pixel.
using Labeling = std::vector<int>;

// Wires up adjacency for an arbitrary pixel set. `outside_class(row, col)`
// gives the fixed class of image pixels that are not in the set.
inline RefinementRegion build_region(int width, int height, std::vector<RegionPixel> pixels,
                                     const std::function<int(int, int)>& outside_class) {
  std::sort(pixels.begin(), pixels.end(),
            [](const RegionPixel& a, const RegionPixel& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
  RefinementRegion region;
  region.width = width;
  region.height = height;
  std::vector<int> index(static_cast<std::size_t>(width) * height, kNone);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const auto& p = pixels[i];
    if (p.row < 0 || p.row >= height || p.col < 0 || p.col >= width) throw DataError("region pixel outside the image");
    int& slot = index[static_cast<std::size_t>(p.row) * width + p.col];
    if (slot != kNone) throw DataError("duplicate region pixel");
    slot = static_cast<int>(i);
    region.min_row = i == 0 ? p.row : std::min(region.min_row, p.row);
    region.max_row = std::max(region.max_row, p.row);
    region.min_col = i == 0 ? p.col : std::min(region.min_col, p.col);
    region.max_col = std::max(region.max_col, p.col);
  }
  region.neighbors.assign(pixels.size(), {kNone, kNone, kNone, kNone});
  region.external.assign(pixels.size(), {kNone, kNone, kNone, kNone});
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    for (int d = 0; d < 4; ++d) {
      const int r = pixels[i].row + kDirRow[d], c = pixels[i].col + kDirCol[d];
      if (r < 0 || r >= height || c < 0 || c >= width) continue;
      const int j = index[static_cast<std::size_t>(r) * width + c];
      if (j != kNone) {
        region.neighbors[i][d] = j;
      } else {
        region.external[i][d] = outside_class(r, c);
      }
    }
  }
  region.pixels = std::move(pixels);
  return region;
}

// A full rows x cols rectangle with black pixels and the given initial
// classes; handy for exercising the engines in isolation.
inline RefinementRegion rect_region(int rows, int cols, const Labeling& initial = {}) {
  std::vector<RegionPixel> pixels;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      RegionPixel p;
      p.row = r;
      p.col = c;
      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
      p.initial = i < initial.size() ? initial[i] : kNonRoad;
      p.road_prob = p.initial == kRoad ? 1.0 : 0.0;
      pixels.push_back(p);
    }
  }
  return build_region(cols, rows, std::move(pixels), [](int, int) { return kNone; });
}

// Unlabeled collapses to non-road.
inline std::vector<int> binary_classes(const std::vector<Label>& labels) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == Label::Road ? kRoad : kNonRoad;
  return out;
}

// Road probability on the binary scale: road against the strongest
// competitor, so that > 0.5 agrees with the 3-class argmax.
inline double binary_road_probability(double p_nonroad, double p_road, double p_unlabeled) {
  const double rival = std::max(p_nonroad, p_unlabeled);
  const double sum = p_road + rival;
  return sum > 0.0 ? p_road / sum : 0.0;
}

// True for superpixels with a 4-adjacent neighbour of the other class.
inline std::vector<bool> boundary_superpixels(const superpixel::Segmentation& seg, const std::vector<int>& sp_class) {
  if (sp_class.size() != seg.superpixels.size()) throw DataError("extract_region: one class per superpixel expected");
  std::vector<bool> boundary(seg.superpixels.size(), false);
  for (const auto& sp : seg.superpixels) {
    for (int n : sp.neighbors) {
      if (sp_class[n] != sp_class[sp.id]) boundary[sp.id] = true;
    }
  }
  return boundary;
}

// Union of the boundary superpixels' pixels. sp_class is binary per
// superpixel id; sp_road_prob is the per-superpixel road probability.
inline RefinementRegion extract_region(const Image& image, const superpixel::Segmentation& seg,
                                       const std::vector<int>& sp_class, const std::vector<double>& sp_road_prob) {
  if (image.width != seg.width || image.height != seg.height) throw DataError("extract_region: dimension mismatch");
  if (sp_road_prob.size() != seg.superpixels.size()) throw DataError("extract_region: one probability per superpixel expected");
  const auto boundary = boundary_superpixels(seg, sp_class);
  std::vector<RegionPixel> pixels;
  for (const auto& sp : seg.superpixels) {
    if (!boundary[sp.id]) continue;
    for (int p : sp.pixels) {
      RegionPixel px;
      px.row = p / image.width;
      px.col = p % image.width;
      px.rgb8 = image.pixel(static_cast<std::size_t>(p));
      for (int k = 0; k < 3; ++k) px.rgb[k] = px.rgb8[k] / 255.0;
      px.superpixel = sp.id;
      px.initial = sp_class[sp.id];
      px.road_prob = sp_road_prob[sp.id];
      pixels.push_back(px);
    }
  }
  return build_region(image.width, image.height, std::move(pixels),
                      [&](int r, int c) { return sp_class[seg.id_at(r, c)]; });
}

// E(l) = alpha * sum U_i(l_i) + beta * #disagreeing 4-adjacent pairs, each
// region pair counted once. External neighbours count when requested.
inline double labeling_energy(const RefinementRegion& region, const UnaryTable& unary, const Labeling& labels,
                              double alpha, double beta, bool include_external) {
  double data = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < region.size(); ++i) {
    data += unary[i][labels[i]];
    for (int d = 0; d < 4; ++d) {
      const int j = region.neighbors[i][d];
      if (j != kNone) {
        if (static_cast<std::size_t>(j) > i && labels[j] != labels[i]) pairs += 1.0;
      } else if (include_external && region.external[i][d] != kNone && region.external[i][d] != labels[i]) {
        pairs += 1.0;
      }
    }
  }
  return alpha * data + beta * pairs;
}

inline Labeling initial_labels(const RefinementRegion& region) {
  Labeling l(region.size());
  for (std::size_t i = 0; i < region.size(); ++i) l[i] = region.pixels[i].initial;
  return l;
}

}  // namespace sproad::crf
