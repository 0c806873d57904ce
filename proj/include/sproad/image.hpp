#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sproad/error.hpp"

namespace sproad {

// Per-pixel / per-superpixel class. Values are part of the file formats.
enum class Label : std::uint8_t { NonRoad = 0, Road = 1, Unlabeled = 2 };

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit RGB raster, row-major, three bytes per pixel.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, Rgb fill = {0, 0, 0}) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3) {
    if (w <= 0 || h <= 0) throw DataError("image dimensions must be positive");
    for (std::size_t i = 0; i < data.size(); i += 3) {
      data[i] = fill[0];
      data[i + 1] = fill[1];
      data[i + 2] = fill[2];
    }
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  Rgb at(int row, int col) const {
    const std::size_t i = (static_cast<std::size_t>(row) * width + col) * 3;
    return {data[i], data[i + 1], data[i + 2]};
  }
  Rgb pixel(std::size_t index) const { return {data[3 * index], data[3 * index + 1], data[3 * index + 2]}; }

  void set(int row, int col, Rgb value) {
    const std::size_t i = (static_cast<std::size_t>(row) * width + col) * 3;
    data[i] = value[0];
    data[i + 1] = value[1];
    data[i + 2] = value[2];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Per-pixel classes plus the evaluation mask. valid is 1 where the class is
// usable for scoring.
struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<Label> labels;
  std::vector<std::uint8_t> valid;

  LabelMap() = default;
  LabelMap(int w, int h, Label fill = Label::NonRoad)
      : width(w), height(h), labels(static_cast<std::size_t>(w) * h, fill),
        valid(static_cast<std::size_t>(w) * h, fill == Label::Unlabeled ? 0 : 1) {}

  std::size_t pixel_count() const { return labels.size(); }

  Label at(int row, int col) const { return labels[static_cast<std::size_t>(row) * width + col]; }
  void set(int row, int col, Label label) {
    const std::size_t i = static_cast<std::size_t>(row) * width + col;
    labels[i] = label;
    valid[i] = label == Label::Unlabeled ? 0 : 1;
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

inline void require_same_size(const Image& image, const LabelMap& map, const char* what) {
  if (image.width != map.width || image.height != map.height) throw DataError(std::string(what) + ": dimension mismatch");
}

inline void require_same_size(const LabelMap& a, const LabelMap& b, const char* what) {
  if (a.width != b.width || a.height != b.height) throw DataError(std::string(what) + ": dimension mismatch");
}

}  // namespace sproad
