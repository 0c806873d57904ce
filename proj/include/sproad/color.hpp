#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "sproad/grid.hpp"
#include "sproad/image.hpp"

namespace sproad::imaging {

namespace detail {

// sRGB transfer curve removed, one entry per 8-bit code.
inline const std::array<double, 256>& srgb_to_linear_table() {
  static const std::array<double, 256> table = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const double c = i / 255.0;
      t[i] = c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
    }
    return t;
  }();
  return table;
}

inline double lab_f(double t) {
  constexpr double epsilon = 216.0 / 24389.0;
  constexpr double kappa = 24389.0 / 27.0;
  return t > epsilon ? std::cbrt(t) : (kappa * t + 16.0) / 116.0;
}

}  // namespace detail

// CIELAB (D65) of one sRGB triple. The reference white is the image of
// linear (1,1,1) under the sRGB matrix so that white maps to exactly L=100.
inline std::array<double, 3> rgb_to_lab(Rgb rgb) {
  const auto& lin = detail::srgb_to_linear_table();
  const double r = lin[rgb[0]], g = lin[rgb[1]], b = lin[rgb[2]];
  constexpr double xn = 0.4124564 + 0.3575761 + 0.1804375;
  constexpr double yn = 0.2126729 + 0.7151522 + 0.0721750;
  constexpr double zn = 0.0193339 + 0.1191920 + 0.9503041;
  const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / xn;
  const double y = (0.2126729 * r + 0.7151522 * g + 0.0721750 * b) / yn;
  const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / zn;
  const double fx = detail::lab_f(x), fy = detail::lab_f(y), fz = detail::lab_f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

// Hexcone HSV with hue scaled to [0,1). Achromatic pixels get hue 0.
inline std::array<double, 3> rgb_to_hsv(Rgb rgb) {
  const double r = rgb[0] / 255.0, g = rgb[1] / 255.0, b = rgb[2] / 255.0;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  double h = 0.0;
  if (delta > 0.0) {
    if (mx == r) {
      h = (g - b) / delta;
      if (h < 0.0) h += 6.0;
    } else if (mx == g) {
      h = (b - r) / delta + 2.0;
    } else {
      h = (r - g) / delta + 4.0;
    }
    h /= 6.0;
  }
  const double s = mx > 0.0 ? delta / mx : 0.0;
  return {h, s, mx};
}

inline Grid<double> rgb_to_lab(const Image& image) {
  Grid<double> out(image.height, image.width, 3);
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const auto lab = rgb_to_lab(image.pixel(i));
    std::copy(lab.begin(), lab.end(), out.values().begin() + 3 * i);
  }
  return out;
}

inline Grid<double> rgb_to_hsv(const Image& image) {
  Grid<double> out(image.height, image.width, 3);
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const auto hsv = rgb_to_hsv(image.pixel(i));
    std::copy(hsv.begin(), hsv.end(), out.values().begin() + 3 * i);
  }
  return out;
}

// ITU-R BT.601 luma scaled by 1000 so that comparisons are exact integers.
inline Grid<int> luma_milli(const Image& image) {
  Grid<int> out(image.height, image.width, 1);
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const Rgb p = image.pixel(i);
    out.values()[i] = 299 * p[0] + 587 * p[1] + 114 * p[2];
  }
  return out;
}

}  // namespace sproad::imaging
