#pragma once

// Procedural road scenes with exact ground truth: sky above a horizon, grass
// on both sides, and a grey road narrowing towards a vanishing point with
// wavy, jittered edges.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sproad/image.hpp"
#include "sproad/io.hpp"

namespace sproad::synthetic {

struct SceneOptions {
  int width = 432;
  int height = 132;
  int noise = 12;           // uniform per-channel noise amplitude
  double jaggedness = 0.03;  // edge wave amplitude relative to width
};

struct Scene {
  Image image;
  LabelMap truth;
};

inline int jitter(std::mt19937_64& rng, int amplitude) {
  if (amplitude <= 0) return 0;
  return static_cast<int>(rng() % static_cast<std::uint64_t>(2 * amplitude + 1)) - amplitude;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline Scene make_scene(std::uint64_t seed, const SceneOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  const int w = opt.width, h = opt.height;
  const double horizon = h * uniform(rng, 0.38, 0.5);
  const double vanish = w * uniform(rng, 0.4, 0.6);
  const double left_bottom = w * uniform(rng, 0.02, 0.25);
  const double right_bottom = w * uniform(rng, 0.75, 0.98);
  const double period = h * uniform(rng, 0.25, 0.5);
  const double phase_l = uniform(rng, 0.0, 6.283), phase_r = uniform(rng, 0.0, 6.283);
  const double amp = opt.jaggedness * w;

  const Rgb sky{static_cast<std::uint8_t>(140 + rng() % 30), static_cast<std::uint8_t>(180 + rng() % 30), 230};
  const Rgb grass{static_cast<std::uint8_t>(50 + rng() % 30), static_cast<std::uint8_t>(120 + rng() % 30),
                  static_cast<std::uint8_t>(40 + rng() % 20)};
  const std::uint8_t grey = static_cast<std::uint8_t>(85 + rng() % 30);
  const Rgb road{grey, grey, static_cast<std::uint8_t>(grey + 6)};

  Scene s{Image(w, h), LabelMap(w, h, Label::NonRoad)};
  for (int y = 0; y < h; ++y) {
    const double t = (y - horizon) / std::max(1.0, h - 1 - horizon);
    double left = w, right = -1;
    if (t > 0.0) {
      left = vanish + t * (left_bottom - vanish) + t * amp * std::sin(2 * M_PI * y / period + phase_l);
      right = vanish + t * (right_bottom - vanish) + t * amp * std::sin(2 * M_PI * y / period + phase_r);
      left += jitter(rng, 2);
      right += jitter(rng, 2);
    }
    for (int x = 0; x < w; ++x) {
      const bool is_road = x >= left && x <= right;
      const Rgb base = is_road ? road : (y < horizon ? sky : grass);
      Rgb px;
      for (int k = 0; k < 3; ++k) px[k] = static_cast<std::uint8_t>(std::clamp(base[k] + jitter(rng, opt.noise), 0, 255));
      s.image.set(y, x, px);
      if (is_road) s.truth.set(y, x, Label::Road);
    }
  }
  return s;
}

// KITTI colour coding: magenta road, red elsewhere.
inline Image kitti_colors(const LabelMap& truth) {
  Image out(truth.width, truth.height);
  for (std::size_t i = 0; i < truth.pixel_count(); ++i) {
    const Rgb c = truth.labels[i] == Label::Road ? Rgb{255, 0, 255} : Rgb{255, 0, 0};
    out.data[3 * i] = c[0];
    out.data[3 * i + 1] = c[1];
    out.data[3 * i + 2] = c[2];
  }
  return out;
}

// Writes <root>/image_2/<cat>_<nnnnnn>.png and, when requested,
// <root>/gt_image_2/<cat>_road_<nnnnnn>.png, cycling through um/umm/uu.
inline std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& root, int count, std::uint64_t seed,
                                                        const SceneOptions& opt = {}, bool with_truth = true) {
  namespace fs = std::filesystem;
  static const char* categories[3] = {"um", "umm", "uu"};
  fs::create_directories(root / "image_2");
  if (with_truth) fs::create_directories(root / "gt_image_2");
  std::vector<fs::path> images;
  for (int i = 0; i < count; ++i) {
    const Scene s = make_scene(seed + static_cast<std::uint64_t>(i), opt);
    char num[16];
    std::snprintf(num, sizeof num, "%06d", i);
    const std::string cat = categories[i % 3];
    const fs::path img = root / "image_2" / (cat + "_" + num + ".png");
    imaging::save_image(s.image, img);
    if (with_truth) imaging::save_image(kitti_colors(s.truth), root / "gt_image_2" / (cat + "_road_" + num + ".png"));
    images.push_back(img);
  }
  return images;
}

}  // namespace sproad::synthetic
