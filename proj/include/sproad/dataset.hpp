#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sproad/error.hpp"

namespace sproad::imaging {

namespace fs = std::filesystem;

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
};

// "UM", "UMM" or "UU" when the file stem starts with that token followed by
// '_', empty otherwise.
inline std::string road_category(const std::string& file) {
  const std::string stem = fs::path(file).stem().string();
  const auto underscore = stem.find('_');
  if (underscore == std::string::npos) return {};
  std::string token = stem.substr(0, underscore);
  std::transform(token.begin(), token.end(), token.begin(), [](unsigned char c) { return std::toupper(c); });
  return (token == "UM" || token == "UMM" || token == "UU") ? token : std::string{};
}

// Stratified hold-out split. The validation size is round(fraction * n);
// each category contributes floor(fraction * size) and the remainder goes to
// the largest categories first.
inline DatasetSplit split_dataset(const std::vector<std::string>& files, double fraction, std::uint64_t seed) {
  if (files.empty()) throw DataError("split_dataset: empty file list");
  if (!(fraction > 0.0 && fraction < 1.0)) throw DataError("split_dataset: fraction must lie in (0,1)");

  std::map<std::string, std::vector<std::string>> strata;
  for (const auto& f : files) strata[road_category(f)].push_back(f);

  const std::size_t total = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(files.size())));
  std::map<std::string, std::size_t> quota;
  std::size_t assigned = 0;
  for (auto& [name, members] : strata) {
    std::sort(members.begin(), members.end());
    quota[name] = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(members.size())));
    assigned += quota[name];
  }

  std::vector<std::string> by_size;
  for (const auto& [name, members] : strata) by_size.push_back(name);
  std::stable_sort(by_size.begin(), by_size.end(),
                   [&](const std::string& a, const std::string& b) { return strata[a].size() > strata[b].size(); });
  while (assigned < total) {
    bool progressed = false;
    for (const auto& name : by_size) {
      if (assigned == total) break;
      if (quota[name] < strata[name].size()) {
        ++quota[name];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) break;
  }

  std::mt19937_64 rng(seed);
  std::vector<std::string> held_out;
  for (auto& [name, members] : strata) {
    // Fisher-Yates with raw engine output keeps the permutation identical
    // across standard library implementations.
    for (std::size_t i = members.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(members[i - 1], members[j]);
    }
    held_out.insert(held_out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota[name]));
  }
  std::sort(held_out.begin(), held_out.end());

  DatasetSplit split;
  for (const auto& f : files) {
    if (std::binary_search(held_out.begin(), held_out.end(), f)) {
      split.validation.push_back(f);
    } else {
      split.train.push_back(f);
    }
  }
  return split;
}

struct DatasetEntry {
  fs::path image;
  std::optional<fs::path> ground_truth;
};

inline bool is_raster_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

// Ground-truth stems accepted for an image stem: identical, or the KITTI
// form with "_road" inserted after the category ("um_000001" ->
// "um_road_000001").
inline std::vector<std::string> ground_truth_stems(const std::string& image_stem) {
  std::vector<std::string> stems{image_stem};
  const auto underscore = image_stem.find('_');
  if (underscore != std::string::npos) {
    stems.push_back(image_stem.substr(0, underscore) + "_road" + image_stem.substr(underscore));
  }
  return stems;
}

inline std::vector<fs::path> list_rasters(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_raster_file(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

// Pairs <root>/<image_dir>/* with <root>/<gt_dir>/* by stem.
inline std::vector<DatasetEntry> discover_dataset(const fs::path& root, const std::string& image_dir = "image_2",
                                                  const std::string& gt_dir = "gt_image_2") {
  const fs::path images = root / image_dir;
  if (!fs::is_directory(images)) throw IoError("dataset image directory '" + images.string() + "' not found");
  std::map<std::string, fs::path> gt_by_stem;
  for (const auto& p : list_rasters(root / gt_dir)) gt_by_stem[p.stem().string()] = p;

  std::vector<DatasetEntry> entries;
  for (const auto& p : list_rasters(images)) {
    DatasetEntry entry{p, std::nullopt};
    for (const auto& stem : ground_truth_stems(p.stem().string())) {
      if (auto it = gt_by_stem.find(stem); it != gt_by_stem.end()) {
        entry.ground_truth = it->second;
        break;
      }
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

}  // namespace sproad::imaging
