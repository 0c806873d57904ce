#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "sproad/superpixel.hpp"
#include "support.hpp"

using namespace sproad;
using namespace sproad::superpixel;

namespace {

SlicParams lattice(int rows, int cols, double m = 35.0, int iters = 10) {
  SlicParams p;
  p.rows = rows;
  p.cols = cols;
  p.compactness = m;
  p.kmeans_iters = iters;
  return p;
}

// Flood fill over equal ids starting at the first pixel of each superpixel.
bool single_component(const Segmentation& seg, const Superpixel& sp) {
  if (sp.empty()) return true;
  std::vector<char> seen(seg.ids.size(), 0);
  std::vector<int> stack{sp.pixels.front()};
  seen[sp.pixels.front()] = 1;
  std::size_t reached = 0;
  while (!stack.empty()) {
    const int p = stack.back();
    stack.pop_back();
    ++reached;
    const int r = p / seg.width, c = p % seg.width;
    const int nbr[4][2] = {{r, c + 1}, {r, c - 1}, {r - 1, c}, {r + 1, c}};
    for (auto [rr, cc] : nbr) {
      if (rr < 0 || rr >= seg.height || cc < 0 || cc >= seg.width) continue;
      const int q = rr * seg.width + cc;
      if (!seen[q] && seg.ids[q] == sp.id) {
        seen[q] = 1;
        stack.push_back(q);
      }
    }
  }
  return reached == sp.pixels.size();
}

void expect_invariants(const Segmentation& seg) {
  const int k = seg.rows * seg.cols;
  ASSERT_EQ(static_cast<int>(seg.superpixels.size()), k);
  std::vector<int> owner(seg.ids.size(), -1);
  std::size_t total = 0;
  for (const auto& sp : seg.superpixels) {
    total += sp.pixels.size();
    for (int p : sp.pixels) {
      EXPECT_EQ(owner[p], -1) << "pixel " << p << " listed twice";
      owner[p] = sp.id;
      EXPECT_EQ(seg.ids[p], sp.id);
    }
    EXPECT_TRUE(single_component(seg, sp)) << "superpixel " << sp.id;
    for (int j : sp.neighbors) {
      EXPECT_NE(j, sp.id);
      const auto& back = seg.superpixels[j].neighbors;
      EXPECT_TRUE(std::binary_search(back.begin(), back.end(), sp.id));
    }
  }
  EXPECT_EQ(total, seg.ids.size());
  for (int id : seg.ids) {
    EXPECT_GE(id, 0);
    EXPECT_LT(id, k);
  }
  ASSERT_EQ(static_cast<int>(seg.node_of.size()), k);
  std::vector<int> inverse(k, -1);
  for (int node = 0; node < k; ++node) {
    ASSERT_GE(seg.node_of[node], 0);
    ASSERT_LT(seg.node_of[node], k);
    EXPECT_EQ(inverse[seg.node_of[node]], -1);
    inverse[seg.node_of[node]] = node;
  }
  for (int node = 0; node < k; ++node) EXPECT_EQ(inverse[seg.node_of[node]], node);
}

}  // namespace

TEST(InitSeeds, UniformImageKeepsGridPositions) {
  const auto lab = imaging::rgb_to_lab(Image(20, 20, {90, 90, 90}));
  const auto seeds = init_seeds(lab, lattice(2, 2));
  ASSERT_EQ(seeds.size(), 4u);
  const int expected[4][2] = {{5, 5}, {5, 15}, {15, 5}, {15, 15}};
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(seeds[i].id, i);
    EXPECT_EQ(seeds[i].row, expected[i][0]);
    EXPECT_EQ(seeds[i].col, expected[i][1]);
    EXPECT_DOUBLE_EQ(seeds[i].y, expected[i][0]);
    EXPECT_DOUBLE_EQ(seeds[i].x, expected[i][1]);
  }
}

TEST(InitSeeds, KittiSizeGives396Seeds) {
  const auto lab = imaging::rgb_to_lab(testkit::random_image(1242, 375, 3));
  const auto seeds = init_seeds(lab, lattice(11, 36));
  ASSERT_EQ(seeds.size(), 396u);
  for (std::size_t i = 0; i < seeds.size(); ++i) EXPECT_EQ(seeds[i].id, static_cast<int>(i));
}

TEST(InitSeeds, PerturbationStaysInBounds) {
  // One lattice cell per pixel puts every seed on the border of its image.
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto lab = imaging::rgb_to_lab(testkit::random_image(4, 3, s));
    for (const auto& seed : init_seeds(lab, lattice(3, 4))) {
      EXPECT_GE(seed.row, 0);
      EXPECT_LT(seed.row, 3);
      EXPECT_GE(seed.col, 0);
      EXPECT_LT(seed.col, 4);
      EXPECT_DOUBLE_EQ(seed.y, seed.row + 0.5);
      EXPECT_DOUBLE_EQ(seed.x, seed.col + 0.5);
    }
  }
}

TEST(InitSeeds, MovesToLowestGradient) {
  // A vertical edge at column 5 gives high gradient at the seed (5,5).
  Image img(20, 20, {0, 0, 0});
  for (int r = 0; r < 20; ++r)
    for (int c = 5; c < 20; ++c) img.set(r, c, {255, 255, 255});
  const auto seeds = init_seeds(imaging::rgb_to_lab(img), lattice(2, 2));
  EXPECT_EQ(seeds[0].row, 4);  // first minimum in scan order
  EXPECT_EQ(seeds[0].col, 6);
  EXPECT_DOUBLE_EQ(seeds[0].y, 4.0);
  EXPECT_DOUBLE_EQ(seeds[0].x, 6.0);
}

TEST(InitSeeds, RejectsImageSmallerThanLattice) {
  const auto lab = imaging::rgb_to_lab(Image(5, 5));
  EXPECT_THROW(init_seeds(lab, lattice(6, 2)), DataError);
}

TEST(SlicAssign, ConstantColourGivesVoronoiRectangles) {
  const auto lab = imaging::rgb_to_lab(Image(60, 60, {40, 120, 200}));
  const auto params = lattice(3, 3);
  const auto result = slic_assign_update(lab, init_seeds(lab, params), params);
  for (int r = 0; r < 60; ++r)
    for (int c = 0; c < 60; ++c) ASSERT_EQ(result.ids(r, c), (r / 20) * 3 + c / 20) << r << "," << c;
}

TEST(SlicAssign, ConstantColourVoronoiForAnyCompactness) {
  for (double m : {0.5, 10.0, 35.0, 400.0}) {
    const auto seg = segment(Image(60, 60, {200, 10, 10}), lattice(3, 3, m));
    for (int r = 0; r < 60; ++r)
      for (int c = 0; c < 60; ++c) ASSERT_EQ(seg.id_at(r, c), (r / 20) * 3 + c / 20) << "m=" << m;
  }
}

TEST(SlicAssign, SingleRoundMatchesBruteForce) {
  Image img(12, 12, {0, 0, 0});
  for (int r = 0; r < 12; ++r)
    for (int c = 6; c < 12; ++c) img.set(r, c, {255, 255, 255});
  const auto lab = imaging::rgb_to_lab(img);
  const auto params = lattice(2, 2, 35.0, 1);
  const auto seeds = init_seeds(lab, params);
  const auto result = slic_assign_update(lab, seeds, params);

  // Independent oracle: every (pixel, cluster) pair, window then global fallback.
  const double sy = 6.0, sx = 6.0, s = std::sqrt(sx * sy);
  for (int r = 0; r < 12; ++r) {
    for (int c = 0; c < 12; ++c) {
      double best_in = std::numeric_limits<double>::infinity(), best_all = best_in;
      int id_in = -1, id_all = -1;
      for (const auto& seed : seeds) {
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) {
          const double d = lab(r, c, k) - lab(seed.row, seed.col, k);
          d2 += d * d;
        }
        const double py = r + 0.5, px = c + 0.5;
        const double dxy2 = (py - seed.y) * (py - seed.y) + (px - seed.x) * (px - seed.x);
        const double dist = std::sqrt(d2 + (35.0 / s) * (35.0 / s) * dxy2);
        const bool inside = std::abs(py - seed.y) <= sy && std::abs(px - seed.x) <= sx;
        if (inside && dist < best_in) {
          best_in = dist;
          id_in = seed.id;
        }
        if (dist < best_all) {
          best_all = dist;
          id_all = seed.id;
        }
      }
      EXPECT_EQ(result.ids(r, c), id_in >= 0 ? id_in : id_all) << r << "," << c;
    }
  }
}

TEST(SlicAssign, DeterministicAndInRange) {
  const auto lab = imaging::rgb_to_lab(testkit::random_image(50, 30, 11));
  const auto params = lattice(3, 5, 20.0, 4);
  const auto seeds = init_seeds(lab, params);
  const auto a = slic_assign_update(lab, seeds, params);
  const auto b = slic_assign_update(lab, seeds, params);
  EXPECT_EQ(a.ids, b.ids);
  for (int id : a.ids.values()) {
    EXPECT_GE(id, 0);
    EXPECT_LT(id, 15);
  }
}

TEST(SlicAssign, NextRoundDependsOnlyOnCentres) {
  // Running k+1 rounds equals running one round from the k-round centres.
  const auto lab = imaging::rgb_to_lab(testkit::random_image(40, 40, 5));
  auto params = lattice(2, 3, 15.0, 3);
  const auto seeds = init_seeds(lab, params);
  const auto three = slic_assign_update(lab, seeds, params);
  params.kmeans_iters = 2;
  const auto two = slic_assign_update(lab, seeds, params);
  // Rebuild the assignment of round 3 from the round-2 centres.
  const double sy = 20.0, sx = 40.0 / 3.0, w2 = std::pow(15.0 / std::sqrt(sx * sy), 2);
  for (int r = 0; r < 40; ++r) {
    for (int c = 0; c < 40; ++c) {
      double best = std::numeric_limits<double>::infinity();
      int id = -1;
      for (int k = 0; k < 6; ++k) {
        const auto& ctr = two.centers[k];
        if (std::abs(r + 0.5 - ctr.row) > sy || std::abs(c + 0.5 - ctr.col) > sx) continue;
        const double dl = lab(r, c, 0) - ctr.l, da = lab(r, c, 1) - ctr.a, db = lab(r, c, 2) - ctr.b;
        const double dr = r + 0.5 - ctr.row, dc = c + 0.5 - ctr.col;
        const double d = dl * dl + da * da + db * db + w2 * (dr * dr + dc * dc);
        if (d < best) {
          best = d;
          id = k;
        }
      }
      if (id >= 0) {
        EXPECT_EQ(three.ids(r, c), id);
      }
    }
  }
}

TEST(Merge, ConnectedMapIsFixedPoint) {
  Grid<int> raw(8, 9, 1);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 9; ++c) raw(r, c) = (r / 4) * 3 + c / 3;
  const auto seg = merge_components(raw, 2, 3);
  EXPECT_EQ(seg.ids, raw.values());
}

TEST(Merge, SmallPieceJoinsNearestNeighbour) {
  // 10x10 map on a 2x5 lattice. Id 5 owns a 12-pixel block in rows 5-7 and a
  // stray 3-pixel piece in column 9 touching ids 4 (above) and 9.
  Grid<int> raw(10, 10, 1);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c) raw(r, c) = (r / 5) * 5 + c / 2;
  for (int r = 5; r < 8; ++r)
    for (int c = 0; c < 4; ++c) raw(r, c) = 5;
  for (int r = 8; r < 10; ++r)
    for (int c = 0; c < 4; ++c) raw(r, c) = 6;
  for (int r = 5; r < 8; ++r) raw(r, 9) = 5;

  // Oracle: flood fill the pieces of id 5 and measure centroid distances.
  std::vector<int> labels = raw.values();
  std::vector<std::vector<int>> comps;
  std::vector<char> seen(100, 0);
  for (int p = 0; p < 100; ++p) {
    if (labels[p] != 5 || seen[p]) continue;
    std::vector<int> comp{p};
    seen[p] = 1;
    for (std::size_t i = 0; i < comp.size(); ++i) {
      const int q = comp[i], r = q / 10, c = q % 10;
      for (auto [rr, cc] : {std::pair{r, c + 1}, {r, c - 1}, {r - 1, c}, {r + 1, c}}) {
        const int t = rr * 10 + cc;
        if (rr >= 0 && rr < 10 && cc >= 0 && cc < 10 && labels[t] == 5 && !seen[t]) {
          seen[t] = 1;
          comp.push_back(t);
        }
      }
    }
    comps.push_back(comp);
  }
  ASSERT_EQ(comps.size(), 2u);
  std::sort(comps.begin(), comps.end(), [](auto& a, auto& b) { return a.size() > b.size(); });
  ASSERT_EQ(comps[0].size(), 12u);
  ASSERT_EQ(comps[1].size(), 3u);
  auto centroid = [](const std::vector<int>& px) {
    double r = 0, c = 0;
    for (int p : px) {
      r += p / 10;
      c += p % 10;
    }
    return std::pair{r / px.size(), c / px.size()};
  };
  std::set<int> touching;
  for (int p : comps[1]) {
    const int r = p / 10, c = p % 10;
    for (auto [rr, cc] : {std::pair{r, c + 1}, {r, c - 1}, {r - 1, c}, {r + 1, c}}) {
      if (rr >= 0 && rr < 10 && cc >= 0 && cc < 10 && labels[rr * 10 + cc] != 5) touching.insert(labels[rr * 10 + cc]);
    }
  }
  ASSERT_EQ(touching, (std::set<int>{4, 9}));
  const auto here = centroid(comps[1]);
  int expected = -1;
  double best = 1e300;
  for (int j : touching) {
    std::vector<int> px;
    for (int p = 0; p < 100; ++p)
      if (labels[p] == j) px.push_back(p);
    const auto there = centroid(px);
    const double d = std::hypot(here.first - there.first, here.second - there.second);
    if (d < best) {
      best = d;
      expected = j;
    }
  }

  const auto seg = merge_components(raw, 2, 5);
  for (int p : comps[1]) EXPECT_EQ(seg.ids[p], expected);
  for (int p : comps[0]) EXPECT_EQ(seg.ids[p], 5);
  for (const auto& sp : seg.superpixels) EXPECT_TRUE(single_component(seg, sp));
}

namespace {

// Straight transcription of the merge rule: flood fill everything again for
// every decision.
std::vector<std::vector<int>> flood_components(const std::vector<int>& labels, int w, int h, int id) {
  std::vector<std::vector<int>> comps;
  std::vector<char> seen(labels.size(), 0);
  for (int p = 0; p < static_cast<int>(labels.size()); ++p) {
    if (labels[p] != id || seen[p]) continue;
    std::vector<int> comp{p};
    seen[p] = 1;
    for (std::size_t i = 0; i < comp.size(); ++i) {
      const int q = comp[i], r = q / w, c = q % w;
      for (auto [rr, cc] : {std::pair{r, c + 1}, {r, c - 1}, {r - 1, c}, {r + 1, c}}) {
        const int t = rr * w + cc;
        if (rr >= 0 && rr < h && cc >= 0 && cc < w && labels[t] == id && !seen[t]) {
          seen[t] = 1;
          comp.push_back(t);
        }
      }
    }
    comps.push_back(comp);
  }
  std::stable_sort(comps.begin(), comps.end(), [](auto& a, auto& b) { return a.size() > b.size(); });
  return comps;
}

std::vector<int> reference_merge(std::vector<int> labels, int w, int h, int k_count) {
  auto centroid = [&](const std::vector<int>& px) {
    double r = 0, c = 0;
    for (int p : px) {
      r += p / w;
      c += p % w;
    }
    return std::pair{r / px.size(), c / px.size()};
  };
  for (int id = 0; id < k_count; ++id) {
    const auto comps = flood_components(labels, w, h, id);
    for (std::size_t ci = 1; ci < comps.size(); ++ci) {
      std::set<int> touching;
      for (int p : comps[ci]) {
        const int r = p / w, c = p % w;
        for (auto [rr, cc] : {std::pair{r, c + 1}, {r, c - 1}, {r - 1, c}, {r + 1, c}}) {
          if (rr >= 0 && rr < h && cc >= 0 && cc < w && labels[rr * w + cc] != id) touching.insert(labels[rr * w + cc]);
        }
      }
      const auto here = centroid(comps[ci]);
      int target = -1;
      double best = 1e300;
      for (int j : touching) {
        const auto there = centroid(flood_components(labels, w, h, j).front());
        const double d = std::hypot(here.first - there.first, here.second - there.second);
        if (d < best) {
          best = d;
          target = j;
        }
      }
      for (int p : comps[ci]) labels[p] = target;
    }
  }
  return labels;
}

}  // namespace

TEST(Merge, MatchesReferenceOnRandomMaps) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const int w = 6 + static_cast<int>(rng() % 10), h = 5 + static_cast<int>(rng() % 10);
    const int rows = 1 + static_cast<int>(rng() % 3), cols = 1 + static_cast<int>(rng() % 3);
    Grid<int> raw(h, w, 1);
    // Mostly blocky lattice cells with scattered noise.
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        raw(r, c) = (r * rows / h) * cols + c * cols / w;
        if (rng() % 4 == 0) raw(r, c) = static_cast<int>(rng() % (rows * cols));
      }
    const auto seg = merge_components(raw, rows, cols);
    ASSERT_EQ(seg.ids, reference_merge(raw.values(), w, h, rows * cols)) << "trial " << trial;
    for (const auto& sp : seg.superpixels) EXPECT_TRUE(single_component(seg, sp));
  }
}

TEST(Merge, EmptyIdIsKept) {
  Grid<int> raw(4, 4, 1, 0);
  for (int r = 0; r < 4; ++r)
    for (int c = 2; c < 4; ++c) raw(r, c) = 1;
  const auto seg = merge_components(raw, 2, 2);
  ASSERT_EQ(seg.superpixels.size(), 4u);
  EXPECT_TRUE(seg.superpixels[2].empty());
  EXPECT_TRUE(seg.superpixels[3].empty());
  EXPECT_FALSE(seg.superpixels[0].empty());
}

TEST(Segment, InvariantsOnRandomImages) {
  for (std::uint64_t s = 1; s <= 4; ++s) {
    const auto img = testkit::random_image(48 + static_cast<int>(s) * 7, 36, s);
    const auto seg = segment(img, lattice(3, 4, 10.0, 5));
    expect_invariants(seg);
  }
}

TEST(Segment, InvariantsOnStructuredImage) {
  Image img(90, 60, {30, 140, 30});
  std::mt19937_64 rng(9);
  for (int r = 0; r < 60; ++r)
    for (int c = 0; c < 90; ++c) {
      if ((r - 30) * (r - 30) + (c - 45) * (c - 45) < 400) img.set(r, c, {120, 120, 120});
      if (rng() % 13 == 0) img.set(r, c, {static_cast<std::uint8_t>(rng()), 0, 255});
    }
  expect_invariants(segment(img, lattice(4, 6)));
}

TEST(Segment, Deterministic) {
  const auto img = testkit::random_image(64, 40, 77);
  const auto a = segment(img, lattice(4, 4));
  const auto b = segment(img, lattice(4, 4));
  EXPECT_EQ(a.ids, b.ids);
  EXPECT_EQ(a.node_of, b.node_of);
  for (std::size_t k = 0; k < a.superpixels.size(); ++k) {
    EXPECT_EQ(a.superpixels[k].centroid_row, b.superpixels[k].centroid_row);
    EXPECT_EQ(a.superpixels[k].neighbors, b.superpixels[k].neighbors);
  }
}

TEST(LatticeProjection, KittiLatticeCorners) {
  const auto seg = segment(testkit::random_image(1242, 375, 1), lattice(11, 36, 35.0, 2));
  EXPECT_EQ(seg.node_of[0], 0);
  EXPECT_EQ(seg.node_of[10 * 36 + 35], 395);
  EXPECT_EQ(seg.at_node(10, 35).id, 395);
  expect_invariants(seg);
}

TEST(LatticeProjection, SingleNode) {
  const auto seg = segment(testkit::random_image(5, 4, 2), lattice(1, 1));
  ASSERT_EQ(seg.node_of.size(), 1u);
  EXPECT_EQ(seg.node_of[0], 0);
  EXPECT_EQ(seg.superpixels[0].pixels.size(), 20u);
}

TEST(LatticeProjection, PermutedIdsAreRejected) {
  auto seg = segment(testkit::random_image(20, 20, 4), lattice(2, 2));
  std::swap(seg.superpixels[1], seg.superpixels[2]);
  EXPECT_THROW(lattice_projection(seg), ConsistencyError);
}

TEST(SpGroundTruth, PluralityAndTies) {
  Grid<int> raw(4, 20, 1);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 20; ++c) raw(r, c) = c < 10 ? 0 : 1;
  const auto seg = merge_components(raw, 1, 3);
  LabelMap gt(20, 4, Label::NonRoad);
  // Superpixel 0: 30 road and 10 non-road.
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 10; ++c)
      if (r < 3) gt.set(r, c, Label::Road);
  // Superpixel 1: 20 road and 20 non-road.
  for (int r = 0; r < 2; ++r)
    for (int c = 10; c < 20; ++c) gt.set(r, c, Label::Road);
  const auto labels = sp_ground_truth(seg, gt);
  EXPECT_EQ(labels[0], Label::Road);
  EXPECT_EQ(labels[1], Label::NonRoad);
  EXPECT_EQ(labels[2], Label::Unlabeled);  // empty superpixel
  EXPECT_THROW(sp_ground_truth(seg, LabelMap(3, 3)), DataError);
}

TEST(SegmentationFile, RoundTrip) {
  testkit::TempDir dir;
  const auto seg = segment(testkit::random_image(40, 30, 8), lattice(3, 4));
  save_segmentation(seg, dir / "seg.pgm", dir / "seg.json");
  const auto back = load_segmentation(dir / "seg.pgm", dir / "seg.json");
  EXPECT_EQ(back.ids, seg.ids);
  EXPECT_EQ(back.node_of, seg.node_of);
  for (std::size_t k = 0; k < seg.superpixels.size(); ++k) {
    EXPECT_EQ(back.superpixels[k].pixels, seg.superpixels[k].pixels);
    EXPECT_EQ(back.superpixels[k].neighbors, seg.superpixels[k].neighbors);
  }
}
