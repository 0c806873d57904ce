#pragma once

// Modified SLIC: fixed R x C seed lattice, localized k-means in (L,a,b,row,col),
// then connectivity repair by merging stray fragments into the nearest
// adjacent superpixel. No cluster is ever deleted, so superpixel id r*C+c is
// always the cluster grown from lattice node (r,c).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sproad/color.hpp"
#include "sproad/error.hpp"
#include "sproad/grid.hpp"
#include "sproad/image.hpp"
#include "sproad/io.hpp"

namespace sproad::superpixel {

struct SlicParams {
  int rows = 11;
  int cols = 36;
  double compactness = 35.0;
  int kmeans_iters = 10;

  void validate() const {
    if (rows < 1 || cols < 1) throw DataError("slic: lattice rows and cols must be >= 1");
    if (!(compactness > 0.0)) throw DataError("slic: compactness must be > 0");
    if (kmeans_iters < 1) throw DataError("slic: kmeans_iters must be >= 1");
  }
};

// Seed pixel plus its continuous position. Positions use pixel-centre
// coordinates: pixel (r,c) sits at (r+0.5, c+0.5).
struct Seed {
  int id = 0;
  int row = 0;
  int col = 0;
  double y = 0.0;
  double x = 0.0;
};

// Cluster centre in the 5-D SLIC feature space.
struct Center {
  double l = 0, a = 0, b = 0, row = 0, col = 0;
};

struct Superpixel {
  int id = 0;
  int lattice_row = 0;
  int lattice_col = 0;
  double centroid_row = 0.0;
  double centroid_col = 0.0;
  std::vector<int> pixels;     // ascending row-major pixel indices
  std::vector<int> neighbors;  // ascending ids sharing a 4-connected border

  bool empty() const { return pixels.empty(); }
};

struct Segmentation {
  int width = 0;
  int height = 0;
  int rows = 0;
  int cols = 0;
  std::vector<int> ids;       // per pixel, row-major
  std::vector<int> node_of;   // lattice node r*cols+c -> superpixel id
  std::vector<Superpixel> superpixels;

  int node_count() const { return rows * cols; }
  int id_at(int row, int col) const { return ids[static_cast<std::size_t>(row) * width + col]; }
  const Superpixel& at_node(int r, int c) const { return superpixels[node_of[r * cols + c]]; }
};

namespace detail {

inline double lab_gradient(const Grid<double>& lab, int r, int c) {
  const int h = lab.rows(), w = lab.cols();
  auto sq = [&](int r0, int c0, int r1, int c1) {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double d = lab(r0, c0, k) - lab(r1, c1, k);
      s += d * d;
    }
    return s;
  };
  return sq(r, std::min(c + 1, w - 1), r, std::max(c - 1, 0)) + sq(std::min(r + 1, h - 1), c, std::max(r - 1, 0), c);
}

inline void check_lattice_fits(int height, int width, const SlicParams& params) {
  params.validate();
  if (height < params.rows || width < params.cols)
    throw DataError("slic: image " + std::to_string(width) + "x" + std::to_string(height) + " is smaller than the " +
                    std::to_string(params.rows) + "x" + std::to_string(params.cols) + " lattice");
}

}  // namespace detail

// Grid seeds at ((r+0.5)H/R, (c+0.5)W/C), each moved to the lowest Lab
// gradient in its 3x3 neighbourhood. Ties keep the centre.
inline std::vector<Seed> init_seeds(const Grid<double>& lab, const SlicParams& params) {
  const int h = lab.rows(), w = lab.cols();
  detail::check_lattice_fits(h, w, params);
  const double sy = static_cast<double>(h) / params.rows;
  const double sx = static_cast<double>(w) / params.cols;
  std::vector<Seed> seeds;
  seeds.reserve(static_cast<std::size_t>(params.rows) * params.cols);
  for (int r = 0; r < params.rows; ++r) {
    for (int c = 0; c < params.cols; ++c) {
      const double y = (r + 0.5) * sy, x = (c + 0.5) * sx;
      const int row = std::min(h - 1, static_cast<int>(std::floor(y)));
      const int col = std::min(w - 1, static_cast<int>(std::floor(x)));
      Seed seed{r * params.cols + c, row, col, y, x};
      double best = detail::lab_gradient(lab, row, col);
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = row + dr, cc = col + dc;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          const double g = detail::lab_gradient(lab, rr, cc);
          if (g < best) {
            best = g;
            seed.row = rr;
            seed.col = cc;
            seed.y = y + dr;
            seed.x = x + dc;
          }
        }
      }
      seeds.push_back(seed);
    }
  }
  return seeds;
}

struct ClusterResult {
  Grid<int> ids;                // H x W raw assignment of the final round
  std::vector<Center> centers;  // centres after the final update
};

// Localized k-means. Each cluster competes for the pixels inside its
// 2Sx x 2Sy window; D^2 = dlab^2 + (m/S)^2 dxy^2 with S = sqrt(Sx*Sy).
// Equal distances resolve to the smaller id.
inline ClusterResult slic_assign_update(const Grid<double>& lab, std::span<const Seed> seeds, const SlicParams& params) {
  const int h = lab.rows(), w = lab.cols();
  detail::check_lattice_fits(h, w, params);
  if (seeds.size() != static_cast<std::size_t>(params.rows) * params.cols)
    throw DataError("slic: seed count does not match the lattice");
  const double sy = static_cast<double>(h) / params.rows;
  const double sx = static_cast<double>(w) / params.cols;
  const double spatial = params.compactness / std::sqrt(sx * sy);
  const double spatial2 = spatial * spatial;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  const int k_count = static_cast<int>(seeds.size());

  std::vector<Center> centers(seeds.size());
  for (const Seed& s : seeds) {
    centers[s.id] = {lab(s.row, s.col, 0), lab(s.row, s.col, 1), lab(s.row, s.col, 2), s.y, s.x};
  }

  Grid<int> ids(h, w, 1, -1);
  std::vector<double> dist(n);
  const double* px = lab.values().data();
  auto distance2 = [&](const Center& c, std::size_t p, int row, int col) {
    const double dl = px[3 * p] - c.l, da = px[3 * p + 1] - c.a, db = px[3 * p + 2] - c.b;
    const double dr = row + 0.5 - c.row, dc = col + 0.5 - c.col;
    return dl * dl + da * da + db * db + spatial2 * (dr * dr + dc * dc);
  };

  for (int iter = 0; iter < params.kmeans_iters; ++iter) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    std::fill(ids.values().begin(), ids.values().end(), -1);
    for (int k = 0; k < k_count; ++k) {
      const Center& c = centers[k];
      // Pixels whose centres lie within Sy rows and Sx columns of the centre.
      const int r0 = std::max(0, static_cast<int>(std::ceil(c.row - sy - 0.5)));
      const int r1 = std::min(h - 1, static_cast<int>(std::floor(c.row + sy - 0.5)));
      const int c0 = std::max(0, static_cast<int>(std::ceil(c.col - sx - 0.5)));
      const int c1 = std::min(w - 1, static_cast<int>(std::floor(c.col + sx - 0.5)));
      for (int r = r0; r <= r1; ++r) {
        for (int col = c0; col <= c1; ++col) {
          const std::size_t p = static_cast<std::size_t>(r) * w + col;
          const double d = distance2(c, p, r, col);
          if (d < dist[p]) {
            dist[p] = d;
            ids.values()[p] = k;
          }
        }
      }
    }
    for (std::size_t p = 0; p < n; ++p) {
      if (ids.values()[p] >= 0) continue;
      const int r = static_cast<int>(p / w), col = static_cast<int>(p % w);
      for (int k = 0; k < k_count; ++k) {
        const double d = distance2(centers[k], p, r, col);
        if (d < dist[p]) {
          dist[p] = d;
          ids.values()[p] = k;
        }
      }
    }

    std::vector<std::array<double, 6>> sums(seeds.size(), std::array<double, 6>{});
    for (std::size_t p = 0; p < n; ++p) {
      auto& s = sums[ids.values()[p]];
      s[0] += px[3 * p];
      s[1] += px[3 * p + 1];
      s[2] += px[3 * p + 2];
      s[3] += static_cast<double>(p / w) + 0.5;
      s[4] += static_cast<double>(p % w) + 0.5;
      s[5] += 1.0;
    }
    for (int k = 0; k < k_count; ++k) {
      const auto& s = sums[k];
      if (s[5] == 0.0) continue;  // an emptied cluster keeps its last centre
      centers[k] = {s[0] / s[5], s[1] / s[5], s[2] / s[5], s[3] / s[5], s[4] / s[5]};
    }
  }
  return {std::move(ids), std::move(centers)};
}

namespace detail {

// 4-connected components of the pixels carrying one id.
class ComponentFinder {
 public:
  ComponentFinder(int width, int height) : w_(width), h_(height), stamp_(static_cast<std::size_t>(width) * height, 0) {}

  // Components ordered by size descending, then by smallest pixel index.
  std::vector<std::vector<int>> components(const std::vector<int>& labels, int id, const std::vector<int>& members) {
    ++epoch_;
    std::vector<std::vector<int>> comps;
    for (int seed : members) {
      if (stamp_[seed] == epoch_) continue;
      std::vector<int> comp{seed};
      stamp_[seed] = epoch_;
      for (std::size_t head = 0; head < comp.size(); ++head) {
        const int p = comp[head];
        const int r = p / w_, c = p % w_;
        const int nbr[4] = {c + 1 < w_ ? p + 1 : -1, c > 0 ? p - 1 : -1, r > 0 ? p - w_ : -1, r + 1 < h_ ? p + w_ : -1};
        for (int q : nbr) {
          if (q >= 0 && labels[q] == id && stamp_[q] != epoch_) {
            stamp_[q] = epoch_;
            comp.push_back(q);
          }
        }
      }
      std::sort(comp.begin(), comp.end());
      comps.push_back(std::move(comp));
    }
    std::stable_sort(comps.begin(), comps.end(),
                     [](const auto& a, const auto& b) { return a.size() > b.size(); });
    return comps;
  }

 private:
  int w_, h_;
  std::vector<int> stamp_;
  int epoch_ = 0;
};

class PieceForest {
 public:
  PieceForest(const std::vector<int>& labels, int width, int height)
      : parent_(labels.size()), size_(labels.size(), 1), first_(labels.size()), sums_(labels.size()) {
    for (std::size_t p = 0; p < labels.size(); ++p) {
      parent_[p] = static_cast<int>(p);
      first_[p] = static_cast<int>(p);
      sums_[p] = {static_cast<double>(p / width), static_cast<double>(p % width)};
    }
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const int p = r * width + c;
        if (c + 1 < width && labels[p] == labels[p + 1]) unite(p, p + 1);
        if (r + 1 < height && labels[p] == labels[p + width]) unite(p, p + width);
      }
    }
  }

  int find(int p) {
    while (parent_[p] != p) {
      parent_[p] = parent_[parent_[p]];
      p = parent_[p];
    }
    return p;
  }

  int unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    first_[a] = std::min(first_[a], first_[b]);
    sums_[a][0] += sums_[b][0];
    sums_[a][1] += sums_[b][1];
    return a;
  }

  // Replaces current with root when root is larger, or equal in size with a
  // smaller first pixel. A stale current (absorbed into root) always loses.
  void offer(int& current, int root) {
    if (current >= 0) current = find(current);
    if (current < 0 || size_[root] > size_[current] ||
        (size_[root] == size_[current] && first_[root] < first_[current]))
      current = root;
  }

  std::array<double, 2> centroid(int root) {
    root = find(root);
    const double n = static_cast<double>(size_[root]);
    return {sums_[root][0] / n, sums_[root][1] / n};
  }

 private:
  std::vector<int> parent_;
  std::vector<int> size_;
  std::vector<int> first_;
  std::vector<std::array<double, 2>> sums_;
};

inline std::array<double, 2> centroid_of(std::span<const int> pixels, int width) {
  double r = 0.0, c = 0.0;
  for (int p : pixels) {
    r += p / width;
    c += p % width;
  }
  const double n = static_cast<double>(pixels.size());
  return {r / n, c / n};
}

}  // namespace detail

// Fills centroids, pixel lists and adjacency from sp ids. Empty superpixels
// get their lattice cell centre as centroid.
inline void rebuild_superpixels(Segmentation& seg) {
  const int k_count = seg.rows * seg.cols;
  seg.superpixels.assign(k_count, {});
  const double sy = static_cast<double>(seg.height) / seg.rows;
  const double sx = static_cast<double>(seg.width) / seg.cols;
  for (int k = 0; k < k_count; ++k) {
    auto& sp = seg.superpixels[k];
    sp.id = k;
    sp.lattice_row = k / seg.cols;
    sp.lattice_col = k % seg.cols;
  }
  for (std::size_t p = 0; p < seg.ids.size(); ++p) {
    const int id = seg.ids[p];
    if (id < 0 || id >= k_count) throw ConsistencyError("superpixel id " + std::to_string(id) + " outside the lattice");
    seg.superpixels[id].pixels.push_back(static_cast<int>(p));
  }
  std::vector<std::vector<int>> adj(k_count);
  for (int r = 0; r < seg.height; ++r) {
    for (int c = 0; c < seg.width; ++c) {
      const int a = seg.id_at(r, c);
      if (c + 1 < seg.width && seg.id_at(r, c + 1) != a) {
        adj[a].push_back(seg.id_at(r, c + 1));
        adj[seg.id_at(r, c + 1)].push_back(a);
      }
      if (r + 1 < seg.height && seg.id_at(r + 1, c) != a) {
        adj[a].push_back(seg.id_at(r + 1, c));
        adj[seg.id_at(r + 1, c)].push_back(a);
      }
    }
  }
  for (int k = 0; k < k_count; ++k) {
    auto& sp = seg.superpixels[k];
    std::sort(adj[k].begin(), adj[k].end());
    adj[k].erase(std::unique(adj[k].begin(), adj[k].end()), adj[k].end());
    sp.neighbors = std::move(adj[k]);
    if (sp.empty()) {
      sp.centroid_row = (sp.lattice_row + 0.5) * sy - 0.5;
      sp.centroid_col = (sp.lattice_col + 0.5) * sx - 0.5;
    } else {
      const auto cen = detail::centroid_of(sp.pixels, seg.width);
      sp.centroid_row = cen[0];
      sp.centroid_col = cen[1];
    }
  }
}

// Keeps the largest 4-connected piece of every id and hands each other piece
// to the adjacent superpixel whose largest piece has the nearest centroid.
// Ids are visited in ascending order, pieces by descending size, and each
// relabel is visible to every later step.
inline Segmentation merge_components(const Grid<int>& raw, int lattice_rows, int lattice_cols) {
  const int h = raw.rows(), w = raw.cols();
  const int k_count = lattice_rows * lattice_cols;
  std::vector<int> labels = raw.values();
  std::vector<std::vector<int>> members(k_count);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] < 0 || labels[p] >= k_count)
      throw ConsistencyError("raw id " + std::to_string(labels[p]) + " outside the lattice");
    members[labels[p]].push_back(static_cast<int>(p));
  }

  // Union-find over equal-id 4-neighbours. A piece handed to another id is
  // joined to the pieces of that id it touches, so every root always holds
  // one current component with its size, first pixel and coordinate sums.
  detail::PieceForest forest(labels, w, h);
  std::vector<int> best(k_count, -1);  // root of each id's largest component
  for (int p = 0; p < static_cast<int>(labels.size()); ++p) {
    const int root = forest.find(p);
    if (root == p) forest.offer(best[labels[p]], root);
  }

  detail::ComponentFinder finder(w, h);
  for (int id = 0; id < k_count; ++id) {
    if (members[id].empty()) continue;
    std::sort(members[id].begin(), members[id].end());
    auto comps = finder.components(labels, id, members[id]);
    for (std::size_t ci = 1; ci < comps.size(); ++ci) {
      const auto& piece = comps[ci];
      std::vector<int> adjacent;
      std::vector<int> touching;  // neighbour pixels outside the piece
      for (int p : piece) {
        const int r = p / w, c = p % w;
        const int nbr[4] = {c + 1 < w ? p + 1 : -1, c > 0 ? p - 1 : -1, r > 0 ? p - w : -1, r + 1 < h ? p + w : -1};
        for (int q : nbr) {
          if (q >= 0 && labels[q] != id) {
            adjacent.push_back(labels[q]);
            touching.push_back(q);
          }
        }
      }
      std::sort(adjacent.begin(), adjacent.end());
      adjacent.erase(std::unique(adjacent.begin(), adjacent.end()), adjacent.end());
      if (adjacent.empty()) continue;

      const auto here = detail::centroid_of(piece, w);
      int target = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (int j : adjacent) {
        const auto there = forest.centroid(best[j]);
        const double d = std::hypot(here[0] - there[0], here[1] - there[1]);
        if (d < best_d) {
          best_d = d;
          target = j;
        }
      }
      for (int p : piece) labels[p] = target;
      members[target].insert(members[target].end(), piece.begin(), piece.end());
      int root = forest.find(piece.front());
      for (int q : touching) {
        if (labels[q] == target) root = forest.unite(root, q);
      }
      forest.offer(best[target], root);
    }
    members[id] = comps.front();
  }

  Segmentation seg;
  seg.width = w;
  seg.height = h;
  seg.rows = lattice_rows;
  seg.cols = lattice_cols;
  seg.ids = std::move(labels);
  rebuild_superpixels(seg);
  return seg;
}

// Materializes the lattice node -> superpixel map (identity by construction)
// after checking that the superpixel table really is the lattice.
inline std::vector<int> lattice_projection(const Segmentation& seg) {
  const int k_count = seg.rows * seg.cols;
  if (static_cast<int>(seg.superpixels.size()) != k_count)
    throw ConsistencyError("lattice projection: " + std::to_string(seg.superpixels.size()) +
                           " superpixels for a " + std::to_string(k_count) + "-node lattice");
  if (seg.ids.size() != static_cast<std::size_t>(seg.width) * seg.height)
    throw ConsistencyError("lattice projection: id map size does not match the image");
  std::size_t covered = 0;
  for (int k = 0; k < k_count; ++k) {
    const auto& sp = seg.superpixels[k];
    if (sp.id != k || sp.lattice_row * seg.cols + sp.lattice_col != k)
      throw ConsistencyError("lattice projection: superpixel " + std::to_string(k) + " did not grow from node (" +
                             std::to_string(k / seg.cols) + "," + std::to_string(k % seg.cols) + ")");
    for (int p : sp.pixels) {
      if (seg.ids[p] != k) throw ConsistencyError("lattice projection: pixel list of " + std::to_string(k) + " disagrees with the id map");
    }
    covered += sp.pixels.size();
  }
  if (covered != seg.ids.size()) throw ConsistencyError("lattice projection: pixel lists do not partition the image");
  std::vector<int> node_of(k_count);
  for (int k = 0; k < k_count; ++k) node_of[k] = k;
  return node_of;
}

// Full superpixel stage: Lab, seeds, k-means, merge, projection.
inline Segmentation segment(const Image& image, const SlicParams& params) {
  const Grid<double> lab = imaging::rgb_to_lab(image);
  const auto seeds = init_seeds(lab, params);
  auto clusters = slic_assign_update(lab, seeds, params);
  Segmentation seg = merge_components(clusters.ids, params.rows, params.cols);
  seg.node_of = lattice_projection(seg);
  return seg;
}

// Plurality class per superpixel; ties resolve in the order non-road, road,
// unlabeled. Empty superpixels are unlabeled.
inline std::vector<Label> sp_ground_truth(const Segmentation& seg, const LabelMap& gt) {
  if (gt.width != seg.width || gt.height != seg.height) throw DataError("sp_ground_truth: dimension mismatch");
  std::vector<Label> out(seg.superpixels.size(), Label::Unlabeled);
  for (const auto& sp : seg.superpixels) {
    if (sp.empty()) continue;
    std::array<std::size_t, 3> votes{};
    for (int p : sp.pixels) ++votes[static_cast<int>(gt.labels[p])];
    int best = 0;
    for (int c = 1; c < 3; ++c) {
      if (votes[c] > votes[best]) best = c;
    }
    out[sp.id] = static_cast<Label>(best);
  }
  return out;
}

// Exports the id map as 16-bit PGM and the superpixel table as JSON.
inline void save_segmentation(const Segmentation& seg, const std::filesystem::path& pgm,
                              const std::filesystem::path& meta) {
  if (seg.rows * seg.cols > 65536) throw DataError("segmentation: too many superpixels for a 16-bit id map");
  std::vector<std::uint16_t> ids(seg.ids.begin(), seg.ids.end());
  imaging::save_pgm16(pgm, seg.width, seg.height, ids);

  nlohmann::json j;
  j["format"] = "sproad-segmentation-1";
  j["width"] = seg.width;
  j["height"] = seg.height;
  j["rows"] = seg.rows;
  j["cols"] = seg.cols;
  j["node_of"] = seg.node_of;
  auto& sps = j["superpixels"] = nlohmann::json::array();
  for (const auto& sp : seg.superpixels) {
    sps.push_back({{"id", sp.id},
                   {"node", {sp.lattice_row, sp.lattice_col}},
                   {"centroid", {sp.centroid_row, sp.centroid_col}},
                   {"size", sp.pixels.size()},
                   {"empty", sp.empty()},
                   {"adjacency", sp.neighbors}});
  }
  imaging::write_text_atomic(meta, j.dump(1) + "\n");
}

inline Segmentation load_segmentation(const std::filesystem::path& pgm, const std::filesystem::path& meta) {
  const auto grid = imaging::load_pgm16(pgm);
  const auto bytes = imaging::read_file(meta);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + meta.string() + "': " + e.what());
  }
  Segmentation seg;
  try {
    seg.width = j.at("width").get<int>();
    seg.height = j.at("height").get<int>();
    seg.rows = j.at("rows").get<int>();
    seg.cols = j.at("cols").get<int>();
    seg.node_of = j.at("node_of").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + meta.string() + "': " + e.what());
  }
  if (grid.cols() != seg.width || grid.rows() != seg.height)
    throw FormatError("segmentation sidecar dimensions disagree with the id map");
  seg.ids.assign(grid.values().begin(), grid.values().end());
  rebuild_superpixels(seg);
  if (seg.node_of != lattice_projection(seg)) throw ConsistencyError("segmentation sidecar has a non-identity node map");
  return seg;
}

}  // namespace sproad::superpixel
