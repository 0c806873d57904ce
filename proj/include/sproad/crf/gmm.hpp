#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "sproad/crf/region.hpp"
#include "sproad/error.hpp"
#include "sproad/image.hpp"
#include "sproad/superpixel.hpp"

namespace sproad::crf {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

inline constexpr int kComponents = 3;
inline constexpr double kCovarianceFloor = 1e-3;

struct GmmComponent {
  double weight = 0.0;
  Vec3 mean{};
  Mat3 cov{};
  // Derived from cov by prepare().
  Mat3 chol{};  // lower-triangular Cholesky factor
  double log_det = 0.0;

  void prepare() {
    const Mat3& a = cov;
    Mat3 l{};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j <= i; ++j) {
        double s = a[i][j];
        for (int k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
        if (i == j) {
          if (!(s > 0.0)) throw DataError("GMM covariance is not positive definite");
          l[i][i] = std::sqrt(s);
        } else {
          l[i][j] = s / l[j][j];
        }
      }
    }
    chol = l;
    log_det = 2.0 * (std::log(l[0][0]) + std::log(l[1][1]) + std::log(l[2][2]));
  }

  // (x - mean)^T cov^-1 (x - mean) by forward substitution.
  double mahalanobis(const Vec3& x) const {
    double y[3];
    for (int i = 0; i < 3; ++i) {
      double s = x[i] - mean[i];
      for (int k = 0; k < i; ++k) s -= chol[i][k] * y[k];
      y[i] = s / chol[i][i];
    }
    return y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
  }

  // -log pi + 1/2 log|cov| + 1/2 Mahalanobis; infinite for zero weight.
  double energy(const Vec3& x) const {
    if (!(weight > 0.0)) return std::numeric_limits<double>::infinity();
    return -std::log(weight) + 0.5 * log_det + 0.5 * mahalanobis(x);
  }

  double log_density(const Vec3& x) const {
    constexpr double log_2pi = 1.8378770664093454836;
    return -0.5 * (3.0 * log_2pi + log_det + mahalanobis(x));
  }
};

struct ClassGmm {
  std::array<GmmComponent, kComponents> components{};
  std::vector<double> log_likelihood;  // per EM step, starting with the k-means initialization
};

// Index 0 = non-road, 1 = road.
struct GmmParams {
  std::array<ClassGmm, 2> classes{};
};

inline double luminance(const Vec3& x) { return 0.299 * x[0] + 0.587 * x[1] + 0.114 * x[2]; }

inline double sq_distance(const Vec3& a, const Vec3& b) {
  const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  return d0 * d0 + d1 * d1 + d2 * d2;
}

// Seeds at the 1/6, 3/6, 5/6 luminance quantiles, then Lloyd iterations.
// Nearest-centre ties go to the smaller index; an empty cluster keeps its
// previous centre.
inline std::vector<int> kmeans(const std::vector<Vec3>& data, std::array<Vec3, kComponents>& centers, int iterations) {
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return luminance(data[a]) < luminance(data[b]); });
  for (int k = 0; k < kComponents; ++k) {
    const std::size_t q = std::min(n - 1, (2 * static_cast<std::size_t>(k) + 1) * n / (2 * kComponents));
    centers[k] = data[order[q]];
  }
  std::vector<int> assign(n, 0);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_distance(data[i], centers[0]);
      for (int k = 1; k < kComponents; ++k) {
        const double d = sq_distance(data[i], centers[k]);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      assign[i] = best;
    }
    std::array<Vec3, kComponents> sum{};
    std::array<std::size_t, kComponents> count{};
    for (std::size_t i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) sum[assign[i]][c] += data[i][c];
      ++count[assign[i]];
    }
    for (int k = 0; k < kComponents; ++k) {
      if (count[k] == 0) continue;
      for (int c = 0; c < 3; ++c) centers[k][c] = sum[k][c] / static_cast<double>(count[k]);
    }
  }
  return assign;
}

namespace detail {

inline double log_likelihood(const std::vector<Vec3>& data, const ClassGmm& g, std::vector<std::array<double, kComponents>>* resp) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::array<double, kComponents> lp{};
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < kComponents; ++k) {
      const auto& c = g.components[k];
      lp[k] = c.weight > 0.0 ? std::log(c.weight) + c.log_density(data[i]) : -std::numeric_limits<double>::infinity();
      mx = std::max(mx, lp[k]);
    }
    double s = 0.0;
    for (int k = 0; k < kComponents; ++k) s += std::exp(lp[k] - mx);
    const double lse = mx + std::log(s);
    total += lse;
    if (resp) {
      for (int k = 0; k < kComponents; ++k) (*resp)[i][k] = std::exp(lp[k] - lse);
    }
  }
  return total;
}

inline GmmComponent regularized_component(double weight, const Vec3& mean, Mat3 cov) {
  GmmComponent c;
  c.weight = weight;
  c.mean = mean;
  for (int i = 0; i < 3; ++i) cov[i][i] += kCovarianceFloor;
  c.cov = cov;
  c.prepare();
  return c;
}

}  // namespace detail

// k-means initialisation, then EM. EM stops when the relative gain in
// log-likelihood drops below 1e-4, after 50 steps, or when a step would
// lower the likelihood (that step is discarded).
inline ClassGmm fit_class_gmm(const std::vector<Vec3>& data, int kmeans_iters = 20, int em_iters = 50,
                              double tolerance = 1e-4) {
  if (data.size() < 3)
    throw DegenerateDataError("GMM needs at least 3 pixels per class (got " + std::to_string(data.size()) +
                              "); skip refinement for this image");
  const double n = static_cast<double>(data.size());
  std::array<Vec3, kComponents> centers{};
  const auto assign = kmeans(data, centers, kmeans_iters);

  ClassGmm g;
  {
    std::array<double, kComponents> count{};
    std::array<Mat3, kComponents> scatter{};
    for (std::size_t i = 0; i < data.size(); ++i) {
      const int k = assign[i];
      count[k] += 1.0;
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) scatter[k][a][b] += (data[i][a] - centers[k][a]) * (data[i][b] - centers[k][b]);
      }
    }
    for (int k = 0; k < kComponents; ++k) {
      Mat3 cov{};
      if (count[k] > 0.0) {
        for (int a = 0; a < 3; ++a) {
          for (int b = 0; b < 3; ++b) cov[a][b] = scatter[k][a][b] / count[k];
        }
      }
      g.components[k] = detail::regularized_component(count[k] / n, centers[k], cov);
    }
  }

  std::vector<std::array<double, kComponents>> resp(data.size());
  double ll = detail::log_likelihood(data, g, &resp);
  g.log_likelihood.push_back(ll);
  for (int it = 0; it < em_iters; ++it) {
    ClassGmm next;
    for (int k = 0; k < kComponents; ++k) {
      double nk = 0.0;
      Vec3 mean{};
      for (std::size_t i = 0; i < data.size(); ++i) {
        nk += resp[i][k];
        for (int a = 0; a < 3; ++a) mean[a] += resp[i][k] * data[i][a];
      }
      if (!(nk > 0.0)) {
        next.components[k] = detail::regularized_component(0.0, g.components[k].mean, Mat3{});
        continue;
      }
      for (double& v : mean) v /= nk;
      Mat3 cov{};
      for (std::size_t i = 0; i < data.size(); ++i) {
        for (int a = 0; a < 3; ++a) {
          for (int b = 0; b < 3; ++b) cov[a][b] += resp[i][k] * (data[i][a] - mean[a]) * (data[i][b] - mean[b]);
        }
      }
      for (auto& row : cov) {
        for (double& v : row) v /= nk;
      }
      next.components[k] = detail::regularized_component(nk / n, mean, cov);
    }
    std::vector<std::array<double, kComponents>> next_resp(data.size());
    const double next_ll = detail::log_likelihood(data, next, &next_resp);
    if (next_ll < ll) break;
    const double gain = (next_ll - ll) / std::max(std::abs(ll), 1e-300);
    next.log_likelihood = std::move(g.log_likelihood);
    next.log_likelihood.push_back(next_ll);
    g = std::move(next);
    resp = std::move(next_resp);
    ll = next_ll;
    if (gain < tolerance) break;
  }
  return g;
}

// Minimum component energy (hard assignment).
inline double gmm_unary(const Vec3& x, int cls, const GmmParams& params) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : params.classes.at(cls).components) best = std::min(best, c.energy(x));
  return best;
}

// Trains one GMM per class on the RGB (in [0,1]) of every pixel of the
// superpixels labelled road or non-road; unlabeled superpixels are ignored.
inline GmmParams fit_gmm(const Image& image, const superpixel::Segmentation& seg, const std::vector<Label>& sp_labels) {
  if (sp_labels.size() != seg.superpixels.size()) throw DataError("fit_gmm: one label per superpixel expected");
  std::array<std::vector<Vec3>, 2> data;
  for (const auto& sp : seg.superpixels) {
    const Label l = sp_labels[sp.id];
    if (l == Label::Unlabeled) continue;
    auto& bucket = data[l == Label::Road ? kRoad : kNonRoad];
    for (int p : sp.pixels) {
      const Rgb rgb = image.pixel(static_cast<std::size_t>(p));
      bucket.push_back({rgb[0] / 255.0, rgb[1] / 255.0, rgb[2] / 255.0});
    }
  }
  GmmParams params;
  for (int c = 0; c < 2; ++c) {
    if (data[c].size() < 3)
      throw DegenerateDataError(std::string("too few ") + (c == kRoad ? "road" : "non-road") +
                                " pixels to fit a GMM; skip refinement for this image");
    params.classes[c] = fit_class_gmm(data[c]);
  }
  return params;
}

inline UnaryTable gmm_unaries(const RefinementRegion& region, const GmmParams& params) {
  UnaryTable u(region.size());
  for (std::size_t i = 0; i < region.size(); ++i) {
    for (int l = 0; l < 2; ++l) u[i][l] = gmm_unary(region.pixels[i].rgb, l, params);
  }
  return u;
}

}  // namespace sproad::crf
