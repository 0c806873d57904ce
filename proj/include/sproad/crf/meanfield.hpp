#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "sproad/crf/params.hpp"
#include "sproad/crf/region.hpp"
#include "sproad/parallel.hpp"

namespace sproad::crf {

inline constexpr double kMinProb = 1e-12;

struct MeanFieldResult {
  Labeling labels;
  std::vector<std::array<double, 2>> q;  // marginals {non-road, road}
  int iterations = 0;
  RunReport report;
};

// Called after every iteration with the iteration number and current Q.
using MeanFieldObserver = std::function<void(int, const std::vector<std::array<double, 2>>&)>;

// phi_i(l) = -log p_i(l) with the road probability clamped to [1e-12, 1].
inline UnaryTable cnn_unaries(const RefinementRegion& region) {
  UnaryTable u(region.size());
  for (std::size_t i = 0; i < region.size(); ++i) {
    const double p = region.pixels[i].road_prob;
    u[i][kRoad] = -std::log(std::clamp(p, kMinProb, 1.0));
    u[i][kNonRoad] = -std::log(std::clamp(1.0 - p, kMinProb, 1.0));
  }
  return u;
}

namespace detail {

// exp(-d^2 / (2 sigma^2)) for integer d in [0, n).
inline std::vector<double> gaussian_table(double sigma, int n) {
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int d = 0; d < n; ++d) t[d] = std::exp(-static_cast<double>(d) * d / (2.0 * sigma * sigma));
  return t;
}

// Q_i(l) proportional to exp(-phi_i(l) - penalty_i(l)).
inline std::array<double, 2> normalized(const std::array<double, 2>& phi, double pen0, double pen1) {
  const double a0 = -phi[0] - pen0, a1 = -phi[1] - pen1;
  const double m = std::max(a0, a1);
  const double e0 = std::exp(a0 - m), e1 = std::exp(a1 - m);
  const double s = e0 + e1;
  return {e0 / s, e1 / s};
}

// Kernel-weighted sums over all other region pixels. Both kernels factor
// into per-axis tables indexed by absolute integer differences, so k(i,j)
// is bitwise symmetric and the sum for i is always taken in ascending j.
class KernelSums {
 public:
  KernelSums(const RefinementRegion& region, const CrfParams& params, int radius)
      : region_(region), radius_(radius) {
    const int span = std::max(region.max_row - region.min_row, region.max_col - region.min_col) + 1;
    pos1_ = gaussian_table(params.sigma_alpha, span);
    pos2_ = gaussian_table(params.sigma_gamma, span);
    color_ = gaussian_table(params.sigma_beta, 256);
    for (std::size_t i = 0; i < region.size(); ++i) {
      if (i == 0 || region.pixels[i].row != region.pixels[i - 1].row) run_start_.push_back(i);
    }
    run_start_.push_back(region.size());
  }

  // s1[i], s2[i]: sum_j k(i,j) Q_j for both labels, per kernel.
  void compute(const std::vector<std::array<double, 2>>& q, std::vector<std::array<double, 2>>& s1,
               std::vector<std::array<double, 2>>& s2, unsigned threads) const {
    const std::size_t n = region_.size();
    s1.assign(n, {0.0, 0.0});
    s2.assign(n, {0.0, 0.0});
    if (threads <= 1) {
      symmetric(q, s1, s2);
    } else {
      parallel_for(n, [&](std::size_t begin, std::size_t end) { rows(q, s1, s2, begin, end); }, threads);
    }
  }

 private:
  // Visits j in ascending order over every run of rows within reach of i.
  template <typename Visit>
  void for_partners(std::size_t i, std::size_t first, Visit&& visit) const {
    const auto& pi = region_.pixels[i];
    const long r2 = static_cast<long>(radius_) * radius_;
    auto run = std::upper_bound(run_start_.begin(), run_start_.end() - 1, first) - 1;
    for (; run + 1 != run_start_.end(); ++run) {
      const std::size_t begin = std::max(*run, first), end = *(run + 1);
      if (begin >= end) continue;
      const int dr = std::abs(region_.pixels[begin].row - pi.row);
      if (radius_ > 0 && dr > radius_) {
        if (region_.pixels[begin].row > pi.row) break;
        continue;
      }
      const double f1 = pos1_[dr], f2 = pos2_[dr];
      for (std::size_t j = begin; j < end; ++j) {
        if (j == i) continue;
        const auto& pj = region_.pixels[j];
        const int dc = std::abs(pj.col - pi.col);
        if (radius_ > 0 && static_cast<long>(dr) * dr + static_cast<long>(dc) * dc > r2) continue;
        const double col = color_[std::abs(pi.rgb8[0] - pj.rgb8[0])] * color_[std::abs(pi.rgb8[1] - pj.rgb8[1])] *
                           color_[std::abs(pi.rgb8[2] - pj.rgb8[2])];
        visit(j, f1 * pos1_[dc] * col, f2 * pos2_[dc]);
      }
    }
  }

  void symmetric(const std::vector<std::array<double, 2>>& q, std::vector<std::array<double, 2>>& s1,
                 std::vector<std::array<double, 2>>& s2) const {
    for (std::size_t i = 0; i < region_.size(); ++i) {
      auto a1 = s1[i], a2 = s2[i];
      const auto qi = q[i];
      for_partners(i, i + 1, [&](std::size_t j, double k1, double k2) {
        a1[0] += k1 * q[j][0];
        a1[1] += k1 * q[j][1];
        a2[0] += k2 * q[j][0];
        a2[1] += k2 * q[j][1];
        s1[j][0] += k1 * qi[0];
        s1[j][1] += k1 * qi[1];
        s2[j][0] += k2 * qi[0];
        s2[j][1] += k2 * qi[1];
      });
      s1[i] = a1;
      s2[i] = a2;
    }
  }

  void rows(const std::vector<std::array<double, 2>>& q, std::vector<std::array<double, 2>>& s1,
            std::vector<std::array<double, 2>>& s2, std::size_t begin, std::size_t end) const {
    for (std::size_t i = begin; i < end; ++i) {
      std::array<double, 2> a1{0.0, 0.0}, a2{0.0, 0.0};
      for_partners(i, 0, [&](std::size_t j, double k1, double k2) {
        a1[0] += k1 * q[j][0];
        a1[1] += k1 * q[j][1];
        a2[0] += k2 * q[j][0];
        a2[1] += k2 * q[j][1];
      });
      s1[i] = a1;
      s2[i] = a2;
    }
  }

  const RefinementRegion& region_;
  int radius_;
  std::vector<double> pos1_, pos2_, color_;
  std::vector<std::size_t> run_start_;
};

}  // namespace detail

// Dense CRF with Potts compatibility and the bilateral (k1) plus spatial (k2)
// Gaussian kernels over every pair of region pixels; synchronous updates for
// max_iters iterations, starting from Q0 = softmax(-phi).
inline MeanFieldResult meanfield_refine(const RefinementRegion& region, const UnaryTable& phi, const CrfParams& params,
                                        const MeanFieldObserver& observe = {}, unsigned threads = thread_count()) {
  params.validate();
  if (phi.size() != region.size()) throw DataError("meanfield: one unary pair per region pixel expected");
  Stopwatch clock;
  MeanFieldResult res;
  res.report.engine = Engine::MeanField;
  res.report.pixels = region.size();
  res.labels = initial_labels(region);
  const std::size_t n = region.size();
  if (n == 0) return res;

  int radius = 0;
  if (n > params.exact_limit) {
    radius = static_cast<int>(std::ceil(3.0 * std::max(params.sigma_alpha, params.sigma_gamma)));
    res.report.truncation_radius = radius;
  }

  res.q.resize(n);
  for (std::size_t i = 0; i < n; ++i) res.q[i] = detail::normalized(phi[i], 0.0, 0.0);

  const bool coupled = params.w1 != 0.0 || params.w2 != 0.0;
  std::vector<std::array<double, 2>> s1, s2, next(n);
  const detail::KernelSums sums(region, params, radius);
  for (int it = 1; it <= params.max_iters; ++it) {
    if (coupled) {
      sums.compute(res.q, s1, s2, threads);
    } else {
      s1.assign(n, {0.0, 0.0});
      s2.assign(n, {0.0, 0.0});
    }
    for (std::size_t i = 0; i < n; ++i) {
      // Potts: label l is penalised by the mass on the other label.
      const double pen0 = params.w1 * s1[i][1] + params.w2 * s2[i][1];
      const double pen1 = params.w1 * s1[i][0] + params.w2 * s2[i][0];
      next[i] = detail::normalized(phi[i], pen0, pen1);
    }
    res.q.swap(next);
    res.iterations = it;
    if (observe) observe(it, res.q);
  }
  for (std::size_t i = 0; i < n; ++i) res.labels[i] = res.q[i][kRoad] > res.q[i][kNonRoad] ? kRoad : kNonRoad;
  res.report.iterations = res.iterations;
  res.report.wall_seconds = clock.seconds();
  return res;
}

inline MeanFieldResult meanfield_refine(const RefinementRegion& region, const CrfParams& params,
                                        const MeanFieldObserver& observe = {}) {
  return meanfield_refine(region, cnn_unaries(region), params, observe);
}

}  // namespace sproad::crf
