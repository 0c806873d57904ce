#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "sproad/crf/gmm.hpp"
#include "sproad/crf/params.hpp"
#include "sproad/crf/region.hpp"

namespace sproad::crf {

using Message = std::array<double, 2>;

struct BpResult {
  Labeling labels;
  std::vector<std::array<double, 2>> beliefs;
  int iterations = 0;
  double max_change = 0.0;  // of the last iteration
  RunReport report;
};

// Min-sum loopy BP on the region graph (external pixels are not part of it).
// An iteration is four synchronous passes over the messages sent right,
// left, up and down; each pass reads the messages left by the previous one.
// Messages are normalised to a zero minimum.
inline BpResult bp_refine(const RefinementRegion& region, const UnaryTable& unary, const CrfParams& params) {
  params.validate();
  if (unary.size() != region.size()) throw DataError("bp: one unary pair per region pixel expected");
  Stopwatch clock;
  BpResult res;
  res.report.engine = Engine::Bp;
  res.report.pixels = region.size();
  res.labels = initial_labels(region);
  const std::size_t n = region.size();
  if (n == 0) return res;

  // incoming[i][d]: message from the neighbour in slot d to i.
  std::vector<std::array<Message, 4>> incoming(n);
  for (auto& m : incoming) m.fill({0.0, 0.0});
  std::vector<Message> outgoing(n);
  const double T = params.threshold(n);

  while (res.iterations < params.max_iters) {
    double max_change = 0.0;
    for (int d = 0; d < 4; ++d) {
      for (std::size_t i = 0; i < n; ++i) {
        if (region.neighbors[i][d] == kNone) continue;
        std::array<double, 2> h;
        for (int lp = 0; lp < 2; ++lp) {
          h[lp] = params.alpha * unary[i][lp];
          for (int k = 0; k < 4; ++k) {
            if (k != d && region.neighbors[i][k] != kNone) h[lp] += incoming[i][k][lp];
          }
        }
        Message m;
        for (int l = 0; l < 2; ++l) m[l] = std::min(h[l], h[1 - l] + params.beta);
        const double lo = std::min(m[0], m[1]);
        m[0] -= lo;
        m[1] -= lo;
        outgoing[i] = m;
      }
      for (std::size_t i = 0; i < n; ++i) {
        const int j = region.neighbors[i][d];
        if (j == kNone) continue;
        Message& slot = incoming[j][d ^ 1];
        max_change = std::max({max_change, std::abs(slot[0] - outgoing[i][0]), std::abs(slot[1] - outgoing[i][1])});
        slot = outgoing[i];
      }
    }
    ++res.iterations;
    res.max_change = max_change;
    if (max_change < T) break;
  }

  res.beliefs.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int l = 0; l < 2; ++l) {
      double b = params.alpha * unary[i][l];
      for (int k = 0; k < 4; ++k) {
        if (region.neighbors[i][k] != kNone) b += incoming[i][k][l];
      }
      res.beliefs[i][l] = b;
    }
    res.labels[i] = res.beliefs[i][kRoad] < res.beliefs[i][kNonRoad] ? kRoad : kNonRoad;
  }
  res.report.iterations = res.iterations;
  res.report.final_energy = labeling_energy(region, unary, res.labels, params.alpha, params.beta, false);
  res.report.wall_seconds = clock.seconds();
  return res;
}

inline BpResult bp_refine(const RefinementRegion& region, const GmmParams& gmm, const CrfParams& params) {
  return bp_refine(region, gmm_unaries(region, gmm), params);
}

}  // namespace sproad::crf
