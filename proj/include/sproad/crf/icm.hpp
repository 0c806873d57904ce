#pragma once

#include <vector>

#include "sproad/crf/gmm.hpp"
#include "sproad/crf/params.hpp"
#include "sproad/crf/region.hpp"

namespace sproad::crf {

struct IcmResult {
  Labeling labels;
  std::vector<double> energy;  // initial energy, then one entry per sweep
  int sweeps = 0;
  RunReport report;
};

// Sequential row-major sweeps. Each pixel takes the label of lower local
// energy alpha*U + beta*#disagreeing neighbours (external neighbours count
// with their fixed class); ties keep the current label.
inline IcmResult icm_refine(const RefinementRegion& region, const UnaryTable& unary, const CrfParams& params) {
  params.validate();
  if (unary.size() != region.size()) throw DataError("icm: one unary pair per region pixel expected");
  Stopwatch clock;
  IcmResult res;
  res.labels = initial_labels(region);
  res.report.engine = Engine::Icm;
  res.report.pixels = region.size();
  if (region.empty()) return res;

  const double T = params.threshold(region.size());
  res.energy.push_back(labeling_energy(region, unary, res.labels, params.alpha, params.beta, true));
  while (res.sweeps < params.max_iters) {
    std::size_t changed = 0;
    for (std::size_t i = 0; i < region.size(); ++i) {
      double local[2];
      for (int l = 0; l < 2; ++l) {
        double disagree = 0.0;
        for (int d = 0; d < 4; ++d) {
          const int j = region.neighbors[i][d];
          const int other = j != kNone ? res.labels[j] : region.external[i][d];
          if (other != kNone && other != l) disagree += 1.0;
        }
        local[l] = params.alpha * unary[i][l] + params.beta * disagree;
      }
      const int cur = res.labels[i];
      if (local[1 - cur] < local[cur]) {
        res.labels[i] = 1 - cur;
        ++changed;
      }
    }
    ++res.sweeps;
    const double e = labeling_energy(region, unary, res.labels, params.alpha, params.beta, true);
    const double decrease = res.energy.back() - e;
    res.energy.push_back(e);
    if (changed == 0 || decrease < T) break;
  }
  res.report.iterations = res.sweeps;
  res.report.final_energy = res.energy.back();
  res.report.wall_seconds = clock.seconds();
  return res;
}

inline IcmResult icm_refine(const RefinementRegion& region, const GmmParams& gmm, const CrfParams& params) {
  return icm_refine(region, gmm_unaries(region, gmm), params);
}

}  // namespace sproad::crf
