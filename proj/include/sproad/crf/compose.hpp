#pragma once

#include <array>
#include <optional>
#include <vector>

#include "sproad/crf/region.hpp"
#include "sproad/grid.hpp"
#include "sproad/image.hpp"
#include "sproad/superpixel.hpp"

namespace sproad::crf {

struct ComposedResult {
  LabelMap mask;
  Grid<double> road_prob;  // H x W
};

// Superpixel classes projected to pixels, with region pixels overwritten by
// the refined labels. Region probabilities are Q(road) when marginals are
// given, the hard label otherwise.
inline ComposedResult compose_result(const superpixel::Segmentation& seg, const std::vector<int>& sp_class,
                                     const std::vector<double>& sp_road_prob, const RefinementRegion& region,
                                     const Labeling& refined,
                                     const std::vector<std::array<double, 2>>* marginals = nullptr) {
  if (sp_class.size() != seg.superpixels.size() || sp_road_prob.size() != seg.superpixels.size())
    throw DataError("compose_result: one class and probability per superpixel expected");
  if (refined.size() != region.size() || (marginals && marginals->size() != region.size()))
    throw DataError("compose_result: refined labels do not match the region");
  ComposedResult out{LabelMap(seg.width, seg.height, Label::NonRoad), Grid<double>(seg.height, seg.width, 1, 0.0)};
  for (std::size_t p = 0; p < seg.ids.size(); ++p) {
    const int id = seg.ids[p];
    out.mask.labels[p] = sp_class[id] == kRoad ? Label::Road : Label::NonRoad;
    out.road_prob.values()[p] = sp_road_prob[id];
  }
  for (std::size_t i = 0; i < region.size(); ++i) {
    const std::size_t p = static_cast<std::size_t>(region.pixels[i].row) * seg.width + region.pixels[i].col;
    out.mask.labels[p] = refined[i] == kRoad ? Label::Road : Label::NonRoad;
    out.road_prob.values()[p] = marginals ? (*marginals)[i][kRoad] : (refined[i] == kRoad ? 1.0 : 0.0);
  }
  return out;
}

}  // namespace sproad::crf
