#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sproad/cnn.hpp"
#include "sproad/config.hpp"
#include "sproad/crf.hpp"
#include "sproad/features.hpp"
#include "sproad/superpixel.hpp"

namespace sproad {

struct StageTimer {
  std::vector<std::pair<std::string, double>> stages;

  template <typename Fn>
  decltype(auto) run(const std::string& name, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    struct Record {
      StageTimer& timer;
      const std::string& name;
      std::chrono::steady_clock::time_point start;
      ~Record() {
        timer.stages.emplace_back(
            name, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      }
    } record{*this, name, start};
    return fn();
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, secs] : stages) j[name] = secs;
    return j;
  }
};

// Lattice targets from a ground-truth map: the plurality label of each
// superpixel, or kIgnore for empty ones.
inline cnn::Targets lattice_targets(const superpixel::Segmentation& seg, const LabelMap& gt) {
  const auto labels = superpixel::sp_ground_truth(seg, gt);
  cnn::Targets t(seg.node_of.size(), cnn::kIgnore);
  for (std::size_t node = 0; node < seg.node_of.size(); ++node) {
    const auto& sp = seg.superpixels[seg.node_of[node]];
    if (!sp.empty()) t[node] = static_cast<int>(labels[sp.id]);
  }
  return t;
}

inline cnn::Example prepare_example(const Image& image, const LabelMap& gt, const superpixel::SlicParams& slic) {
  require_same_size(image, gt, "prepare_example");
  const auto seg = superpixel::segment(image, slic);
  return {features::build_descriptor(image, seg), lattice_targets(seg, gt)};
}

struct InferResult {
  superpixel::Segmentation seg;
  cnn::ClassLattice cnn;
  std::vector<Label> sp_labels;      // CNN class per superpixel id
  std::vector<double> sp_road_prob;  // softmax road probability per superpixel id
  LabelMap unrefined;
  LabelMap mask;
  Grid<double> road_prob;
  crf::RefinementRegion region;
  std::optional<crf::RunReport> crf;
  std::string skipped;  // reason refinement did not run, if it was requested
  StageTimer timer;

  nlohmann::json report() const {
    nlohmann::json j{{"width", seg.width},
                     {"height", seg.height},
                     {"superpixels", seg.superpixels.size()},
                     {"stage_seconds", timer.to_json()},
                     {"region_pixels", region.size()}};
    double total = 0.0;
    for (const auto& s : timer.stages) total += s.second;
    j["total_seconds"] = total;
    j["crf"] = crf ? crf->to_json() : nlohmann::json();
    if (!skipped.empty()) j["refinement_skipped"] = skipped;
    return j;
  }
};

// Full pipeline on one image: superpixels, descriptors, CNN, then optional
// refinement of the boundary superpixels.
inline InferResult infer(const Image& image, const cnn::CnnModel& model, const Config& cfg,
                         std::optional<crf::Engine> refine) {
  InferResult res;
  res.seg = res.timer.run("superpixel", [&] { return superpixel::segment(image, cfg.slic); });
  const auto desc = res.timer.run("features", [&] { return features::build_descriptor(image, res.seg); });
  res.cnn = res.timer.run("cnn", [&] { return cnn::forward(model, desc); });

  const std::size_t k = res.seg.superpixels.size();
  res.sp_labels.assign(k, Label::NonRoad);
  res.sp_road_prob.assign(k, 0.0);
  std::vector<double> binary_prob(k, 0.0);
  for (int r = 0; r < res.seg.rows; ++r) {
    for (int c = 0; c < res.seg.cols; ++c) {
      const int id = res.seg.node_of[r * res.seg.cols + c];
      res.sp_labels[id] = static_cast<Label>(res.cnn.labels(r, c));
      res.sp_road_prob[id] = res.cnn.probs(r, c, 1);
      binary_prob[id] = crf::binary_road_probability(res.cnn.probs(r, c, 0), res.cnn.probs(r, c, 1), res.cnn.probs(r, c, 2));
    }
  }
  const auto sp_class = crf::binary_classes(res.sp_labels);

  auto compose = [&](const crf::Labeling& refined, const std::vector<std::array<double, 2>>* q) {
    return res.timer.run("compose", [&] {
      return crf::compose_result(res.seg, sp_class, res.sp_road_prob, res.region, refined, q);
    });
  };

  const auto plain = crf::compose_result(res.seg, sp_class, res.sp_road_prob, crf::RefinementRegion{}, {});
  res.unrefined = plain.mask;
  if (!refine) {
    res.mask = plain.mask;
    res.road_prob = plain.road_prob;
    return res;
  }

  res.region = res.timer.run("region", [&] { return crf::extract_region(image, res.seg, sp_class, binary_prob); });
  const auto params = cfg.crf_params(*refine);
  std::optional<crf::ComposedResult> composed;
  try {
    switch (*refine) {
      case crf::Engine::Icm:
      case crf::Engine::Bp: {
        const auto unary = res.timer.run("gmm", [&] {
          return crf::gmm_unaries(res.region, crf::fit_gmm(image, res.seg, res.sp_labels));
        });
        if (*refine == crf::Engine::Icm) {
          auto out = res.timer.run("crf", [&] { return crf::icm_refine(res.region, unary, params); });
          res.crf = out.report;
          composed = compose(out.labels, nullptr);
        } else {
          auto out = res.timer.run("crf", [&] { return crf::bp_refine(res.region, unary, params); });
          res.crf = out.report;
          composed = compose(out.labels, nullptr);
        }
        break;
      }
      case crf::Engine::MeanField: {
        auto out = res.timer.run("crf", [&] { return crf::meanfield_refine(res.region, params); });
        res.crf = out.report;
        composed = compose(out.labels, &out.q);
        break;
      }
    }
  } catch (const DegenerateDataError& e) {
    res.skipped = e.what();
  }
  if (composed) {
    res.mask = std::move(composed->mask);
    res.road_prob = std::move(composed->road_prob);
  } else {
    res.mask = plain.mask;
    res.road_prob = plain.road_prob;
  }
  return res;
}

inline double pixel_accuracy(const LabelMap& pred, const LabelMap& gt) {
  require_same_size(pred, gt, "pixel_accuracy");
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
    if (!gt.valid[i] || gt.labels[i] == Label::Unlabeled) continue;
    ++total;
    hit += (pred.labels[i] == Label::Road) == (gt.labels[i] == Label::Road);
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

}  // namespace sproad
