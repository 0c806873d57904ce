#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sproad/error.hpp"
#include "sproad/grid.hpp"
#include "sproad/image.hpp"

namespace sproad::eval {

struct Confusion {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct EvalReport {
  double acc = 0, f1 = 0, pre = 0, rec = 0, fpr = 0, fnr = 0;
  std::optional<double> maxf, ap;
};

inline const char* kCsvHeader = "ACC,F1,PRE,REC,FPR,FNR,MaxF,AP";

inline bool is_road(Label l) { return l == Label::Road; }

inline bool gt_counts(const LabelMap& gt, std::size_t i) { return gt.valid[i] && gt.labels[i] != Label::Unlabeled; }

// Counts over valid ground-truth pixels; road is the positive class and an
// unlabeled prediction counts as non-road.
inline Confusion confusion(const LabelMap& pred, const LabelMap& gt) {
  require_same_size(pred, gt, "confusion");
  Confusion c;
  for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
    if (!gt_counts(gt, i)) continue;
    const bool p = is_road(pred.labels[i]), g = is_road(gt.labels[i]);
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

// Closed forms; 0/0 is 0.
inline EvalReport metrics(const Confusion& c) {
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn),
               tn = static_cast<double>(c.tn);
  EvalReport r;
  r.acc = ratio(tp + tn, tp + fp + fn + tn);
  r.pre = ratio(tp, tp + fp);
  r.rec = ratio(tp, tp + fn);
  r.f1 = ratio(2.0 * r.pre * r.rec, r.pre + r.rec);
  r.fpr = ratio(fp, fp + tn);
  r.fnr = ratio(fn, fn + tp);
  return r;
}

struct MaxfAp {
  double maxf = 0.0;
  double ap = 0.0;
  double best_threshold = 0.0;
};

// Threshold sweep over every distinct probability plus {0,1}; a pixel is
// predicted road when p >= t. AP integrates precision over recall with the
// trapezoid rule, starting from recall 0 at the first finite precision.
inline MaxfAp maxf_ap(const Grid<double>& prob, const LabelMap& gt) {
  if (prob.rows() != gt.height || prob.cols() != gt.width || prob.depth() != 1)
    throw DataError("maxf_ap: dimension mismatch");
  std::vector<std::pair<double, bool>> samples;
  std::uint64_t positives = 0;
  for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
    const double p = prob.values()[i];
    if (!(p >= 0.0 && p <= 1.0)) throw DataError("maxf_ap: probability outside [0,1]: " + std::to_string(p));
    if (!gt_counts(gt, i)) continue;
    const bool road = is_road(gt.labels[i]);
    samples.emplace_back(p, road);
    positives += road;
  }
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<double> thresholds{0.0, 1.0};
  for (const auto& s : samples) thresholds.push_back(s.first);
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  struct Point {
    double recall;
    std::optional<double> precision;
  };
  std::vector<Point> curve;
  MaxfAp out;
  std::uint64_t tp = 0, fp = 0;
  std::size_t k = 0;
  for (double t : thresholds) {
    while (k < samples.size() && samples[k].first >= t) {
      (samples[k].second ? tp : fp) += 1;
      ++k;
    }
    const double rec = ratio(static_cast<double>(tp), static_cast<double>(positives));
    std::optional<double> pre;
    if (tp + fp > 0) pre = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double f1 = ratio(2.0 * pre.value_or(0.0) * rec, pre.value_or(0.0) + rec);
    if (f1 > out.maxf) {
      out.maxf = f1;
      out.best_threshold = t;
    }
    curve.push_back({rec, pre});
  }

  std::optional<double> first;
  for (const auto& p : curve) {
    if (p.precision) {
      first = p.precision;
      break;
    }
  }
  if (!first) return out;
  double prev_r = 0.0, prev_p = *first;
  for (const auto& p : curve) {
    const double pr = p.precision.value_or(*first);
    out.ap += (p.recall - prev_r) * (pr + prev_p) / 2.0;
    prev_r = p.recall;
    prev_p = pr;
  }
  return out;
}

// TP green, FP blue, FN red, blended half-and-half over the image.
inline Image overlay(const Image& image, const LabelMap& pred, const LabelMap& gt) {
  require_same_size(image, pred, "overlay");
  require_same_size(pred, gt, "overlay");
  Image out = image;
  for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
    if (!gt_counts(gt, i)) continue;
    const bool p = is_road(pred.labels[i]), g = is_road(gt.labels[i]);
    Rgb tint;
    if (p && g) tint = {0, 255, 0};
    else if (p) tint = {0, 0, 255};
    else if (g) tint = {255, 0, 0};
    else continue;
    Rgb px = image.pixel(i);
    for (int k = 0; k < 3; ++k) px[k] = static_cast<std::uint8_t>((px[k] + tint[k] + 1) / 2);
    out.data[3 * i] = px[0];
    out.data[3 * i + 1] = px[1];
    out.data[3 * i + 2] = px[2];
  }
  return out;
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ACC,F1,PRE,REC,FPR,FNR,MaxF,AP; MaxF/AP empty when not computed.
inline std::string csv_fields(const EvalReport& r) {
  std::string s = format_number(r.acc) + "," + format_number(r.f1) + "," + format_number(r.pre) + "," +
                  format_number(r.rec) + "," + format_number(r.fpr) + "," + format_number(r.fnr) + ",";
  s += (r.maxf ? format_number(*r.maxf) : "") + "," + (r.ap ? format_number(*r.ap) : "");
  return s;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j{{"ACC", r.acc}, {"F1", r.f1}, {"PRE", r.pre}, {"REC", r.rec}, {"FPR", r.fpr}, {"FNR", r.fnr}};
  j["MaxF"] = r.maxf ? nlohmann::json(*r.maxf) : nlohmann::json();
  j["AP"] = r.ap ? nlohmann::json(*r.ap) : nlohmann::json();
  return j;
}

// Arithmetic mean of each metric over the per-image reports.
inline EvalReport mean_report(const std::vector<EvalReport>& rows) {
  EvalReport m;
  if (rows.empty()) return m;
  const double n = static_cast<double>(rows.size());
  bool all_curves = true;
  double maxf = 0.0, ap = 0.0;
  for (const auto& r : rows) {
    m.acc += r.acc / n;
    m.f1 += r.f1 / n;
    m.pre += r.pre / n;
    m.rec += r.rec / n;
    m.fpr += r.fpr / n;
    m.fnr += r.fnr / n;
    if (r.maxf && r.ap) {
      maxf += *r.maxf / n;
      ap += *r.ap / n;
    } else {
      all_curves = false;
    }
  }
  if (all_curves) {
    m.maxf = maxf;
    m.ap = ap;
  }
  return m;
}

}  // namespace sproad::eval
