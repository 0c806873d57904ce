// sproad: command-line front end for the road segmentation pipeline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sproad/cnn.hpp"
#include "sproad/config.hpp"
#include "sproad/crf.hpp"
#include "sproad/dataset.hpp"
#include "sproad/eval.hpp"
#include "sproad/features.hpp"
#include "sproad/io.hpp"
#include "sproad/pipeline.hpp"
#include "sproad/superpixel.hpp"
#include "sproad/synthetic.hpp"

namespace fs = std::filesystem;
using namespace sproad;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kData = 3 };

Config config_from(const std::string& path) { return path.empty() ? Config{} : load_config(path); }

int cmd_superpixel(const std::string& input, const std::string& config, const std::string& out_seg,
                   const std::string& out_meta, const std::string& out_features) {
  const Config cfg = config_from(config);
  const Image image = imaging::load_image(input);
  const auto seg = superpixel::segment(image, cfg.slic);
  superpixel::save_segmentation(seg, out_seg, out_meta);
  if (!out_features.empty()) features::save_descriptor(features::build_descriptor(image, seg), out_features);
  std::cout << "superpixels: " << seg.superpixels.size() << " (" << seg.rows << "x" << seg.cols << " lattice)\n";
  return kOk;
}

int cmd_train(const std::string& dataset, const std::string& config, const std::string& out_model,
              std::string log_path, std::optional<std::uint64_t> seed) {
  Config cfg = config_from(config);
  if (seed) cfg.cnn.seed = *seed;
  const auto entries = imaging::discover_dataset(dataset, cfg.io.image_dir, cfg.io.gt_dir);
  if (entries.empty()) throw DataError("no images found under '" + (fs::path(dataset) / cfg.io.image_dir).string() + "'");
  std::vector<std::string> missing;
  std::map<std::string, fs::path> truth;
  std::vector<std::string> names;
  for (const auto& e : entries) {
    if (!e.ground_truth) {
      missing.push_back(e.image.filename().string());
    } else {
      truth[e.image.string()] = *e.ground_truth;
      names.push_back(e.image.string());
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += " " + m;
    throw DataError("ground truth missing for " + std::to_string(missing.size()) + " image(s):" + list);
  }

  imaging::DatasetSplit split{names, {}};
  if (names.size() > 1) split = imaging::split_dataset(names, cfg.cnn.val_fraction, cfg.cnn.seed);

  auto load = [&](const std::vector<std::string>& files) {
    std::vector<cnn::Example> out;
    for (const auto& f : files) {
      out.push_back(prepare_example(imaging::load_image(f), imaging::load_ground_truth(truth[f]), cfg.slic));
    }
    return out;
  };
  const auto train_set = load(split.train);
  const auto val_set = load(split.validation);
  std::cout << "training on " << train_set.size() << " image(s), validating on " << val_set.size() << "\n";

  if (log_path.empty()) log_path = out_model + ".csv";
  std::string log = "epoch,mean_loss,sp_accuracy\n";
  auto on_epoch = [&](const cnn::EpochStats& s, const cnn::CnnModel&) {
    char line[96];
    std::snprintf(line, sizeof line, "%d,%.17g,%.6f\n", s.epoch, s.mean_loss, s.sp_accuracy);
    log += line;
    return true;
  };
  const auto model = cnn::train(train_set, cfg.train_options(), on_epoch);
  cnn::save_model(model, out_model);
  imaging::write_text_atomic(log_path, log);
  std::cout << "training sp accuracy: " << cnn::sp_accuracy(model, train_set) << "\n";
  if (!val_set.empty()) std::cout << "validation sp accuracy: " << cnn::sp_accuracy(model, val_set) << "\n";
  return kOk;
}

int cmd_infer(const std::string& input, const std::string& model_path, const std::string& config,
              const std::string& out_mask, const std::string& out_prob, const std::string& refine,
              const std::string& overlay_path, const std::string& gt_path, const std::string& report_path) {
  const Config cfg = config_from(config);
  std::optional<crf::Engine> engine;
  if (!refine.empty()) engine = crf::parse_engine(refine);
  if (!overlay_path.empty() && gt_path.empty()) throw UsageError("--overlay needs --gt");
  const Image image = imaging::load_image(input);
  const auto model = cnn::load_model(model_path);
  auto res = infer(image, model, cfg, engine);

  imaging::save_mask(res.mask, out_mask);
  imaging::save_probability_map(out_prob, res.road_prob);
  if (!overlay_path.empty()) {
    const LabelMap gt = imaging::load_ground_truth(gt_path);
    imaging::save_image(eval::overlay(image, res.mask, gt), overlay_path);
  }
  for (const auto& [name, secs] : res.timer.stages) std::printf("stage %-10s %9.3f ms\n", name.c_str(), secs * 1e3);
  if (res.crf) {
    std::printf("refinement %s: %zu region pixels, %d iterations\n", crf::engine_name(res.crf->engine).c_str(),
                res.crf->pixels, res.crf->iterations);
  }
  if (!res.skipped.empty()) std::fprintf(stderr, "warning: refinement skipped: %s\n", res.skipped.c_str());
  if (!report_path.empty()) imaging::write_text_atomic(report_path, res.report().dump(2) + "\n");
  return kOk;
}

// Pairs prediction stems with ground-truth stems (identical or KITTI
// "_road" form).
int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& prob_dir,
             const std::string& out_csv, const std::string& out_json) {
  if (!fs::is_directory(pred_dir)) throw IoError("prediction directory '" + pred_dir + "' not found");
  if (!fs::is_directory(gt_dir)) throw IoError("ground-truth directory '" + gt_dir + "' not found");
  std::map<std::string, fs::path> gts, probs;
  for (const auto& p : imaging::list_rasters(gt_dir)) gts[p.stem().string()] = p;
  if (!prob_dir.empty()) {
    if (!fs::is_directory(prob_dir)) throw IoError("probability directory '" + prob_dir + "' not found");
    for (const auto& p : imaging::list_rasters(prob_dir)) probs[p.stem().string()] = p;
  }

  std::vector<std::pair<fs::path, fs::path>> pairs;
  std::vector<std::string> orphans;
  std::set<std::string> used;
  for (const auto& p : imaging::list_rasters(pred_dir)) {
    bool found = false;
    for (const auto& stem : imaging::ground_truth_stems(p.stem().string())) {
      if (auto it = gts.find(stem); it != gts.end()) {
        pairs.emplace_back(p, it->second);
        used.insert(stem);
        found = true;
        break;
      }
    }
    if (!found) orphans.push_back("prediction " + p.filename().string());
    if (!prob_dir.empty() && !probs.count(p.stem().string()))
      orphans.push_back("probability map for " + p.filename().string());
  }
  for (const auto& [stem, path] : gts) {
    if (!used.count(stem)) orphans.push_back("ground truth " + path.filename().string());
  }
  if (!orphans.empty()) {
    std::string msg = "unmatched files:";
    for (const auto& o : orphans) msg += "\n  " + o;
    throw DataError(msg);
  }
  if (pairs.empty()) throw DataError("no predictions found in '" + pred_dir + "'");

  std::vector<eval::EvalReport> rows;
  std::string csv = std::string("image,") + eval::kCsvHeader + "\n";
  nlohmann::json json{{"images", nlohmann::json::array()}};
  for (const auto& [pred_path, gt_path] : pairs) {
    const LabelMap pred = imaging::load_ground_truth(pred_path);
    const LabelMap gt = imaging::load_ground_truth(gt_path);
    auto report = eval::metrics(eval::confusion(pred, gt));
    if (!prob_dir.empty()) {
      const auto curve = eval::maxf_ap(imaging::load_probability_map(probs[pred_path.stem().string()]), gt);
      report.maxf = curve.maxf;
      report.ap = curve.ap;
    }
    rows.push_back(report);
    csv += pred_path.stem().string() + "," + eval::csv_fields(report) + "\n";
    auto j = eval::to_json(report);
    j["image"] = pred_path.stem().string();
    json["images"].push_back(j);
  }
  const auto mean = eval::mean_report(rows);
  csv += "mean," + eval::csv_fields(mean) + "\n";
  json["mean"] = eval::to_json(mean);
  std::cout << csv;
  if (!out_csv.empty()) imaging::write_text_atomic(out_csv, csv);
  if (!out_json.empty()) imaging::write_text_atomic(out_json, json.dump(2) + "\n");
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, bool corrupt) {
  const auto c = cnn::random_gradcheck_case(seed);
  cnn::GradCheckOptions opt;
  if (corrupt) {
    opt.corrupt = [](cnn::Parameters& g) { g.fc1_w.values[0] = 1.5 * g.fc1_w.values[0] + 1e-3; };
  }
  const auto r = cnn::gradient_check(c.model, c.input, c.targets, opt);
  std::printf("max relative error: %.3e\n", r.max_rel_error);
  std::printf("worst parameter: %s[%zu] analytic %.10e numeric %.10e\n", r.worst_tensor.c_str(), r.worst_index,
              r.worst_analytic, r.worst_numeric);
  std::printf("checked %zu parameters, skipped %zu at ReLU kinks\n", r.checked, r.skipped_kinks);
  return r.max_rel_error < 1e-4 ? kOk : kData;
}

int cmd_synth(const std::string& out, int count, std::uint64_t seed, int width, int height, bool no_gt) {
  synthetic::SceneOptions opt;
  opt.width = width;
  opt.height = height;
  const auto files = synthetic::write_dataset(out, count, seed, opt, !no_gt);
  std::cout << "wrote " << files.size() << " image(s) to " << (fs::path(out) / "image_2").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Superpixel CNN road segmentation with CRF boundary refinement"};
  app.set_version_flag("--version", std::string("sproad ") + SPROAD_VERSION);
  app.require_subcommand(1);

  std::string input, config, out_seg, out_meta, out_features;
  auto* sp = app.add_subcommand("superpixel", "Segment an image into lattice superpixels");
  sp->add_option("--input", input, "Input image (PNG/PPM/PGM)")->required();
  sp->add_option("--config", config, "Config file");
  sp->add_option("--out-seg", out_seg, "16-bit PGM id map")->required();
  sp->add_option("--out-meta", out_meta, "JSON sidecar")->required();
  sp->add_option("--out-features", out_features, "Optional SPFEAT1 descriptor lattice");

  std::string dataset, out_model, log_path;
  std::optional<std::uint64_t> seed;
  auto* tr = app.add_subcommand("train", "Train the superpixel classifier");
  tr->add_option("--dataset", dataset, "Dataset root with image and ground-truth folders")->required();
  tr->add_option("--config", config, "Config file");
  tr->add_option("--out-model", out_model, "SPCNN1 model output")->required();
  tr->add_option("--log", log_path, "Per-epoch CSV log (default: <out-model>.csv)");
  tr->add_option("--seed", seed, "Override cnn.seed");

  std::string model, out_mask, out_prob, refine, overlay, gt, report;
  auto* inf = app.add_subcommand("infer", "Segment one image");
  inf->add_option("--input", input, "Input image")->required();
  inf->add_option("--model", model, "SPCNN1 model")->required();
  inf->add_option("--config", config, "Config file");
  inf->add_option("--out-mask", out_mask, "Binary road mask (PNG or PGM)")->required();
  inf->add_option("--out-prob", out_prob, "Road probability map (16-bit PGM)")->required();
  inf->add_option("--refine", refine, "Refinement engine")->check(CLI::IsMember({"icm", "bp", "meanfield"}));
  inf->add_option("--overlay", overlay, "Write a TP/FP/FN overlay (needs --gt)");
  inf->add_option("--gt", gt, "Ground truth used by --overlay");
  inf->add_option("--report", report, "JSON run report");

  std::string pred_dir, gt_dir, prob_dir, out_csv, out_json;
  auto* ev = app.add_subcommand("eval", "Score predicted masks against ground truth");
  ev->add_option("--pred-dir", pred_dir, "Predicted masks")->required();
  ev->add_option("--gt-dir", gt_dir, "Ground truth")->required();
  ev->add_option("--prob-dir", prob_dir, "Probability maps (enables MaxF/AP)");
  ev->add_option("--out-csv", out_csv, "Also write the CSV here");
  ev->add_option("--out-json", out_json, "JSON report");

  std::uint64_t gc_seed = 1;
  bool corrupt = false;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the CNN gradients");
  gc->add_option("--seed", gc_seed, "Random case seed");
  gc->add_flag("--corrupt-backward", corrupt, "Perturb the analytic gradient (harness self-test)")->group("");

  std::string synth_out;
  int count = 10, width = 432, height = 132;
  std::uint64_t synth_seed = 1;
  bool no_gt = false;
  auto* sy = app.add_subcommand("synth", "Generate a synthetic dataset in KITTI layout");
  sy->add_option("--out", synth_out, "Output root")->required();
  sy->add_option("--count", count, "Number of images")->check(CLI::Range(1, 100000));
  sy->add_option("--seed", synth_seed, "Random seed");
  sy->add_option("--width", width, "Image width")->check(CLI::Range(3, 100000));
  sy->add_option("--height", height, "Image height")->check(CLI::Range(3, 100000));
  sy->add_flag("--no-gt", no_gt, "Omit ground truth");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*sp) return cmd_superpixel(input, config, out_seg, out_meta, out_features);
    if (*tr) return cmd_train(dataset, config, out_model, log_path, seed);
    if (*inf) return cmd_infer(input, model, config, out_mask, out_prob, refine, overlay, gt, report);
    if (*ev) return cmd_eval(pred_dir, gt_dir, prob_dir, out_csv, out_json);
    if (*gc) return cmd_gradcheck(gc_seed, corrupt);
    if (*sy) return cmd_synth(synth_out, count, synth_seed, width, height, no_gt);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}
