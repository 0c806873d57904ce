#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "sproad/cnn.hpp"
#include "sproad/crf/params.hpp"
#include "sproad/error.hpp"
#include "sproad/io.hpp"
#include "sproad/superpixel.hpp"

namespace sproad {

// Flat "section.key = value" settings shared by every subcommand.
struct Config {
  superpixel::SlicParams slic{};

  struct Cnn {
    double lr = 0.01;
    int epochs = 200;
    int batch = 1;
    std::uint64_t seed = 1;
    double dropout = 0.5;
    double val_fraction = 0.1;
    int conv1 = 32, conv2 = 64, fc1 = 32;
    friend bool operator==(const Cnn&, const Cnn&) = default;
  } cnn;

  struct Crf {
    std::string method = "meanfield";
    // Engine-specific defaults apply when unset (ICM beta 20, BP beta 1).
    std::optional<double> alpha, beta, T;
    int iters = 20;
    double w1 = 0.1, w2 = 3.0;
    double sigma_alpha = 60.0, sigma_beta = 10.0, sigma_gamma = 1.0;
    friend bool operator==(const Crf&, const Crf&) = default;
  } crf;

  struct Io {
    std::string image_dir = "image_2";
    std::string gt_dir = "gt_image_2";
    friend bool operator==(const Io&, const Io&) = default;
  } io;

  friend bool operator==(const Config& a, const Config& b) {
    return a.slic.rows == b.slic.rows && a.slic.cols == b.slic.cols && a.slic.compactness == b.slic.compactness &&
           a.slic.kmeans_iters == b.slic.kmeans_iters && a.cnn == b.cnn && a.crf == b.crf && a.io == b.io;
  }

  crf::CrfParams crf_params(crf::Engine engine) const {
    auto p = crf::CrfParams::defaults_for(engine);
    if (crf.alpha) p.alpha = *crf.alpha;
    if (crf.beta) p.beta = *crf.beta;
    if (crf.T) p.T = *crf.T;
    p.max_iters = crf.iters;
    p.w1 = crf.w1;
    p.w2 = crf.w2;
    p.sigma_alpha = crf.sigma_alpha;
    p.sigma_beta = crf.sigma_beta;
    p.sigma_gamma = crf.sigma_gamma;
    return p;
  }

  cnn::TrainOptions train_options() const {
    cnn::TrainOptions o;
    o.lr = cnn.lr;
    o.epochs = cnn.epochs;
    o.batch = cnn.batch;
    o.seed = cnn.seed;
    o.dropout = cnn.dropout;
    o.arch.conv1 = cnn.conv1;
    o.arch.conv2 = cnn.conv2;
    o.arch.fc1 = cnn.fc1;
    return o;
  }

  void validate() const {
    try {
      slic.validate();
    } catch (const Error& e) {
      throw UsageError(std::string("config: ") + e.what());
    }
    auto require = [](bool ok, const char* msg) {
      if (!ok) throw UsageError(std::string("config: ") + msg);
    };
    require(cnn.lr >= 0.0, "cnn.lr must be >= 0");
    require(cnn.epochs >= 0, "cnn.epochs must be >= 0");
    require(cnn.batch >= 1, "cnn.batch must be >= 1");
    require(cnn.dropout >= 0.0 && cnn.dropout < 1.0, "cnn.dropout must lie in [0,1)");
    require(cnn.conv1 >= 1 && cnn.conv2 >= 1 && cnn.fc1 >= 1, "cnn layer widths must be >= 1");
    require(cnn.val_fraction > 0.0 && cnn.val_fraction < 1.0, "cnn.val_fraction must lie in (0,1)");
    require(crf.method == "icm" || crf.method == "bp" || crf.method == "meanfield",
            "crf.method must be icm, bp or meanfield");
    require(crf.iters >= 1, "crf.iters must be >= 1");
    require(crf.sigma_alpha > 0 && crf.sigma_beta > 0 && crf.sigma_gamma > 0, "crf sigmas must be > 0");
    require(crf.w1 >= 0 && crf.w2 >= 0, "crf.w1 and crf.w2 must be >= 0");
    require(crf.alpha.value_or(1.0) >= 0 && crf.beta.value_or(1.0) >= 0 && crf.T.value_or(0.0) >= 0,
            "crf.alpha, crf.beta and crf.T must be >= 0");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (!in || !(in >> std::ws).eof()) throw UsageError("config: invalid value '" + text + "' for " + key);
  return v;
}

struct KeyBinding {
  std::function<void(Config&, const std::string&)> set;
  std::function<std::optional<std::string>(const Config&)> get;
};

inline const std::map<std::string, KeyBinding>& config_keys() {
  using S = std::string;
  auto num = [](auto member) {
    return KeyBinding{[member](Config& c, const S& v) {
                        auto& field = member(c);
                        field = parse_number<std::remove_reference_t<decltype(field)>>("", v);
                      },
                      [member](const Config& c) -> std::optional<S> {
                        const auto& field = member(const_cast<Config&>(c));
                        if constexpr (std::is_floating_point_v<std::remove_cvref_t<decltype(field)>>) {
                          return format_double(field);
                        } else {
                          return std::to_string(field);
                        }
                      }};
  };
  auto opt = [](auto member) {
    return KeyBinding{[member](Config& c, const S& v) { member(c) = parse_number<double>("", v); },
                      [member](const Config& c) -> std::optional<S> {
                        const auto& field = member(const_cast<Config&>(c));
                        if (!field) return std::nullopt;
                        return format_double(*field);
                      }};
  };
  auto str = [](auto member) {
    return KeyBinding{[member](Config& c, const S& v) { member(c) = v; },
                      [member](const Config& c) -> std::optional<S> { return member(const_cast<Config&>(c)); }};
  };
  static const std::map<std::string, KeyBinding> keys{
      {"slic.rows", num([](Config& c) -> auto& { return c.slic.rows; })},
      {"slic.cols", num([](Config& c) -> auto& { return c.slic.cols; })},
      {"slic.m", num([](Config& c) -> auto& { return c.slic.compactness; })},
      {"slic.iters", num([](Config& c) -> auto& { return c.slic.kmeans_iters; })},
      {"cnn.lr", num([](Config& c) -> auto& { return c.cnn.lr; })},
      {"cnn.epochs", num([](Config& c) -> auto& { return c.cnn.epochs; })},
      {"cnn.batch", num([](Config& c) -> auto& { return c.cnn.batch; })},
      {"cnn.seed", num([](Config& c) -> auto& { return c.cnn.seed; })},
      {"cnn.dropout", num([](Config& c) -> auto& { return c.cnn.dropout; })},
      {"cnn.conv1", num([](Config& c) -> auto& { return c.cnn.conv1; })},
      {"cnn.conv2", num([](Config& c) -> auto& { return c.cnn.conv2; })},
      {"cnn.fc1", num([](Config& c) -> auto& { return c.cnn.fc1; })},
      {"cnn.val_fraction", num([](Config& c) -> auto& { return c.cnn.val_fraction; })},
      {"crf.method", str([](Config& c) -> auto& { return c.crf.method; })},
      {"crf.alpha", opt([](Config& c) -> auto& { return c.crf.alpha; })},
      {"crf.beta", opt([](Config& c) -> auto& { return c.crf.beta; })},
      {"crf.T", opt([](Config& c) -> auto& { return c.crf.T; })},
      {"crf.iters", num([](Config& c) -> auto& { return c.crf.iters; })},
      {"crf.w1", num([](Config& c) -> auto& { return c.crf.w1; })},
      {"crf.w2", num([](Config& c) -> auto& { return c.crf.w2; })},
      {"crf.sigma_alpha", num([](Config& c) -> auto& { return c.crf.sigma_alpha; })},
      {"crf.sigma_beta", num([](Config& c) -> auto& { return c.crf.sigma_beta; })},
      {"crf.sigma_gamma", num([](Config& c) -> auto& { return c.crf.sigma_gamma; })},
      {"io.image_dir", str([](Config& c) -> auto& { return c.io.image_dir; })},
      {"io.gt_dir", str([](Config& c) -> auto& { return c.io.gt_dir; })},
  };
  return keys;
}

}  // namespace detail

// Unknown keys, malformed lines and out-of-range values raise UsageError.
inline Config parse_config(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  const auto& keys = detail::config_keys();
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(line_no) + ": expected 'section.key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto it = keys.find(key);
    if (it == keys.end()) throw UsageError("config: unknown key '" + key + "'");
    try {
      it->second.set(cfg, value);
    } catch (const UsageError&) {
      throw UsageError("config: invalid value '" + value + "' for " + key);
    }
  }
  cfg.validate();
  return cfg;
}

inline Config load_config(const std::filesystem::path& path) {
  const auto bytes = imaging::read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

// Effective configuration; parse_config(dump_config(c)) == c.
inline std::string dump_config(const Config& cfg) {
  std::string out;
  for (const auto& [key, binding] : detail::config_keys()) {
    if (auto v = binding.get(cfg)) out += key + " = " + *v + "\n";
  }
  return out;
}

}  // namespace sproad
