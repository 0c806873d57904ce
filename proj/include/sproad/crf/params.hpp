#pragma once

#include <chrono>
#include <optional>
#include <string>

#include "json.hpp"
#include "sproad/error.hpp"

namespace sproad::crf {

enum class Engine { Icm, Bp, MeanField };

inline Engine parse_engine(const std::string& name) {
  if (name == "icm") return Engine::Icm;
  if (name == "bp") return Engine::Bp;
  if (name == "meanfield") return Engine::MeanField;
  throw UsageError("unknown refinement engine '" + name + "' (expected icm, bp or meanfield)");
}

inline std::string engine_name(Engine e) {
  switch (e) {
    case Engine::Icm: return "icm";
    case Engine::Bp: return "bp";
    case Engine::MeanField: return "meanfield";
  }
  return "?";
}

struct CrfParams {
  double alpha = 1.0;
  double beta = 20.0;
  // Convergence threshold; negative selects 1e-6 per region pixel.
  double T = -1.0;
  int max_iters = 20;
  double w1 = 0.1;
  double w2 = 3.0;
  double sigma_alpha = 60.0;
  double sigma_beta = 10.0;
  double sigma_gamma = 1.0;
  // Regions above this many pixels use a truncated position kernel.
  std::size_t exact_limit = 40000;

  static CrfParams defaults_for(Engine e) {
    CrfParams p;
    if (e == Engine::Bp) p.beta = 1.0;
    return p;
  }

  double threshold(std::size_t pixels) const { return T >= 0.0 ? T : 1e-6 * static_cast<double>(pixels); }

  void validate() const {
    if (max_iters < 1) throw DataError("crf.iters must be >= 1");
    if (!(sigma_alpha > 0.0 && sigma_beta > 0.0 && sigma_gamma > 0.0)) throw DataError("crf sigmas must be > 0");
    if (!(alpha >= 0.0 && beta >= 0.0 && w1 >= 0.0 && w2 >= 0.0)) throw DataError("crf weights must be >= 0");
  }
};

struct RunReport {
  Engine engine = Engine::Icm;
  int iterations = 0;
  std::optional<double> final_energy;
  double wall_seconds = 0.0;
  std::size_t pixels = 0;
  std::optional<int> truncation_radius;

  nlohmann::json to_json() const {
    nlohmann::json j{{"engine", engine_name(engine)},
                     {"iterations", iterations},
                     {"wall_seconds", wall_seconds},
                     {"region_pixels", pixels}};
    j["final_energy"] = final_energy ? nlohmann::json(*final_energy) : nlohmann::json();
    j["truncation_radius"] = truncation_radius ? nlohmann::json(*truncation_radius) : nlohmann::json();
    return j;
  }
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace sproad::crf
