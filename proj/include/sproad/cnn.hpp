#pragma once

// Superpixel-lattice classifier: conv3x3 -> ReLU -> conv3x3 -> ReLU ->
// dropout -> 1x1 -> ReLU -> 1x1 -> softmax over {non-road, road, unlabeled}.
// The two "fully connected" layers act per lattice node, so any R x C lattice
// is accepted.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sproad/error.hpp"
#include "sproad/features.hpp"
#include "sproad/grid.hpp"
#include "sproad/io.hpp"

namespace sproad::cnn {

inline constexpr int kClasses = 3;
inline constexpr int kIgnore = -1;
inline constexpr double kProbFloor = 1e-12;

using features::DescriptorLattice;

// Per-node class targets, row-major over the lattice; kIgnore for nodes that
// must not contribute (empty superpixels).
using Targets = std::vector<int>;

struct Tensor {
  std::string name;
  std::vector<int> dims;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::string n, std::vector<int> d) : name(std::move(n)), dims(std::move(d)) {
    std::size_t count = 1;
    for (int x : dims) count *= static_cast<std::size_t>(x);
    values.assign(count, 0.0);
  }
  std::size_t size() const { return values.size(); }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct Architecture {
  int inputs = features::kDescriptorSize;
  int conv1 = 32;
  int conv2 = 64;
  int fc1 = 32;
  int classes = kClasses;
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct Parameters {
  Tensor conv1_w, conv1_b, conv2_w, conv2_b, fc1_w, fc1_b, fc2_w, fc2_b;

  static Parameters zeros(const Architecture& a) {
    return {Tensor("conv1.w", {a.conv1, 3, 3, a.inputs}), Tensor("conv1.b", {a.conv1}),
            Tensor("conv2.w", {a.conv2, 3, 3, a.conv1}),  Tensor("conv2.b", {a.conv2}),
            Tensor("fc1.w", {a.fc1, a.conv2}),            Tensor("fc1.b", {a.fc1}),
            Tensor("fc2.w", {a.classes, a.fc1}),          Tensor("fc2.b", {a.classes})};
  }

  // Fixed serialization order.
  std::array<Tensor*, 8> tensors() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
  }
  std::array<const Tensor*, 8> tensors() const {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
  }

  Architecture architecture() const {
    return {conv1_w.dims.at(3), conv1_w.dims.at(0), conv2_w.dims.at(0), fc1_w.dims.at(0), fc2_w.dims.at(0)};
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const Tensor* t : tensors()) n += t->size();
    return n;
  }

  bool all_finite() const {
    for (const Tensor* t : tensors()) {
      for (double v : t->values) {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

struct CnnModel {
  Parameters params = Parameters::zeros({});
  double dropout = 0.5;
};

struct ClassLattice {
  Grid<double> probs;  // R x C x 3
  Grid<int> labels;    // R x C, argmax with ties to the smaller class

  double road_probability(int r, int c) const { return probs(r, c, 1); }
};

namespace layers {

// 3x3 convolution, stride 1, zero "same" padding. Weights are laid out
// (out, ky, kx, in).
inline void conv3x3_channel(const Grid<double>& in, const Tensor& w, const Tensor& b, int o, Grid<double>& out) {
  const int rows = in.rows(), cols = in.cols(), depth = in.depth();
  const double* wo = w.values.data() + static_cast<std::size_t>(o) * 9 * depth;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double acc = b.values[o];
      for (int ky = 0; ky < 3; ++ky) {
        const int rr = r + ky - 1;
        if (rr < 0 || rr >= rows) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int cc = c + kx - 1;
          if (cc < 0 || cc >= cols) continue;
          const double* x = &in(rr, cc, 0);
          const double* k = wo + (ky * 3 + kx) * depth;
          double dot = 0.0;
          for (int i = 0; i < depth; ++i) dot += k[i] * x[i];
          acc += dot;
        }
      }
      out(r, c, o) = acc;
    }
  }
}

inline Grid<double> conv3x3(const Grid<double>& in, const Tensor& w, const Tensor& b) {
  const int out_depth = w.dims[0];
  if (w.dims[3] != in.depth()) throw DataError("conv3x3: input depth " + std::to_string(in.depth()) + " != kernel depth " + std::to_string(w.dims[3]));
  Grid<double> out(in.rows(), in.cols(), out_depth);
  for (int o = 0; o < out_depth; ++o) conv3x3_channel(in, w, b, o, out);
  return out;
}

// Per-node affine map, weights (out, in).
inline void pointwise_channel(const Grid<double>& in, const Tensor& w, const Tensor& b, int o, Grid<double>& out) {
  const int depth = in.depth();
  const double* wo = w.values.data() + static_cast<std::size_t>(o) * depth;
  for (int r = 0; r < in.rows(); ++r) {
    for (int c = 0; c < in.cols(); ++c) {
      const double* x = &in(r, c, 0);
      double acc = 0.0;
      for (int i = 0; i < depth; ++i) acc += wo[i] * x[i];
      out(r, c, o) = b.values[o] + acc;
    }
  }
}

inline Grid<double> pointwise(const Grid<double>& in, const Tensor& w, const Tensor& b) {
  if (w.dims[1] != in.depth()) throw DataError("pointwise: input depth mismatch");
  Grid<double> out(in.rows(), in.cols(), w.dims[0]);
  for (int o = 0; o < w.dims[0]; ++o) pointwise_channel(in, w, b, o, out);
  return out;
}

inline Grid<double> relu(Grid<double> x) {
  for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
  return x;
}

// Row-wise softmax over the channel axis.
inline Grid<double> softmax(const Grid<double>& logits) {
  Grid<double> p(logits.rows(), logits.cols(), logits.depth());
  for (int r = 0; r < logits.rows(); ++r) {
    for (int c = 0; c < logits.cols(); ++c) {
      auto z = logits.cell(r, c);
      auto out = p.cell(r, c);
      const double mx = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (std::size_t k = 0; k < z.size(); ++k) sum += out[k] = std::exp(z[k] - mx);
      for (double& v : out) v /= sum;
    }
  }
  return p;
}

}  // namespace layers

// Uniform double in [0,1) from the raw engine output.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Every intermediate of one forward pass.
struct ForwardTrace {
  Grid<double> z1, a1, z2, a2;
  Grid<double> keep;  // dropout multipliers (empty when dropout is inactive)
  Grid<double> d2;    // a2 after dropout
  Grid<double> z3, a3, logits, probs;
};

inline Grid<double> dropout_multipliers(int rows, int cols, int depth, double p, std::uint64_t seed) {
  Grid<double> keep(rows, cols, depth);
  std::mt19937_64 rng(seed);
  const double scale = 1.0 / (1.0 - p);
  for (double& v : keep.values()) v = unit_uniform(rng) < p ? 0.0 : scale;
  return keep;
}

// dropout_seed engages dropout (with rate p); nullopt is inference mode.
inline ForwardTrace forward_trace(const Parameters& params, const DescriptorLattice& input, double p,
                                  std::optional<std::uint64_t> dropout_seed) {
  if (input.depth() != params.conv1_w.dims[3])
    throw DataError("forward: lattice depth " + std::to_string(input.depth()) + " does not match the model input " +
                    std::to_string(params.conv1_w.dims[3]));
  ForwardTrace t;
  t.z1 = layers::conv3x3(input, params.conv1_w, params.conv1_b);
  t.a1 = layers::relu(t.z1);
  t.z2 = layers::conv3x3(t.a1, params.conv2_w, params.conv2_b);
  t.a2 = layers::relu(t.z2);
  if (dropout_seed && p > 0.0) {
    t.keep = dropout_multipliers(t.a2.rows(), t.a2.cols(), t.a2.depth(), p, *dropout_seed);
    t.d2 = t.a2;
    for (std::size_t i = 0; i < t.d2.size(); ++i) t.d2.values()[i] *= t.keep.values()[i];
  } else {
    t.d2 = t.a2;
  }
  t.z3 = layers::pointwise(t.d2, params.fc1_w, params.fc1_b);
  t.a3 = layers::relu(t.z3);
  t.logits = layers::pointwise(t.a3, params.fc2_w, params.fc2_b);
  t.probs = layers::softmax(t.logits);
  return t;
}

inline Grid<int> argmax_labels(const Grid<double>& probs) {
  Grid<int> labels(probs.rows(), probs.cols(), 1);
  for (int r = 0; r < probs.rows(); ++r) {
    for (int c = 0; c < probs.cols(); ++c) {
      auto p = probs.cell(r, c);
      labels(r, c) = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    }
  }
  return labels;
}

inline ClassLattice forward(const CnnModel& model, const DescriptorLattice& input, bool training = false,
                            std::uint64_t seed = 0) {
  auto t = forward_trace(model.params, input, model.dropout,
                         training ? std::optional<std::uint64_t>(seed) : std::nullopt);
  ClassLattice out{std::move(t.probs), {}};
  out.labels = argmax_labels(out.probs);
  return out;
}

// Mean cross-entropy over the nodes whose target is not kIgnore.
inline double loss(const Grid<double>& probs, const Targets& targets) {
  if (targets.size() != static_cast<std::size_t>(probs.rows()) * probs.cols())
    throw DataError("loss: target count does not match the lattice");
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    if (targets[n] == kIgnore) continue;
    const double p = probs.values()[n * probs.depth() + targets[n]];
    sum -= std::log(std::max(p, kProbFloor));
    ++counted;
  }
  return counted ? sum / static_cast<double>(counted) : 0.0;
}

inline double loss(const ClassLattice& out, const Targets& targets) { return loss(out.probs, targets); }

namespace detail {

inline void conv3x3_backward(const Grid<double>& in, const Tensor& w, const Grid<double>& dz, Tensor& dw, Tensor& db,
                             Grid<double>* din) {
  const int rows = in.rows(), cols = in.cols(), depth = in.depth(), out_depth = w.dims[0];
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      for (int o = 0; o < out_depth; ++o) {
        const double g = dz(r, c, o);
        if (g == 0.0) continue;
        db.values[o] += g;
        for (int ky = 0; ky < 3; ++ky) {
          const int rr = r + ky - 1;
          if (rr < 0 || rr >= rows) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int cc = c + kx - 1;
            if (cc < 0 || cc >= cols) continue;
            const std::size_t k0 = ((static_cast<std::size_t>(o) * 3 + ky) * 3 + kx) * depth;
            const double* x = &in(rr, cc, 0);
            double* gw = dw.values.data() + k0;
            for (int i = 0; i < depth; ++i) gw[i] += g * x[i];
            if (din) {
              const double* k = w.values.data() + k0;
              double* gx = &(*din)(rr, cc, 0);
              for (int i = 0; i < depth; ++i) gx[i] += g * k[i];
            }
          }
        }
      }
    }
  }
}

inline void pointwise_backward(const Grid<double>& in, const Tensor& w, const Grid<double>& dz, Tensor& dw, Tensor& db,
                               Grid<double>* din) {
  const int depth = in.depth(), out_depth = w.dims[0];
  for (int r = 0; r < in.rows(); ++r) {
    for (int c = 0; c < in.cols(); ++c) {
      const double* x = &in(r, c, 0);
      for (int o = 0; o < out_depth; ++o) {
        const double g = dz(r, c, o);
        if (g == 0.0) continue;
        db.values[o] += g;
        double* gw = dw.values.data() + static_cast<std::size_t>(o) * depth;
        for (int i = 0; i < depth; ++i) gw[i] += g * x[i];
        if (din) {
          const double* k = w.values.data() + static_cast<std::size_t>(o) * depth;
          double* gx = &(*din)(r, c, 0);
          for (int i = 0; i < depth; ++i) gx[i] += g * k[i];
        }
      }
    }
  }
}

inline void relu_backward(const Grid<double>& z, Grid<double>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(z.values()[i] > 0.0)) grad.values()[i] = 0.0;
  }
}

}  // namespace detail

struct Gradient {
  Parameters grad;
  double loss = 0.0;
};

// Exact gradient of loss(forward(input)) accumulated into `into`.
inline double accumulate_gradient(const Parameters& params, const DescriptorLattice& input, const Targets& targets,
                                  double dropout, std::optional<std::uint64_t> dropout_seed, Parameters& into) {
  const ForwardTrace t = forward_trace(params, input, dropout, dropout_seed);
  const double value = loss(t.probs, targets);

  std::size_t counted = 0;
  for (int y : targets) counted += y != kIgnore;
  Grid<double> dlogits(t.probs.rows(), t.probs.cols(), t.probs.depth(), 0.0);
  if (counted) {
    const double inv = 1.0 / static_cast<double>(counted);
    for (std::size_t n = 0; n < targets.size(); ++n) {
      if (targets[n] == kIgnore) continue;
      for (int k = 0; k < t.probs.depth(); ++k) {
        const std::size_t i = n * t.probs.depth() + k;
        dlogits.values()[i] = (t.probs.values()[i] - (k == targets[n] ? 1.0 : 0.0)) * inv;
      }
    }
  }

  Grid<double> da3(t.a3.rows(), t.a3.cols(), t.a3.depth(), 0.0);
  detail::pointwise_backward(t.a3, params.fc2_w, dlogits, into.fc2_w, into.fc2_b, &da3);
  detail::relu_backward(t.z3, da3);
  Grid<double> dd2(t.d2.rows(), t.d2.cols(), t.d2.depth(), 0.0);
  detail::pointwise_backward(t.d2, params.fc1_w, da3, into.fc1_w, into.fc1_b, &dd2);
  if (!t.keep.empty()) {
    for (std::size_t i = 0; i < dd2.size(); ++i) dd2.values()[i] *= t.keep.values()[i];
  }
  detail::relu_backward(t.z2, dd2);
  Grid<double> da1(t.a1.rows(), t.a1.cols(), t.a1.depth(), 0.0);
  detail::conv3x3_backward(t.a1, params.conv2_w, dd2, into.conv2_w, into.conv2_b, &da1);
  detail::relu_backward(t.z1, da1);
  detail::conv3x3_backward(input, params.conv1_w, da1, into.conv1_w, into.conv1_b, nullptr);
  return value;
}

// Dropout disabled: the deterministic gradient used for verification.
inline Gradient backward(const CnnModel& model, const DescriptorLattice& input, const Targets& targets) {
  Gradient g{Parameters::zeros(model.params.architecture()), 0.0};
  g.loss = accumulate_gradient(model.params, input, targets, 0.0, std::nullopt, g.grad);
  return g;
}

// He-uniform weights (bound sqrt(6 / fan_in)), zero biases.
inline CnnModel init_model(const Architecture& arch, std::uint64_t seed, double dropout) {
  if (!(dropout >= 0.0 && dropout < 1.0)) throw DataError("dropout rate must lie in [0,1)");
  CnnModel model{Parameters::zeros(arch), dropout};
  std::mt19937_64 rng(seed);
  auto fill = [&](Tensor& t, int fan_in) {
    const double bound = std::sqrt(6.0 / fan_in);
    for (double& v : t.values) v = (2.0 * unit_uniform(rng) - 1.0) * bound;
  };
  fill(model.params.conv1_w, 9 * arch.inputs);
  fill(model.params.conv2_w, 9 * arch.conv1);
  fill(model.params.fc1_w, arch.conv2);
  fill(model.params.fc2_w, arch.fc1);
  return model;
}

struct Example {
  DescriptorLattice input;
  Targets targets;
};

struct TrainOptions {
  double lr = 0.01;
  int epochs = 200;
  int batch = 1;
  std::uint64_t seed = 1;
  double dropout = 0.5;
  double momentum = 0.9;
  Architecture arch{};
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double sp_accuracy = 0.0;
};

// Fraction of non-ignored nodes whose argmax equals the target.
inline double sp_accuracy(const CnnModel& model, const std::vector<Example>& data) {
  std::size_t hit = 0, total = 0;
  for (const auto& ex : data) {
    const auto out = forward(model, ex.input);
    for (std::size_t n = 0; n < ex.targets.size(); ++n) {
      if (ex.targets[n] == kIgnore) continue;
      ++total;
      hit += out.labels.values()[n] == ex.targets[n];
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

// Return false from the callback to stop early.
using EpochCallback = std::function<bool(const EpochStats&, const CnnModel&)>;

// Mini-batch SGD with momentum; v <- mu v - lr g, theta <- theta + v. The
// batch gradient is the mean of the per-example gradients.
inline CnnModel train(const std::vector<Example>& data, const TrainOptions& opt, const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw DataError("train: empty dataset");
  if (opt.batch < 1 || opt.epochs < 0 || !(opt.lr >= 0.0)) throw DataError("train: invalid hyperparameters");
  std::mt19937_64 rng(opt.seed);
  CnnModel model = init_model(opt.arch, rng(), opt.dropout);
  Parameters velocity = Parameters::zeros(opt.arch);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch));
      Parameters grad = Parameters::zeros(opt.arch);
      for (std::size_t b = start; b < end; ++b) {
        const Example& ex = data[order[b]];
        loss_sum += accumulate_gradient(model.params, ex.input, ex.targets, model.dropout, rng(), grad);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      auto params = model.params.tensors();
      auto vel = velocity.tensors();
      auto g = grad.tensors();
      for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t]->size(); ++i) {
          double& v = vel[t]->values[i];
          v = opt.momentum * v - opt.lr * g[t]->values[i] * inv;
          params[t]->values[i] += v;
        }
      }
      if (!model.params.all_finite()) throw DataError("train: parameters diverged (non-finite values)");
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(data.size()), sp_accuracy(model, data)};
    if (on_epoch && !on_epoch(stats, model)) break;
  }
  return model;
}

// "SPCNN1\0", then per tensor: u8 name length, name, u8 rank, u32 LE dims,
// f64 LE values.
inline std::vector<std::uint8_t> encode_model(const CnnModel& model) {
  std::vector<std::uint8_t> out{'S', 'P', 'C', 'N', 'N', '1', '\0'};
  for (const Tensor* t : model.params.tensors()) {
    out.push_back(static_cast<std::uint8_t>(t->name.size()));
    out.insert(out.end(), t->name.begin(), t->name.end());
    out.push_back(static_cast<std::uint8_t>(t->dims.size()));
    for (int d : t->dims) {
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(static_cast<std::uint32_t>(d) >> (8 * i)));
    }
    for (double v : t->values) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  return out;
}

inline CnnModel decode_model(std::span<const std::uint8_t> bytes, const std::string& name = "model") {
  static constexpr std::uint8_t magic[7] = {'S', 'P', 'C', 'N', 'N', '1', '\0'};
  if (bytes.size() < 7 || std::memcmp(bytes.data(), magic, 7) != 0) throw FormatError("'" + name + "': bad SPCNN1 magic");
  std::size_t pos = 7;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) throw FormatError("'" + name + "': truncated model file");
  };
  CnnModel model;
  static constexpr const char* expected[8] = {"conv1.w", "conv1.b", "conv2.w", "conv2.b",
                                              "fc1.w",   "fc1.b",   "fc2.w",   "fc2.b"};
  auto tensors = model.params.tensors();
  for (int t = 0; t < 8; ++t) {
    need(1);
    const std::size_t len = bytes[pos++];
    need(len);
    std::string tname(bytes.begin() + pos, bytes.begin() + pos + len);
    pos += len;
    if (tname != expected[t])
      throw FormatError("'" + name + "': unexpected tensor '" + tname + "' (expected '" + expected[t] + "')");
    need(1);
    const int rank = bytes[pos++];
    need(4 * static_cast<std::size_t>(rank));
    std::vector<int> dims(rank);
    std::size_t count = 1;
    for (int d = 0; d < rank; ++d) {
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes[pos++]} << (8 * i);
      if (v == 0 || v > (1u << 24)) throw FormatError("'" + name + "': tensor '" + tname + "' has an invalid dimension");
      dims[d] = static_cast<int>(v);
      count *= v;
    }
    need(8 * count);
    Tensor tensor(tname, dims);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint64_t bits = 0;
      for (int k = 0; k < 8; ++k) bits |= std::uint64_t{bytes[pos++]} << (8 * k);
      tensor.values[i] = std::bit_cast<double>(bits);
    }
    *tensors[t] = std::move(tensor);
  }
  if (pos != bytes.size()) throw FormatError("'" + name + "': trailing bytes after the last tensor");

  const auto& p = model.params;
  auto shape_ok = [](const Tensor& t, std::vector<int> d) { return t.dims == d; };
  const bool consistent =
      p.conv1_w.dims.size() == 4 && p.conv2_w.dims.size() == 4 && p.fc1_w.dims.size() == 2 &&
      p.fc2_w.dims.size() == 2 && p.conv1_w.dims[1] == 3 && p.conv1_w.dims[2] == 3 &&
      shape_ok(p.conv1_b, {p.conv1_w.dims[0]}) &&
      shape_ok(p.conv2_w, {p.conv2_w.dims[0], 3, 3, p.conv1_w.dims[0]}) &&
      shape_ok(p.conv2_b, {p.conv2_w.dims[0]}) && shape_ok(p.fc1_w, {p.fc1_w.dims[0], p.conv2_w.dims[0]}) &&
      shape_ok(p.fc1_b, {p.fc1_w.dims[0]}) && shape_ok(p.fc2_w, {kClasses, p.fc1_w.dims[0]}) &&
      shape_ok(p.fc2_b, {kClasses});
  if (!consistent) throw FormatError("'" + name + "': tensor shapes are inconsistent");
  return model;
}

inline void save_model(const CnnModel& model, const std::filesystem::path& path) {
  imaging::write_file_atomic(path, encode_model(model));
}

inline CnnModel load_model(const std::filesystem::path& path) {
  return decode_model(imaging::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Finite-difference verification.

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // perturbation crossed a ReLU kink
};

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor of the relative error |a-n| / max(|a|,|n|,floor).
  double floor = 1e-6;
  // Test hook: mutates the analytic gradient before comparison.
  std::function<void(Parameters&)> corrupt;
};

namespace detail {

// Loss after re-running the network from the first layer touched by the
// perturbed parameter; earlier activations come from the base trace.
class StagedEvaluator {
 public:
  StagedEvaluator(const DescriptorLattice& input, const Targets& targets, const ForwardTrace& base)
      : input_(input), targets_(targets), base_(base) {}

  struct Result {
    double loss;
    std::vector<std::uint8_t> pattern;  // sign of every ReLU pre-activation
  };

  // stage: 0 conv1, 1 conv2, 2 fc1, 3 fc2; channel = output channel touched.
  Result evaluate(const Parameters& p, int stage, int channel) const {
    Grid<double> z1, a1, z2, a2, z3, a3, logits;
    const Grid<double>* pa1 = &base_.a1;
    const Grid<double>* pz1 = &base_.z1;
    const Grid<double>* pa2 = &base_.a2;
    const Grid<double>* pz2 = &base_.z2;
    const Grid<double>* pa3 = &base_.a3;
    const Grid<double>* pz3 = &base_.z3;
    if (stage == 0) {
      z1 = base_.z1;
      layers::conv3x3_channel(input_, p.conv1_w, p.conv1_b, channel, z1);
      a1 = layers::relu(z1);
      pz1 = &z1;
      pa1 = &a1;
    }
    if (stage <= 1) {
      z2 = base_.z2;
      if (stage == 1) {
        layers::conv3x3_channel(*pa1, p.conv2_w, p.conv2_b, channel, z2);
      } else {
        add_channel_delta(a1, channel, p.conv2_w, z2);
      }
      a2 = layers::relu(z2);
      pz2 = &z2;
      pa2 = &a2;
    }
    if (stage <= 2) {
      if (stage == 2) {
        z3 = base_.z3;
        layers::pointwise_channel(*pa2, p.fc1_w, p.fc1_b, channel, z3);
      } else {
        z3 = layers::pointwise(*pa2, p.fc1_w, p.fc1_b);
      }
      a3 = layers::relu(z3);
      pz3 = &z3;
      pa3 = &a3;
    }
    if (stage == 3) {
      logits = base_.logits;
      layers::pointwise_channel(*pa3, p.fc2_w, p.fc2_b, channel, logits);
    } else {
      logits = layers::pointwise(*pa3, p.fc2_w, p.fc2_b);
    }
    Result res{loss(layers::softmax(logits), targets_), {}};
    res.pattern.reserve(pz1->size() + pz2->size() + pz3->size());
    for (const auto* z : {pz1, pz2, pz3}) {
      for (double v : z->values()) res.pattern.push_back(v > 0.0);
    }
    return res;
  }

 private:
  // Only input channel `ch` of conv2 changed: add its contribution delta to
  // the base pre-activations instead of redoing the whole convolution.
  void add_channel_delta(const Grid<double>& a1, int ch, const Tensor& w, Grid<double>& z2) const {
    const int rows = a1.rows(), cols = a1.cols(), depth = a1.depth(), out_depth = w.dims[0];
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const double delta = a1(r, c, ch) - base_.a1(r, c, ch);
        if (delta == 0.0) continue;
        for (int ky = 0; ky < 3; ++ky) {
          const int rr = r - (ky - 1);
          if (rr < 0 || rr >= rows) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int cc = c - (kx - 1);
            if (cc < 0 || cc >= cols) continue;
            for (int o = 0; o < out_depth; ++o) {
              z2(rr, cc, o) += delta * w.values[((static_cast<std::size_t>(o) * 3 + ky) * 3 + kx) * depth + ch];
            }
          }
        }
      }
    }
  }

  const DescriptorLattice& input_;
  const Targets& targets_;
  const ForwardTrace& base_;
};

}  // namespace detail

// Central differences for every parameter against backward(). Parameters
// whose +/-step evaluations switch any ReLU on or off are skipped and
// counted, since the loss is not differentiable across the kink.
inline GradCheckReport gradient_check(const CnnModel& model, const DescriptorLattice& input, const Targets& targets,
                                      const GradCheckOptions& opt = {}) {
  Gradient analytic = backward(model, input, targets);
  if (opt.corrupt) opt.corrupt(analytic.grad);
  const ForwardTrace base = forward_trace(model.params, input, 0.0, std::nullopt);
  detail::StagedEvaluator eval(input, targets, base);

  GradCheckReport report;
  Parameters probe = model.params;
  auto probe_tensors = probe.tensors();
  const auto grad_tensors = std::as_const(analytic.grad).tensors();
  const std::vector<std::uint8_t> base_pattern = eval.evaluate(model.params, 3, 0).pattern;

  for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
    Tensor& tensor = *probe_tensors[t];
    const int stage = static_cast<int>(t / 2);
    const bool is_bias = t % 2 == 1;
    const std::size_t per_channel = is_bias ? 1 : tensor.size() / static_cast<std::size_t>(tensor.dims[0]);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const int channel = static_cast<int>(i / per_channel);
      const double original = tensor.values[i];
      tensor.values[i] = original + opt.step;
      const auto plus = eval.evaluate(probe, stage, channel);
      tensor.values[i] = original - opt.step;
      const auto minus = eval.evaluate(probe, stage, channel);
      tensor.values[i] = original;
      if (plus.pattern != base_pattern || minus.pattern != base_pattern) {
        ++report.skipped_kinks;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * opt.step);
      const double a = grad_tensors[t]->values[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
      ++report.checked;
      if (report.checked == 1 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_tensor = tensor.name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

// Random model and lattice for gradient checking; roughly half the targets
// of each class, a few nodes ignored.
struct GradCheckCase {
  CnnModel model;
  DescriptorLattice input;
  Targets targets;
};

inline GradCheckCase random_gradcheck_case(std::uint64_t seed, int rows = 4, int cols = 4,
                                           const Architecture& arch = {}) {
  std::mt19937_64 rng(seed);
  GradCheckCase c{init_model(arch, rng(), 0.0), DescriptorLattice(rows, cols, arch.inputs), {}};
  for (auto* t : c.model.params.tensors()) {
    if (t->dims.size() == 1) {
      for (double& v : t->values) v = 0.2 * (2.0 * unit_uniform(rng) - 1.0);
    }
  }
  for (double& v : c.input.values()) v = unit_uniform(rng);
  c.targets.resize(static_cast<std::size_t>(rows) * cols);
  for (int& y : c.targets) y = static_cast<int>(rng() % 3);
  c.targets[0] = kIgnore;
  return c;
}

}  // namespace sproad::cnn
