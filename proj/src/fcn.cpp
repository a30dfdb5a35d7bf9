#include "gradleak/fcn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "gradleak/kernels.hpp"

namespace gradleak {

namespace {

std::string Shape(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

void FcnParams::Validate() const {
  if (dims.size() < 2) throw Error(ErrorCode::kShapeMismatch, "need at least input and output dims");
  for (auto d : dims) {
    if (d == 0) throw Error(ErrorCode::kShapeMismatch, "zero-width layer");
  }
  const std::size_t layers = dims.size() - 1;
  if (weights.size() != layers || biases.size() != layers) {
    throw Error(ErrorCode::kShapeMismatch, "expected " + std::to_string(layers) + " weight layers");
  }
  for (std::size_t i = 0; i < layers; ++i) {
    const auto rows = static_cast<Eigen::Index>(dims[i + 1]);
    const auto cols = static_cast<Eigen::Index>(dims[i]);
    if (weights[i].rows() != rows || weights[i].cols() != cols) {
      throw Error(ErrorCode::kShapeMismatch, "W_" + std::to_string(i) + " is " +
                                                 Shape(weights[i].rows(), weights[i].cols()) +
                                                 ", expected " + Shape(rows, cols));
    }
    if (biases[i].size() != rows) {
      throw Error(ErrorCode::kShapeMismatch, "b_" + std::to_string(i) + " has wrong length");
    }
    RequireFinite(weights[i], "weights");
    RequireFinite(biases[i], "biases");
  }
}

void Batch::Validate(bool box) const {
  if (inputs.empty()) throw Error(ErrorCode::kEmptyBatch, "batch has no samples");
  if (labels.size() != inputs.size()) throw Error(ErrorCode::kShapeMismatch, "labels/inputs count differ");
  const auto d0 = inputs.front().size();
  for (const auto& x : inputs) {
    if (x.size() != d0) throw Error(ErrorCode::kShapeMismatch, "inputs differ in dimension");
    RequireFinite(x, "batch input");
    if (box && (x.maxCoeff() > 1.0 || x.minCoeff() < -1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "input outside [-1, 1]");
    }
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw Error(ErrorCode::kInvalidArgument, "label " + std::to_string(y) + " out of range");
    }
  }
  if (raster) {
    const auto& r = *raster;
    if (r[0] * r[1] * r[2] != static_cast<std::size_t>(d0)) {
      throw Error(ErrorCode::kShapeMismatch, "raster shape does not match input dimension");
    }
  }
}

std::size_t GradientBundle::num_values() const {
  std::size_t n = 0;
  for (const auto& w : weight_grads) n += static_cast<std::size_t>(w.size());
  for (const auto& b : bias_grads) n += static_cast<std::size_t>(b.size());
  return n;
}

std::vector<double> GradientBundle::Flatten() const {
  std::vector<double> out;
  out.reserve(num_values());
  for (std::size_t i = 0; i < weight_grads.size(); ++i) {
    const auto& w = weight_grads[i];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) out.push_back(w(r, c));
    }
    for (Eigen::Index r = 0; r < bias_grads[i].size(); ++r) out.push_back(bias_grads[i](r));
  }
  return out;
}

double GradientBundle::GlobalNorm() const {
  double s = 0.0;
  for (const auto& w : weight_grads) s += w.squaredNorm();
  for (const auto& b : bias_grads) s += b.squaredNorm();
  return std::sqrt(s);
}

void GradientBundle::Validate(const FcnParams& params) const {
  const std::size_t layers = params.weights.size();
  if (weight_grads.size() != layers || bias_grads.size() != layers) {
    throw Error(ErrorCode::kShapeMismatch, "gradient layer count differs from model");
  }
  for (std::size_t i = 0; i < layers; ++i) {
    if (weight_grads[i].rows() != params.weights[i].rows() ||
        weight_grads[i].cols() != params.weights[i].cols() ||
        bias_grads[i].size() != params.biases[i].size()) {
      throw Error(ErrorCode::kShapeMismatch, "gradient layer " + std::to_string(i) + " has wrong shape");
    }
    if (weight_mask && ((*weight_mask)[i].rows() != weight_grads[i].rows() ||
                        (*weight_mask)[i].cols() != weight_grads[i].cols())) {
      throw Error(ErrorCode::kShapeMismatch, "mask layer " + std::to_string(i) + " has wrong shape");
    }
  }
  if (weight_mask && weight_mask->size() != layers) {
    throw Error(ErrorCode::kShapeMismatch, "mask layer count differs from model");
  }
}

ForwardTrace Trace(const FcnParams& params, const Vector& x) {
  if (x.size() != static_cast<Eigen::Index>(params.input_dim())) {
    throw Error(ErrorCode::kShapeMismatch, "input has length " + std::to_string(x.size()) +
                                               ", model expects " + std::to_string(params.input_dim()));
  }
  const std::size_t hidden = params.hidden_layers();
  ForwardTrace t;
  t.post.reserve(hidden + 1);
  t.post.push_back(x);
  for (std::size_t i = 0; i < hidden; ++i) {
    Vector z = params.weights[i] * t.post.back() + params.biases[i];
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(z.size()), 1);
    Vector f = z;
    if (i > 0 || params.first_layer_relu) {
      for (Eigen::Index j = 0; j < z.size(); ++j) {
        // sigma(0) = 0, so an exactly-zero pre-activation is inactive.
        if (!(z(j) > 0.0)) {
          mask[static_cast<std::size_t>(j)] = 0;
          f(j) = 0.0;
        }
      }
    }
    t.pre.push_back(std::move(z));
    t.post.push_back(std::move(f));
    t.pattern.push_back(std::move(mask));
  }
  t.logits = params.weights[hidden] * t.post.back() + params.biases[hidden];
  return t;
}

ForwardResult Forward(const FcnParams& params, const Vector& x) {
  ForwardTrace t = Trace(params, x);
  return {std::move(t.logits), std::move(t.pattern)};
}

ActivationPattern BatchPattern(const FcnParams& params, const Batch& batch) {
  ActivationPattern p;
  p.masks.resize(batch.size());
  kernels::ParallelFor(static_cast<std::int64_t>(batch.size()), [&](std::int64_t m) {
    p.masks[static_cast<std::size_t>(m)] = Forward(params, batch.inputs[static_cast<std::size_t>(m)]).pattern;
  });
  return p;
}

LossResult LossAndVector(const Vector& logits, int y) {
  if (y < 0 || y >= logits.size()) {
    throw Error(ErrorCode::kInvalidArgument, "label " + std::to_string(y) + " out of range");
  }
  const double shift = logits.maxCoeff();
  Vector e = (logits.array() - shift).exp().matrix();
  const double z = e.sum();
  Vector p = e / z;
  LossResult r;
  r.loss = -(logits(y) - shift - std::log(z));
  r.lv.g = p;
  r.lv.g(y) -= 1.0;
  r.lv.predicted_probs = std::move(p);
  return r;
}

GradientBundle PerSampleGradient(const FcnParams& params, const Vector& x, int y) {
  const ForwardTrace t = Trace(params, x);
  const std::size_t hidden = params.hidden_layers();
  GradientBundle g;
  g.weight_grads.resize(hidden + 1);
  g.bias_grads.resize(hidden + 1);
  Vector delta = LossAndVector(t.logits, y).lv.g;
  for (std::size_t i = hidden + 1; i-- > 0;) {
    g.weight_grads[i] = delta * t.post[i].transpose();
    g.bias_grads[i] = delta;
    if (i == 0) break;
    Vector back = params.weights[i].transpose() * delta;
    const auto& mask = t.pattern[i - 1];
    for (Eigen::Index j = 0; j < back.size(); ++j) {
      if (mask[static_cast<std::size_t>(j)] == 0) back(j) = 0.0;
    }
    delta = std::move(back);
  }
  return g;
}

namespace {

GradientBundle SumInOrder(const std::vector<GradientBundle>& parts, std::size_t m) {
  GradientBundle acc = parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < acc.weight_grads.size(); ++i) {
      acc.weight_grads[i] += parts[k].weight_grads[i];
      acc.bias_grads[i] += parts[k].bias_grads[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < acc.weight_grads.size(); ++i) {
    acc.weight_grads[i] *= inv;
    acc.bias_grads[i] *= inv;
  }
  acc.batch_size_hint = m;
  return acc;
}

}  // namespace

GradientBundle AverageGradient(const FcnParams& params, const Batch& batch) {
  if (batch.size() == 0) throw Error(ErrorCode::kEmptyBatch, "average gradient of an empty batch");
  std::vector<GradientBundle> parts(batch.size());
  // Per-sample gradients in parallel; the reduction runs in sample order so
  // the result is bit-identical to the serial path.
  kernels::ParallelFor(static_cast<std::int64_t>(batch.size()), [&](std::int64_t m) {
    const auto k = static_cast<std::size_t>(m);
    parts[k] = PerSampleGradient(params, batch.inputs[k], batch.labels[k]);
  });
  return SumInOrder(parts, batch.size());
}

GradientBundle AverageGradientSerial(const FcnParams& params, const Batch& batch) {
  if (batch.size() == 0) throw Error(ErrorCode::kEmptyBatch, "average gradient of an empty batch");
  std::vector<GradientBundle> parts;
  parts.reserve(batch.size());
  for (std::size_t m = 0; m < batch.size(); ++m) {
    parts.push_back(PerSampleGradient(params, batch.inputs[m], batch.labels[m]));
  }
  return SumInOrder(parts, batch.size());
}

FcnParams RemoveFirstRelu(const FcnParams& params) {
  if (!params.first_layer_relu || params.hidden_layers() == 0) {
    throw Error(ErrorCode::kAlreadyLinear, "first layer has no ReLU");
  }
  FcnParams out = params;
  out.first_layer_relu = false;
  return out;
}

GradientBundle DpsgdObfuscate(const GradientBundle& grad, double clip_norm, double sigma,
                              std::uint64_t rng_seed) {
  if (!(clip_norm > 0.0)) throw Error(ErrorCode::kInvalidArgument, "clip_norm must be positive");
  if (!(sigma >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "sigma must be non-negative");
  GradientBundle out = grad;
  const double norm = grad.GlobalNorm();
  const double scale = norm > clip_norm ? clip_norm / norm : 1.0;
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> noise(0.0, sigma * clip_norm);
  const bool add_noise = sigma > 0.0;
  for (std::size_t i = 0; i < out.weight_grads.size(); ++i) {
    auto& w = out.weight_grads[i];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        w(r, c) = w(r, c) * scale + (add_noise ? noise(rng) : 0.0);
      }
    }
    auto& b = out.bias_grads[i];
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = b(r) * scale + (add_noise ? noise(rng) : 0.0);
  }
  return out;
}

FcnParams RandomParams(const std::vector<std::size_t>& dims, std::uint64_t seed, bool first_layer_relu) {
  FcnParams p;
  p.dims = dims;
  p.first_layer_relu = first_layer_relu;
  p.seed = seed;
  if (dims.size() < 2) throw Error(ErrorCode::kShapeMismatch, "need at least input and output dims");
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const double std = 1.0 / std::sqrt(static_cast<double>(dims[i]));
    std::normal_distribution<double> dist(0.0, std);
    Matrix w(static_cast<Eigen::Index>(dims[i + 1]), static_cast<Eigen::Index>(dims[i]));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
    }
    Vector b(static_cast<Eigen::Index>(dims[i + 1]));
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = dist(rng);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  p.Validate();
  return p;
}

void CalibrateActivationRate(FcnParams& params, const std::vector<Vector>& probe, double rate) {
  if (!(rate > 0.0 && rate < 1.0)) throw Error(ErrorCode::kInvalidArgument, "rate must be in (0, 1)");
  if (probe.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need at least two probe inputs");
  std::vector<Vector> cur = probe;
  const std::size_t n = probe.size();
  auto cut = static_cast<std::size_t>(std::floor((1.0 - rate) * static_cast<double>(n)));
  cut = std::clamp<std::size_t>(cut, 1, n - 1);
  for (std::size_t i = 0; i < params.hidden_layers(); ++i) {
    const auto width = static_cast<Eigen::Index>(params.dims[i + 1]);
    Matrix z(width, static_cast<Eigen::Index>(n));
    for (std::size_t s = 0; s < n; ++s) {
      z.col(static_cast<Eigen::Index>(s)) = params.weights[i] * cur[s] + params.biases[i];
    }
    for (Eigen::Index j = 0; j < width; ++j) {
      std::vector<double> vals(n);
      for (std::size_t s = 0; s < n; ++s) vals[s] = z(j, static_cast<Eigen::Index>(s));
      std::sort(vals.begin(), vals.end());
      const double threshold = 0.5 * (vals[cut - 1] + vals[cut]);
      params.biases[i](j) -= threshold;
    }
    const bool relu = i > 0 || params.first_layer_relu;
    for (std::size_t s = 0; s < n; ++s) {
      Vector f = params.weights[i] * cur[s] + params.biases[i];
      if (relu) f = f.cwiseMax(0.0);
      cur[s] = std::move(f);
    }
  }
}

Batch UniformBatch(std::size_t m, std::size_t d0, std::size_t num_classes, std::uint64_t seed) {
  if (m == 0) throw Error(ErrorCode::kEmptyBatch, "batch size must be at least 1");
  if (num_classes == 0) throw Error(ErrorCode::kInvalidArgument, "need at least one class");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<int> label(0, static_cast<int>(num_classes) - 1);
  Batch b;
  b.num_classes = num_classes;
  for (std::size_t k = 0; k < m; ++k) {
    Vector x(static_cast<Eigen::Index>(d0));
    for (Eigen::Index j = 0; j < x.size(); ++j) x(j) = unit(rng);
    b.inputs.push_back(std::move(x));
    b.labels.push_back(label(rng));
  }
  return b;
}

std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace gradleak
