#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "gradleak/linalg.hpp"

namespace gradleak {

// Parameters of a fully-connected ReLU network
//   f(x) = W_H s(W_{H-1} ... s(W_0 x + b_0) ... + b_{H-1}) + b_H
// with dims = (d_0, d_1, ..., d_H, K). Hidden (ReLU) layers are numbered
// 1..H; layer i is the output of W_{i-1}. When first_layer_relu is false the
// ReLU after W_0 is omitted and layer 1 is linear.
struct FcnParams {
  std::vector<std::size_t> dims;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  bool first_layer_relu = true;
  std::uint64_t seed = 0;

  std::size_t hidden_layers() const { return dims.size() < 2 ? 0 : dims.size() - 2; }
  std::size_t input_dim() const { return dims.front(); }
  std::size_t num_classes() const { return dims.back(); }
  std::size_t width(std::size_t layer) const { return dims[layer]; }

  void Validate() const;
};

// Labels are 0-based class indices internally; the batch file stores them
// 1-based.
struct Batch {
  std::vector<Vector> inputs;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  // (channels, height, width) when the inputs are rasters.
  std::optional<std::array<std::size_t, 3>> raster;

  std::size_t size() const { return inputs.size(); }
  std::size_t input_dim() const { return inputs.empty() ? 0 : static_cast<std::size_t>(inputs.front().size()); }

  // box: additionally require every input coordinate in [-1, 1].
  void Validate(bool box = false) const;
};

// masks[m][i - 1] is the diagonal of D_i(X_m) for hidden layer i.
struct ActivationPattern {
  std::vector<std::vector<std::vector<std::uint8_t>>> masks;

  std::size_t samples() const { return masks.size(); }
  std::size_t layers() const { return masks.empty() ? 0 : masks.front().size(); }
  const std::vector<std::uint8_t>& mask(std::size_t sample, std::size_t layer) const {
    return masks[sample][layer - 1];
  }
  std::vector<std::uint8_t>& mask(std::size_t sample, std::size_t layer) {
    return masks[sample][layer - 1];
  }
  bool operator==(const ActivationPattern&) const = default;
};

using AvailabilityMask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Per-layer weight and bias gradients. When weight_mask is present, entries
// whose mask value is 0 are unavailable; their stored value is meaningless.
// Bias gradients are always available.
struct GradientBundle {
  std::vector<Matrix> weight_grads;
  std::vector<Vector> bias_grads;
  std::optional<std::vector<AvailabilityMask>> weight_mask;
  std::optional<std::size_t> batch_size_hint;

  bool available(std::size_t layer, Eigen::Index row, Eigen::Index col) const {
    return !weight_mask || (*weight_mask)[layer](row, col) != 0;
  }
  std::size_t num_values() const;
  // Layout W_0, b_0, W_1, b_1, ...; matrices row-major.
  std::vector<double> Flatten() const;
  double GlobalNorm() const;
  void Validate(const FcnParams& params) const;
};

struct LossVector {
  Vector g;
  std::optional<Vector> predicted_probs;
};

struct LossResult {
  double loss = 0.0;
  LossVector lv;
};

struct ForwardResult {
  Vector logits;
  // pattern[i - 1] for hidden layer i.
  std::vector<std::vector<std::uint8_t>> pattern;
};

// Pre- and post-activation values of every hidden layer for one input.
struct ForwardTrace {
  std::vector<Vector> pre;   // z_i = W_{i-1} f_{i-1} + b_{i-1}, i = 1..H
  std::vector<Vector> post;  // f_i, i = 0..H (post[0] = x)
  Vector logits;
  std::vector<std::vector<std::uint8_t>> pattern;
};

ForwardTrace Trace(const FcnParams& params, const Vector& x);
ForwardResult Forward(const FcnParams& params, const Vector& x);
ActivationPattern BatchPattern(const FcnParams& params, const Batch& batch);

// Cross-entropy with a max-shifted softmax; g_c = p_c - [c == y].
LossResult LossAndVector(const Vector& logits, int y);

GradientBundle PerSampleGradient(const FcnParams& params, const Vector& x, int y);
GradientBundle AverageGradient(const FcnParams& params, const Batch& batch);
// Single-threaded reference for AverageGradient.
GradientBundle AverageGradientSerial(const FcnParams& params, const Batch& batch);

FcnParams RemoveFirstRelu(const FcnParams& params);

// Global-norm clipping to clip_norm followed by i.i.d. Gaussian noise with
// standard deviation sigma * clip_norm on every coordinate.
GradientBundle DpsgdObfuscate(const GradientBundle& grad, double clip_norm, double sigma,
                              std::uint64_t rng_seed);

// Weights ~ N(0, 1/fan_in), biases ~ N(0, 1/fan_in).
FcnParams RandomParams(const std::vector<std::size_t>& dims, std::uint64_t seed,
                       bool first_layer_relu = true);

// Shifts each hidden bias so that a fraction `rate` of `probe` inputs
// activates the neuron, layer by layer from the input.
void CalibrateActivationRate(FcnParams& params, const std::vector<Vector>& probe, double rate);

// Inputs i.i.d. uniform on [-1, 1]^d0, labels uniform in [0, K).
Batch UniformBatch(std::size_t m, std::size_t d0, std::size_t num_classes, std::uint64_t seed);

// splitmix64 mix of (seed, index); used for per-trial and per-point seeds.
std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t index);

}  // namespace gradleak
