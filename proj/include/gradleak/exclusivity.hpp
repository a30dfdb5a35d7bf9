#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "gradleak/fcn.hpp"

namespace gradleak {

// Exclusively activated neurons (ExANs): a hidden neuron switched on by
// exactly one sample of the batch. Layers are 1-based as in
// ActivationPattern.
struct ExanTable {
  // indices[m][i - 1]: ExANs of sample m at hidden layer i, ascending.
  std::vector<std::vector<std::vector<std::size_t>>> indices;

  std::size_t samples() const { return indices.size(); }
  std::size_t layers() const { return indices.empty() ? 0 : indices.front().size(); }
  std::size_t count(std::size_t sample, std::size_t layer) const {
    return indices[sample][layer - 1].size();
  }
  const std::vector<std::size_t>& exans(std::size_t sample, std::size_t layer) const {
    return indices[sample][layer - 1];
  }
};

enum class ExclusivityKind { kInsecure, kSecure, kOther };
std::string_view ExclusivityKindName(ExclusivityKind kind);

struct SampleEvidence {
  std::vector<std::size_t> counts;  // N_i for i = 1..H
  bool last_layer_sufficient = false;  // N_H >= 2
  bool inner_layers_sufficient = false;  // N_i >= 1 for i < H
  bool first_layer_empty = false;  // N_1 == 0
};

struct ExclusivityState {
  ExclusivityKind kind = ExclusivityKind::kOther;
  bool batch_exceeds_first_width = false;  // M > d_1
  std::vector<SampleEvidence> evidence;
};

ExanTable ExanCounts(const ActivationPattern& patterns);

// Insecure iff every sample has N_H >= 2 and N_i >= 1 below H; Secure iff
// every sample has N_1 = 0 and M > d_1; Other otherwise.
ExclusivityState ClassifyBatch(const ExanTable& table, std::size_t m, std::size_t d1);

ExclusivityState ClassifyBatch(const FcnParams& params, const Batch& batch);

// Source of candidate batches for the sampling-based statistics.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual Batch Sample(std::size_t batch_size, std::uint64_t seed) const = 0;
};

// i.i.d. uniform inputs on [-1, 1]^d0 with uniform labels.
class UniformBatchSource final : public BatchSource {
 public:
  UniformBatchSource(std::size_t input_dim, std::size_t num_classes)
      : input_dim_(input_dim), num_classes_(num_classes) {}
  Batch Sample(std::size_t batch_size, std::uint64_t seed) const override {
    return UniformBatch(batch_size, input_dim_, num_classes_, seed);
  }

 private:
  std::size_t input_dim_;
  std::size_t num_classes_;
};

// Fraction of `trials` sampled batches that are Insecure. Trial t draws its
// batch with DeriveSeed(rng_seed, t), so the result does not depend on the
// worker count.
double InsecureProportion(const FcnParams& params, const BatchSource& source, std::size_t trials,
                          std::size_t batch_size, std::uint64_t rng_seed);

struct CurationResult {
  Batch batch;
  std::size_t trials = 0;  // 1-based index of the accepted trial
};

class CurationFailed : public Error {
 public:
  explicit CurationFailed(std::size_t trials)
      : Error(ErrorCode::kCurationFailed,
              "no insecure batch in " + std::to_string(trials) + " trials"),
        trials_(trials) {}
  std::size_t trials() const noexcept { return trials_; }

 private:
  std::size_t trials_;
};

// Rejection sampling: the first trial (in trial order) whose batch is
// Insecure.
CurationResult CurateInsecureBatch(const FcnParams& params, const BatchSource& source,
                                   std::size_t batch_size, std::size_t max_trials,
                                   std::uint64_t rng_seed);

}  // namespace gradleak
