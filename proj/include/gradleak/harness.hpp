#pragma once

// Subcommand drivers behind tools/gradleak. Each Run* writes its artifacts
// and a manifest.json under the output directory and returns the process
// exit code: 0 on success, 2 when the attack is not applicable. Other
// failures propagate as gradleak::Error.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gradleak/attack.hpp"
#include "gradleak/fcn.hpp"

namespace gradleak::harness {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitNotApplicable = 2;

struct ModelSpec {
  std::vector<std::size_t> dims;
  std::uint64_t seed = 0;
  bool first_layer_relu = true;
  // When set, hidden biases are shifted so that this fraction of uniform
  // probe inputs activates each neuron.
  std::optional<double> activation_rate;
};

FcnParams GenerateModel(const ModelSpec& spec);

struct BatchSpec {
  std::size_t m = 8;
  std::size_t d0 = 0;
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::optional<std::array<std::size_t, 3>> raster;
};

Batch GenerateBatch(const BatchSpec& spec);

struct GenModelConfig {
  ModelSpec spec;
  fs::path out;
};
int RunGenModel(const GenModelConfig& cfg);

struct GenBatchConfig {
  BatchSpec spec;
  fs::path out;
  // Reject-sample until the batch is Insecure for this model.
  std::optional<fs::path> curate_model;
  std::size_t max_trials = 100000;
};
int RunGenBatch(const GenBatchConfig& cfg);

struct GradientConfig {
  fs::path model;
  fs::path batch;
  fs::path out;
  std::optional<double> dpsgd_clip;
  std::optional<double> dpsgd_sigma;
  std::uint64_t seed = 0;
};
int RunGradient(const GradientConfig& cfg);

struct AttackConfig {
  fs::path model;
  fs::path gradient;
  fs::path out;
  AttackOptions opts;
  std::optional<double> beta;
  std::uint64_t seed = 0;
  std::optional<fs::path> truth;  // scored against when given
};
int RunAttack(const AttackConfig& cfg);

struct DefendConfig {
  fs::path model;
  fs::path batch;
  fs::path out;
  std::uint64_t seed = 0;
  std::size_t samples = 1;
  bool box = true;
};
int RunDefend(const DefendConfig& cfg);

struct AuditConfig {
  fs::path model;
  fs::path batch;
  fs::path out;
};
int RunAudit(const AuditConfig& cfg);

struct StatsConfig {
  ModelSpec model;  // dims (d0, d1, ..., K); the axis rewrites the hidden part
  std::vector<std::size_t> widths;  // (d0, w, K) per entry
  std::vector<std::size_t> depths;  // (d0, w x depth, K) per entry, w = depth_width
  std::size_t depth_width = 256;
  std::size_t batch_size = 8;
  std::size_t trials = 1000;
  std::uint64_t seed = 0;
  fs::path out;
};
int RunStats(const StatsConfig& cfg);

struct SweepConfig {
  ModelSpec model;
  std::size_t batch_size = 8;
  std::uint64_t batch_seed = 0;
  std::size_t max_trials = 100000;
  std::vector<std::size_t> batch_sizes;
  std::vector<std::size_t> widths;
  std::vector<std::size_t> depths;
  std::size_t depth_width = 256;
  std::vector<double> betas;
  std::uint64_t mask_seed = 0;
  AttackOptions opts;
  fs::path out;
};
int RunSweep(const SweepConfig& cfg);

}  // namespace gradleak::harness
