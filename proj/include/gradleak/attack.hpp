#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gradleak/fcn.hpp"
#include "gradleak/linalg.hpp"

namespace gradleak {

// How the per-sample scale g_1 of the loss vector is fixed once its ratios
// are known.
enum class G1Policy {
  // 2/3 of the upper end of the feasible range implied by sum_{c != Y} p_c <= 1.
  kTwoThirds,
  // Least-squares fit of the scales against the exactly known bias gradients:
  // M db_H = sum_m g^m and, on every last-layer ExAN j of sample m,
  // M db_{H-1}[j] = (W_H^T g^m)_j.
  kBiasRefine,
};

std::string_view G1PolicyName(G1Policy p);
G1Policy ParseG1Policy(std::string_view name);

struct AttackOptions {
  double zero_tol = 1e-9;   // relative to the layer's max |gradient|
  double group_tol = 1e-6;  // relative difference when clustering ratios
  G1Policy g1_policy = G1Policy::kBiasRefine;
  double subset_tol = 1e-8;  // absolute, for the last-layer subset sums
  bool strict_subset_sum = false;  // throw SubsetSumAmbiguous instead of falling back
  std::size_t max_subset_samples = 44;
  LsmrOptions lsmr;
};

struct LossProfile {
  std::size_t batch_size = 0;
  // Columns of the last weight gradient owned by each sample (its ExANs at
  // the last hidden layer), ascending.
  std::vector<std::vector<std::size_t>> exan_groups;
  // ratio_table(m, c) = g_c^m / g_1^m; column 0 is exactly 1.
  Matrix ratio_table;
  std::vector<int> labels;  // 0-based
  std::vector<double> g1_values;
  std::vector<Vector> loss_vectors;
  std::size_t denominator_row = 0;
  std::vector<std::string> warnings;
};

LossProfile InferLossProfile(const GradientBundle& grad, const FcnParams& params,
                             const AttackOptions& opts = {});

struct PatternDiagnostics {
  std::size_t subset_sum_neurons = 0;      // last-layer neurons resolved by subset sum
  std::size_t resolved_by_column = 0;      // ties broken by the last-layer column fit
  std::vector<std::size_t> ambiguous_neurons;
  std::vector<std::size_t> inexact_neurons;  // no subset within tolerance
};

struct PatternRecovery {
  ActivationPattern patterns;
  PatternDiagnostics diagnostics;
};

PatternRecovery InferActivationPatterns(const GradientBundle& grad, const LossProfile& profile,
                                        const FcnParams& params, const AttackOptions& opts = {});

// Unknowns are the stacked inputs (sample m occupies columns m*d0 .. m*d0+d0-1).
SparseSystem AssembleLinearSystem(const GradientBundle& grad, const LossProfile& profile,
                                  const ActivationPattern& patterns, const FcnParams& params);

struct StageTiming {
  std::string stage;
  double ms = 0.0;
};

struct ReconResult {
  std::vector<Vector> inputs;
  std::vector<int> labels;
  double residual_norm = 0.0;
  std::int64_t iterations = 0;
  bool converged = true;
  LossProfile profile;
  PatternDiagnostics pattern_diagnostics;
  std::int64_t system_rows = 0;
  std::int64_t system_cols = 0;
  std::size_t system_nnz = 0;
  std::vector<StageTiming> timings;
  std::vector<std::string> warnings;
};

// Stage names used in NotApplicable errors.
inline constexpr std::string_view kStageLossProfile = "loss-profile";
inline constexpr std::string_view kStagePatterns = "activation-patterns";
inline constexpr std::string_view kStageSystem = "linear-system";
inline constexpr std::string_view kStageSolve = "solve";

ReconResult Reconstruct(const GradientBundle& grad, const FcnParams& params,
                        const AttackOptions& opts = {});

// Marks all but a uniformly random beta-fraction of the weight-gradient
// entries below the last layer unavailable. The subset is a prefix of one
// seed-determined permutation, so masks for increasing beta are nested.
GradientBundle MaskGradient(const GradientBundle& grad, double beta, std::uint64_t rng_seed);

}  // namespace gradleak
