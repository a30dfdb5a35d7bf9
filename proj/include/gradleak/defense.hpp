#pragma once

#include <cstdint>
#include <vector>

#include "gradleak/fcn.hpp"
#include "gradleak/linalg.hpp"

namespace gradleak {

// Perturbations Delta (d0 x M, one column per sample) that leave every
// weight and bias gradient unchanged: W_0 Delta = 0 keeps all pre-activations
// fixed and A Delta^T = 0 keeps the first-layer weight gradient fixed, where
// column m of A is alpha_m = D_1 W_1^T D_2 ... W_H^T g^m.
struct PerturbationSubspace {
  Matrix basis;  // (M * d0) x dim, orthonormal columns; sample m at rows m*d0 ..
  std::size_t dim = 0;
  std::size_t samples = 0;
  std::size_t input_dim = 0;
  Matrix p0;        // I - W_0^+ W_0
  Matrix a_matrix;  // d1 x M

  // Column j of the basis as a d0 x M matrix.
  Matrix Direction(std::size_t j) const;
};

// Columns alpha_m of A for the batch, from a forward pass.
Matrix AlphaMatrix(const FcnParams& params, const Batch& batch);

// Null space of the stacked operator [I_M (x) W_0 ; A (x) I_d0] on vec(Delta).
PerturbationSubspace ComputePerturbationSubspace(const FcnParams& params, const Batch& batch);

// Pseudo-inverse route to the same space: Delta = P_0 Q^T (I - A^+ A) for an
// arbitrary M x d0 matrix Q.
Matrix ProjectorPerturbation(const PerturbationSubspace& s, const Matrix& q);

// X_m + Delta_m for a random Delta in the subspace. With box, Delta is scaled
// by the largest factor that keeps every coordinate in [-1, 1].
Batch SampleArtifactBatch(const Batch& batch, const PerturbationSubspace& s, std::uint64_t rng_seed,
                          bool box = true);

struct BoundReport {
  std::vector<Vector> eta;  // |T P_0 X_m| restricted to the null-space coordinates of W_0
  double lower_bound = 0.0;    // sum |eta_m|^2 - Tr(A^+ A Y^T Y)
  double achieved_norm = 0.0;  // |P_1 q*|^2 evaluated directly
};

BoundReport PerturbationLowerBound(const FcnParams& params, const Batch& batch);

// max over all gradient coordinates of |g - g'| / (|g| + 1e-30).
double VerifyGradientInvariance(const FcnParams& params, const Batch& original, const Batch& artifact);

}  // namespace gradleak
