#include "gradleak/defense.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "gradleak/exclusivity.hpp"

namespace gradleak {

Matrix PerturbationSubspace::Direction(std::size_t j) const {
  const Vector v = basis.col(static_cast<Eigen::Index>(j));
  return Eigen::Map<const Matrix>(v.data(), static_cast<Eigen::Index>(input_dim),
                                  static_cast<Eigen::Index>(samples));
}

Matrix AlphaMatrix(const FcnParams& params, const Batch& batch) {
  const std::size_t h = params.hidden_layers();
  const std::size_t m = batch.size();
  Matrix a(static_cast<Eigen::Index>(params.width(1)), static_cast<Eigen::Index>(m));
  for (std::size_t s = 0; s < m; ++s) {
    const ForwardTrace tr = Trace(params, batch.inputs[s]);
    Vector d = LossAndVector(tr.logits, batch.labels[s]).lv.g;
    for (std::size_t i = h; i >= 1; --i) {
      d = params.weights[i].transpose() * d;
      const auto& mask = tr.pattern[i - 1];
      for (Eigen::Index t = 0; t < d.size(); ++t) {
        if (!mask[static_cast<std::size_t>(t)]) d(t) = 0.0;
      }
    }
    a.col(static_cast<Eigen::Index>(s)) = d;
  }
  return a;
}

namespace {

void CheckPreconditions(const FcnParams& params, const Batch& batch) {
  params.Validate();
  batch.Validate();
  if (params.hidden_layers() == 0) {
    throw Error(ErrorCode::kPreconditionFailed, "the model has no hidden layer");
  }
  if (batch.input_dim() != params.input_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "batch and model input dimensions differ");
  }
  if (params.weights[0].cwiseAbs().maxCoeff() == 0.0) {
    throw Error(ErrorCode::kDegenerateWeights, "W_0 is the zero matrix");
  }
  const std::size_t d0 = params.input_dim(), d1 = params.width(1), m = batch.size();
  if (!(d1 < d0)) {
    throw Error(ErrorCode::kPreconditionFailed,
                "d1 < d0 violated (d1 = " + std::to_string(d1) + ", d0 = " + std::to_string(d0) + ")");
  }
  if (!(m > d1)) {
    throw Error(ErrorCode::kPreconditionFailed,
                "M > d1 violated (M = " + std::to_string(m) + ", d1 = " + std::to_string(d1) + ")");
  }
  if (params.first_layer_relu) {
    const ExanTable t = ExanCounts(BatchPattern(params, batch));
    for (std::size_t s = 0; s < m; ++s) {
      if (t.count(s, 1) != 0) {
        throw Error(ErrorCode::kPreconditionFailed,
                    "lack of exclusivity violated: sample " + std::to_string(s) + " has " +
                        std::to_string(t.count(s, 1)) + " exclusive first-layer neurons");
      }
    }
  }
}

}  // namespace

PerturbationSubspace ComputePerturbationSubspace(const FcnParams& params, const Batch& batch) {
  CheckPreconditions(params, batch);
  const auto d0 = static_cast<Eigen::Index>(params.input_dim());
  const auto d1 = static_cast<Eigen::Index>(params.width(1));
  const auto m = static_cast<Eigen::Index>(batch.size());
  const Matrix& w0 = params.weights[0];

  PerturbationSubspace s;
  s.samples = batch.size();
  s.input_dim = params.input_dim();
  s.a_matrix = AlphaMatrix(params, batch);
  s.p0 = Matrix::Identity(d0, d0) - Pinv(w0) * w0;

  // Each block is normalised so that the rank cut treats them alike.
  const double ws = w0.cwiseAbs().maxCoeff();
  const double as = s.a_matrix.cwiseAbs().maxCoeff();
  Matrix op = Matrix::Zero(m * d1 + d1 * d0, m * d0);
  for (Eigen::Index k = 0; k < m; ++k) op.block(k * d1, k * d0, d1, d0) = w0 / ws;
  if (as > 0.0) {
    for (Eigen::Index r = 0; r < d1; ++r) {
      for (Eigen::Index k = 0; k < m; ++k) {
        for (Eigen::Index c = 0; c < d0; ++c) op(m * d1 + r * d0 + c, k * d0 + c) = s.a_matrix(r, k) / as;
      }
    }
  }
  s.basis = NullSpaceBasis(op);
  s.dim = static_cast<std::size_t>(s.basis.cols());
  return s;
}

Matrix ProjectorPerturbation(const PerturbationSubspace& s, const Matrix& q) {
  const auto m = static_cast<Eigen::Index>(s.samples);
  const auto d0 = static_cast<Eigen::Index>(s.input_dim);
  if (q.rows() != m || q.cols() != d0) throw Error(ErrorCode::kShapeMismatch, "Q must be M x d0");
  const Matrix proj = Matrix::Identity(m, m) - Pinv(s.a_matrix) * s.a_matrix;
  return s.p0 * q.transpose() * proj;
}

Batch SampleArtifactBatch(const Batch& batch, const PerturbationSubspace& s, std::uint64_t rng_seed,
                          bool box) {
  if (s.dim == 0) throw Error(ErrorCode::kEmptySubspace, "perturbation subspace is {0}");
  if (batch.size() != s.samples || batch.input_dim() != s.input_dim) {
    throw Error(ErrorCode::kShapeMismatch, "batch does not match the subspace");
  }
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector c(static_cast<Eigen::Index>(s.dim));
  for (Eigen::Index j = 0; j < c.size(); ++j) c(j) = normal(rng);
  Vector delta = s.basis * c;

  const auto d0 = static_cast<Eigen::Index>(s.input_dim);
  if (box) {
    double scale = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < s.samples; ++m) {
      const Vector& x = batch.inputs[m];
      for (Eigen::Index k = 0; k < d0; ++k) {
        const double d = delta(static_cast<Eigen::Index>(m) * d0 + k);
        if (d > 0.0) scale = std::min(scale, (1.0 - x(k)) / d);
        if (d < 0.0) scale = std::min(scale, (-1.0 - x(k)) / d);
      }
    }
    delta *= std::max(0.0, std::isfinite(scale) ? scale : 0.0);
  }
  Batch out = batch;
  for (std::size_t m = 0; m < s.samples; ++m) {
    out.inputs[m] += delta.segment(static_cast<Eigen::Index>(m) * d0, d0);
    if (box) out.inputs[m] = out.inputs[m].cwiseMax(-1.0).cwiseMin(1.0);
  }
  return out;
}

BoundReport PerturbationLowerBound(const FcnParams& params, const Batch& batch) {
  CheckPreconditions(params, batch);
  const Matrix& w0 = params.weights[0];
  const auto d0 = static_cast<Eigen::Index>(params.input_dim());
  const Matrix p0 = Matrix::Identity(d0, d0) - Pinv(w0) * w0;
  // Leading columns of T: orthonormal basis of the null space of W_0. The
  // remaining columns span the row space, where T P_0 X vanishes.
  const Matrix null_basis = NullSpaceBasis(w0);
  const Eigen::Index n0 = null_basis.cols();
  const auto m = static_cast<Eigen::Index>(batch.size());

  BoundReport r;
  Matrix y(n0, m);
  for (Eigen::Index s = 0; s < m; ++s) {
    Vector eta = (null_basis.transpose() * (p0 * batch.inputs[static_cast<std::size_t>(s)])).cwiseAbs();
    y.col(s) = eta;
    r.eta.push_back(std::move(eta));
  }
  const Matrix a = AlphaMatrix(params, batch);
  const Matrix b = Pinv(a) * a;  // A^+ A, M x M

  r.lower_bound = y.squaredNorm() - (b * y.transpose() * y).trace();

  // |P_1 q*|^2 with P_1 = I - (A^+ A (x) I_n0) applied to q* = eta_1 (+) ... (+) eta_M.
  Vector q(m * n0);
  for (Eigen::Index s = 0; s < m; ++s) q.segment(s * n0, n0) = y.col(s);
  Vector p1q = q;
  for (Eigen::Index s = 0; s < m; ++s) {
    for (Eigen::Index t = 0; t < m; ++t) {
      if (b(s, t) != 0.0) p1q.segment(s * n0, n0) -= b(s, t) * q.segment(t * n0, n0);
    }
  }
  r.achieved_norm = p1q.squaredNorm();
  return r;
}

double VerifyGradientInvariance(const FcnParams& params, const Batch& original, const Batch& artifact) {
  if (original.size() != artifact.size() || original.input_dim() != artifact.input_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "artifact batch differs in shape");
  }
  if (original.labels != artifact.labels) throw Error(ErrorCode::kShapeMismatch, "labels differ");
  const std::vector<double> g = AverageGradient(params, original).Flatten();
  const std::vector<double> h = AverageGradient(params, artifact).Flatten();
  double worst = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    worst = std::max(worst, std::abs(g[i] - h[i]) / (std::abs(g[i]) + 1e-30));
  }
  return worst;
}

}  // namespace gradleak
