#include <doctest.h>

#include <random>

#include "gradleak/defense.hpp"
#include "gradleak/exclusivity.hpp"
#include "oracles.hpp"

using namespace gradleak;

namespace {

struct Instance {
  FcnParams params;
  Batch batch;
};

// Linear first layer, so lack of exclusivity holds trivially.
Instance Reduced(std::size_t d0, std::size_t d1, std::size_t m, std::uint64_t seed) {
  Instance in;
  in.params = RemoveFirstRelu(RandomParams({d0, d1, 24, 5}, seed));
  in.batch = UniformBatch(m, d0, 5, seed + 1);
  return in;
}

std::size_t LuRank(const Matrix& a) {
  Eigen::FullPivLU<Matrix> lu(a);
  lu.setThreshold(1e-10);
  return static_cast<std::size_t>(lu.rank());
}

Vector Vec(const Matrix& delta) { return Eigen::Map<const Vector>(delta.data(), delta.size()); }

}  // namespace

TEST_SUITE("defense") {
  TEST_CASE("basis vectors satisfy both constraints and the dimension formula") {
    for (std::uint64_t t = 0; t < 8; ++t) {
      const std::size_t d0 = 10 + t, d1 = 3 + t % 4, m = d1 + 1 + t % 3;
      const Instance in = Reduced(d0, d1, m, 500 + t);
      const PerturbationSubspace s = ComputePerturbationSubspace(in.params, in.batch);
      const Matrix a = AlphaMatrix(in.params, in.batch);
      CAPTURE(t);
      CHECK(s.dim == (d0 - LuRank(in.params.weights[0])) * (m - LuRank(a)));
      CHECK(s.dim <= m * (d0 - d1));
      for (std::size_t j = 0; j < s.dim; ++j) {
        const Matrix delta = s.Direction(j);
        CHECK((in.params.weights[0] * delta).cwiseAbs().maxCoeff() <= 1e-9);
        CHECK((delta * a.transpose()).cwiseAbs().maxCoeff() <= 1e-9);
      }
      CHECK((s.basis.transpose() * s.basis - Matrix::Identity(s.basis.cols(), s.basis.cols())).norm() <= 1e-9);
    }
  }

  TEST_CASE("alpha columns are the first-layer backpropagated errors") {
    const Instance in = Reduced(12, 4, 6, 510);
    const Matrix a = AlphaMatrix(in.params, in.batch);
    for (std::size_t s = 0; s < in.batch.size(); ++s) {
      // d loss / d b_0 equals delta_1 for a single sample.
      const GradientBundle g = PerSampleGradient(in.params, in.batch.inputs[s], in.batch.labels[s]);
      CHECK((a.col(static_cast<Eigen::Index>(s)) - g.bias_grads[0]).norm() <= 1e-12);
    }
  }

  TEST_CASE("projector route lands in the basis span and satisfies both equations") {
    std::mt19937_64 rng(520);
    const Instance in = Reduced(14, 5, 8, 521);
    const PerturbationSubspace s = ComputePerturbationSubspace(in.params, in.batch);
    const Matrix a = AlphaMatrix(in.params, in.batch);
    for (int t = 0; t < 5; ++t) {
      const Matrix q = oracle::RandomMatrix(8, 14, rng);
      const Matrix delta = ProjectorPerturbation(s, q);
      CHECK((in.params.weights[0] * delta).cwiseAbs().maxCoeff() <= 1e-9);
      CHECK((delta * a.transpose()).cwiseAbs().maxCoeff() <= 1e-9);
      const Vector v = Vec(delta);
      CHECK((s.basis * (s.basis.transpose() * v) - v).norm() <= 1e-9 * v.norm());
    }
    CHECK_THROWS_AS(ProjectorPerturbation(s, Matrix::Zero(3, 3)), Error);
  }

  TEST_CASE("gradients are unchanged along every direction of the subspace") {
    std::mt19937_64 rng(530);
    const Instance in = Reduced(16, 5, 8, 531);
    const PerturbationSubspace s = ComputePerturbationSubspace(in.params, in.batch);
    REQUIRE(s.dim > 0);
    auto shifted = [&](const Vector& v) {
      Batch b = in.batch;
      for (std::size_t m = 0; m < b.size(); ++m) {
        b.inputs[m] += v.segment(static_cast<Eigen::Index>(m * s.input_dim), static_cast<Eigen::Index>(s.input_dim));
      }
      return b;
    };
    for (std::size_t j = 0; j < s.dim; ++j) {
      CHECK(VerifyGradientInvariance(in.params, in.batch, shifted(0.3 * s.basis.col(static_cast<Eigen::Index>(j)))) <= 1e-8);
    }
    for (int t = 0; t < 10; ++t) {
      const Vector c = oracle::RandomMatrix(static_cast<Eigen::Index>(s.dim), 1, rng);
      CHECK(VerifyGradientInvariance(in.params, in.batch, shifted(s.basis * c * 0.1)) <= 1e-8);
    }
    // A null-space direction of W_0 alone (same shift for every sample)
    // breaks the second constraint and changes the W_0 gradient.
    const Matrix n0 = NullSpaceBasis(in.params.weights[0]);
    Vector v(static_cast<Eigen::Index>(8 * 16));
    for (Eigen::Index m = 0; m < 8; ++m) v.segment(m * 16, 16) = n0.col(0);
    CHECK(VerifyGradientInvariance(in.params, in.batch, shifted(v)) > 1e-6);
  }

  TEST_CASE("sampled artifacts stay in the box and differ from the batch") {
    const Instance in = Reduced(12, 4, 7, 540);
    const PerturbationSubspace s = ComputePerturbationSubspace(in.params, in.batch);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Batch art = SampleArtifactBatch(in.batch, s, seed);
      double moved = 0.0;
      for (std::size_t m = 0; m < art.size(); ++m) {
        CHECK(art.inputs[m].maxCoeff() <= 1.0);
        CHECK(art.inputs[m].minCoeff() >= -1.0);
        moved += (art.inputs[m] - in.batch.inputs[m]).squaredNorm();
      }
      CHECK(moved > 0.0);
      CHECK(VerifyGradientInvariance(in.params, in.batch, art) <= 1e-8);
      CHECK(art.labels == in.batch.labels);
    }
    const Batch a1 = SampleArtifactBatch(in.batch, s, 3);
    const Batch a2 = SampleArtifactBatch(in.batch, s, 3);
    CHECK(a1.inputs == a2.inputs);
  }

  TEST_CASE("secure batches of a ReLU model admit invariant artifacts") {
    int used = 0;
    for (std::uint64_t seed = 0; seed < 40 && used < 5; ++seed) {
      const FcnParams p = RandomParams({12, 3, 20, 4}, 550 + seed);
      const Batch b = UniformBatch(6, 12, 4, 600 + seed);
      bool any = false;
      const ExanTable t = ExanCounts(BatchPattern(p, b));
      for (std::size_t s = 0; s < 6; ++s) any = any || t.count(s, 1) > 0;
      if (any) continue;
      ++used;
      const PerturbationSubspace s = ComputePerturbationSubspace(p, b);
      if (s.dim == 0) continue;
      const Batch art = SampleArtifactBatch(b, s, seed);
      CHECK(VerifyGradientInvariance(p, b, art) <= 1e-8);
    }
    CHECK(used > 0);
  }

  TEST_CASE("closed-form bound equals the dense projector oracle") {
    for (std::uint64_t t = 0; t < 10; ++t) {
      const std::size_t d0 = 9 + t, d1 = 2 + t % 3, m = d1 + 2;
      const Instance in = Reduced(d0, d1, m, 560 + t);
      const BoundReport r = PerturbationLowerBound(in.params, in.batch);
      // Oracle: explicit Kronecker projector with an SVD pseudo-inverse.
      const Matrix a = AlphaMatrix(in.params, in.batch);
      Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
      Vector sinv = svd.singularValues();
      for (Eigen::Index i = 0; i < sinv.size(); ++i) sinv(i) = sinv(i) > 1e-10 * sinv(0) ? 1.0 / sinv(i) : 0.0;
      const Matrix apinv = svd.matrixV().leftCols(sinv.size()) * sinv.asDiagonal() * svd.matrixU().leftCols(sinv.size()).transpose();
      const Matrix b = apinv * a;
      const auto n0 = static_cast<Eigen::Index>(r.eta.front().size());
      const auto mm = static_cast<Eigen::Index>(m);
      Matrix p1 = Matrix::Identity(mm * n0, mm * n0);
      for (Eigen::Index i = 0; i < mm; ++i) {
        for (Eigen::Index j = 0; j < mm; ++j) p1.block(i * n0, j * n0, n0, n0) -= b(i, j) * Matrix::Identity(n0, n0);
      }
      Vector q(mm * n0);
      for (Eigen::Index i = 0; i < mm; ++i) q.segment(i * n0, n0) = r.eta[static_cast<std::size_t>(i)];
      const double direct = (p1 * q).squaredNorm();
      CAPTURE(t);
      CHECK(r.achieved_norm == doctest::Approx(direct).epsilon(1e-9));
      CHECK(r.lower_bound == doctest::Approx(direct).epsilon(1e-6));
      CHECK(n0 == static_cast<Eigen::Index>(d0 - d1));
    }
  }

  TEST_CASE("zero inputs give a zero bound") {
    Instance in = Reduced(10, 3, 5, 570);
    for (auto& x : in.batch.inputs) x.setZero();
    const BoundReport r = PerturbationLowerBound(in.params, in.batch);
    CHECK(r.lower_bound == doctest::Approx(0.0));
    CHECK(r.achieved_norm == doctest::Approx(0.0));
  }

  TEST_CASE("preconditions") {
    Instance in = Reduced(10, 3, 5, 580);
    auto expect = [](auto&& fn, ErrorCode code, const char* msg) {
      try {
        fn();
        FAIL("expected an error");
      } catch (const Error& e) {
        CHECK(e.code() == code);
        CHECK(std::string(e.what()).find(msg) != std::string::npos);
      }
    };
    const Batch small = UniformBatch(3, 10, 5, 1);
    expect([&] { ComputePerturbationSubspace(in.params, small); }, ErrorCode::kPreconditionFailed, "M > d1 violated");
    const FcnParams wide = RemoveFirstRelu(RandomParams({10, 12, 8, 5}, 2));
    expect([&] { ComputePerturbationSubspace(wide, UniformBatch(13, 10, 5, 3)); }, ErrorCode::kPreconditionFailed,
           "d1 < d0 violated");
    FcnParams zero = in.params;
    zero.weights[0].setZero();
    expect([&] { PerturbationLowerBound(zero, in.batch); }, ErrorCode::kDegenerateWeights, "W_0");
    // A ReLU model where some sample owns a first-layer neuron.
    const FcnParams relu = RandomParams({10, 6, 8, 5}, 4);
    Batch b = UniformBatch(7, 10, 5, 5);
    b.inputs[0] = relu.weights[0].row(0).transpose().normalized();
    for (std::size_t s = 1; s < 7; ++s) b.inputs[s] = -b.inputs[0];
    const ExanTable t = ExanCounts(BatchPattern(relu, b));
    if (t.count(0, 1) > 0) {
      expect([&] { ComputePerturbationSubspace(relu, b); }, ErrorCode::kPreconditionFailed, "lack of exclusivity");
    }
    const PerturbationSubspace s = ComputePerturbationSubspace(in.params, in.batch);
    PerturbationSubspace empty = s;
    empty.dim = 0;
    expect([&] { SampleArtifactBatch(in.batch, empty, 1); }, ErrorCode::kEmptySubspace, "");
    Batch relabeled = in.batch;
    relabeled.labels[0] = (relabeled.labels[0] + 1) % 5;
    expect([&] { VerifyGradientInvariance(in.params, in.batch, relabeled); }, ErrorCode::kShapeMismatch, "labels");
  }
}
