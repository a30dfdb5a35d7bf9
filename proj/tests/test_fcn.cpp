#include <doctest.h>

#include <random>

#include "gradleak/fcn.hpp"
#include "gradleak/kernels.hpp"
#include "oracles.hpp"

using namespace gradleak;

namespace {

std::vector<std::size_t> RandomDims(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> w(2, 7), depth(1, 3);
  std::vector<std::size_t> dims{w(rng)};
  const std::size_t h = depth(rng);
  for (std::size_t i = 0; i < h; ++i) dims.push_back(w(rng));
  dims.push_back(w(rng));
  return dims;
}

}  // namespace

TEST_SUITE("fcn") {
  TEST_CASE("per-sample gradients agree with central finite differences on 50 instances") {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 50; ++t) {
      const auto dims = RandomDims(rng);
      const FcnParams p = RandomParams(dims, 100 + t, t % 5 != 0);
      const Batch b = UniformBatch(1, dims.front(), dims.back(), 200 + t);
      const std::vector<double> g = PerSampleGradient(p, b.inputs[0], b.labels[0]).Flatten();
      const std::vector<double> fd = oracle::FiniteDifferenceGradient(p, b.inputs[0], b.labels[0], 1e-5);
      CAPTURE(t);
      CHECK(oracle::NormRelDiff(g, fd) <= 1e-6);
    }
  }

  TEST_CASE("forward matches the reference pattern and logits") {
    std::mt19937_64 rng(22);
    for (int t = 0; t < 20; ++t) {
      const auto dims = RandomDims(rng);
      const FcnParams p = RandomParams(dims, 300 + t, t % 2 == 0);
      const Batch b = UniformBatch(3, dims.front(), dims.back(), 400 + t);
      const ActivationPattern pat = BatchPattern(p, b);
      for (std::size_t s = 0; s < b.size(); ++s) {
        CHECK(pat.masks[s] == oracle::Pattern(p, b.inputs[s]));
        const auto r = LossAndVector(Forward(p, b.inputs[s]).logits, b.labels[s]);
        CHECK(r.loss == doctest::Approx(oracle::CrossEntropy(p, b.inputs[s], b.labels[s])).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("loss vector sums to zero with one negative entry at the label") {
    std::mt19937_64 rng(23);
    for (int t = 0; t < 30; ++t) {
      const Vector logits = oracle::RandomMatrix(6, 1, rng) * 3.0;
      const int y = t % 6;
      const LossResult r = LossAndVector(logits, y);
      CHECK(std::abs(r.lv.g.sum()) <= 1e-14);
      for (Eigen::Index c = 0; c < 6; ++c) CHECK((r.lv.g(c) < 0.0) == (c == y));
      CHECK(r.loss >= 0.0);
    }
  }

  TEST_CASE("loss vector stays finite for extreme logits") {
    Vector logits(3);
    logits << 1000.0, -1000.0, 0.0;
    const LossResult r = LossAndVector(logits, 1);
    CHECK(std::isfinite(r.loss));
    CHECK(r.lv.g.allFinite());
  }

  TEST_CASE("average gradient is the mean of per-sample gradients") {
    const FcnParams p = RandomParams({6, 9, 5, 4}, 31);
    const Batch b = UniformBatch(5, 6, 4, 32);
    const std::vector<double> avg = AverageGradient(p, b).Flatten();
    std::vector<double> ref(avg.size(), 0.0);
    for (std::size_t s = 0; s < b.size(); ++s) {
      const auto g = PerSampleGradient(p, b.inputs[s], b.labels[s]).Flatten();
      for (std::size_t i = 0; i < g.size(); ++i) ref[i] += g[i] / 5.0;
    }
    CHECK(oracle::MaxRelDiff(avg, ref) <= 1e-13);
  }

  TEST_CASE("parallel and serial average gradients are bit-identical") {
    const FcnParams p = RandomParams({20, 64, 32, 10}, 33);
    const Batch b = UniformBatch(24, 20, 10, 34);
    const auto serial = AverageGradientSerial(p, b).Flatten();
    for (int threads : {1, 2, 4}) {
      kernels::SetThreads(threads);
      CHECK(AverageGradient(p, b).Flatten() == serial);
    }
    kernels::SetThreads(0);
  }

  TEST_CASE("random params are deterministic per seed and shaped by dims") {
    const FcnParams a = RandomParams({48, 256, 10}, 7);
    const FcnParams b = RandomParams({48, 256, 10}, 7);
    const FcnParams c = RandomParams({48, 256, 10}, 8);
    CHECK(a.weights[0].rows() == 256);
    CHECK(a.weights[0].cols() == 48);
    CHECK(a.weights[1].rows() == 10);
    CHECK(a.biases[0].size() == 256);
    CHECK(a.biases[1].size() == 10);
    CHECK(a.weights[0] == b.weights[0]);
    CHECK(a.weights[0] != c.weights[0]);
  }

  TEST_CASE("remove_first_relu") {
    const FcnParams p = RandomParams({8, 5, 6, 3}, 41);
    const FcnParams q = RemoveFirstRelu(p);
    CHECK_FALSE(q.first_layer_relu);
    CHECK_THROWS_AS(RemoveFirstRelu(q), Error);
    CHECK_THROWS_AS(RemoveFirstRelu(RandomParams({4, 3}, 1)), Error);
    // The gradient still exposes W_0 and W_1 separately rather than their product.
    const GradientBundle g = AverageGradient(q, UniformBatch(4, 8, 3, 42));
    CHECK(g.weight_grads.size() == 3);
    CHECK(g.weight_grads[0].rows() == 5);
    CHECK(g.weight_grads[0].cols() == 8);
    CHECK(g.weight_grads[1].rows() == 6);
    CHECK(g.weight_grads[1].cols() == 5);
    // Layer 1 is linear: all neurons on for every sample.
    const ActivationPattern pat = BatchPattern(q, UniformBatch(4, 8, 3, 43));
    for (const auto& s : pat.masks) CHECK(std::all_of(s[0].begin(), s[0].end(), [](auto v) { return v == 1; }));
  }

  TEST_CASE("dpsgd clips to the global norm and adds seeded noise") {
    const FcnParams p = RandomParams({10, 12, 4}, 51);
    const GradientBundle g = AverageGradient(p, UniformBatch(4, 10, 4, 52));
    const GradientBundle clipped = DpsgdObfuscate(g, 1e-3, 0.0, 1);
    CHECK(clipped.GlobalNorm() <= 1e-3 * (1 + 1e-12));
    const GradientBundle same = DpsgdObfuscate(g, 1e9, 0.0, 1);
    CHECK(same.Flatten() == g.Flatten());
    const auto n1 = DpsgdObfuscate(g, 1.0, 0.5, 9).Flatten();
    const auto n2 = DpsgdObfuscate(g, 1.0, 0.5, 9).Flatten();
    const auto n3 = DpsgdObfuscate(g, 1.0, 0.5, 10).Flatten();
    CHECK(n1 == n2);
    CHECK(n1 != n3);
    CHECK_THROWS_AS(DpsgdObfuscate(g, 0.0, 0.5, 1), Error);
    CHECK_THROWS_AS(DpsgdObfuscate(g, 1.0, -1.0, 1), Error);
  }

  TEST_CASE("activation-rate calibration hits the requested rate on the probe set") {
    FcnParams p = RandomParams({16, 40, 30, 5}, 61);
    const Batch probe = UniformBatch(2000, 16, 5, 62);
    CalibrateActivationRate(p, probe.inputs, 0.25);
    for (std::size_t layer = 1; layer <= 2; ++layer) {
      std::vector<double> on(p.width(layer), 0.0);
      for (const auto& x : probe.inputs) {
        const auto pat = oracle::Pattern(p, x);
        for (std::size_t j = 0; j < on.size(); ++j) on[j] += pat[layer - 1][j];
      }
      for (double v : on) CHECK(v / 2000.0 == doctest::Approx(0.25).epsilon(0.01));
    }
  }

  TEST_CASE("uniform batch is seeded and inside the box") {
    const Batch a = UniformBatch(8, 12, 10, 5);
    const Batch b = UniformBatch(8, 12, 10, 5);
    CHECK(a.inputs == b.inputs);
    CHECK(a.labels == b.labels);
    CHECK_NOTHROW(a.Validate(true));
    for (int y : a.labels) CHECK((y >= 0 && y < 10));
  }

  TEST_CASE("shape validation") {
    FcnParams p = RandomParams({4, 3, 2}, 1);
    p.weights[1] = Matrix::Zero(3, 3);
    CHECK_THROWS_AS(p.Validate(), Error);
    Batch b = UniformBatch(2, 4, 2, 1);
    b.labels[0] = 5;
    CHECK_THROWS_AS(b.Validate(), Error);
    b = UniformBatch(2, 4, 2, 1);
    b.raster = std::array<std::size_t, 3>{1, 3, 3};
    CHECK_THROWS_AS(b.Validate(), Error);
  }
}
