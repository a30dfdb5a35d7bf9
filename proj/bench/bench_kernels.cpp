// Parallel kernels against their serial twins.

#include <benchmark/benchmark.h>

#include <random>

#include "gradleak/exclusivity.hpp"
#include "gradleak/fcn.hpp"
#include "gradleak/kernels.hpp"

using namespace gradleak;

namespace {

struct Csr {
  std::vector<std::int64_t> row_ptr{0};
  std::vector<std::int64_t> col_idx;
  std::vector<double> values;
};

// Band of width 32 around the diagonal.
Csr BandedCsr(std::int64_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  Csr a;
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t c = std::max<std::int64_t>(0, r - 16); c < std::min(n, r + 16); ++c) {
      a.col_idx.push_back(c);
      a.values.push_back(nd(rng));
    }
    a.row_ptr.push_back(static_cast<std::int64_t>(a.values.size()));
  }
  return a;
}

template <bool kParallel>
void BM_CsrMatVec(benchmark::State& st) {
  const std::int64_t n = st.range(0);
  const Csr a = BandedCsr(n);
  const std::vector<double> x(static_cast<std::size_t>(n), 1.0);
  std::vector<double> y(static_cast<std::size_t>(n));
  for (auto _ : st) {
    if constexpr (kParallel) {
      kernels::CsrMatVec(a.row_ptr, a.col_idx, a.values, x.data(), y.data());
    } else {
      kernels::CsrMatVecSerial(a.row_ptr, a.col_idx, a.values, x.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool kParallel>
void BM_ExclusiveOwners(benchmark::State& st) {
  const auto width = static_cast<std::size_t>(st.range(0));
  std::mt19937_64 rng(2);
  std::bernoulli_distribution on(0.1);
  std::vector<std::vector<std::uint8_t>> masks(16, std::vector<std::uint8_t>(width));
  std::vector<const std::uint8_t*> ptrs;
  for (auto& m : masks) {
    for (auto& v : m) v = on(rng);
    ptrs.push_back(m.data());
  }
  std::vector<int> owner;
  for (auto _ : st) {
    if constexpr (kParallel) {
      kernels::ExclusiveOwners(ptrs, width, owner);
    } else {
      kernels::ExclusiveOwnersSerial(ptrs, width, owner);
    }
    benchmark::DoNotOptimize(owner.data());
  }
}

template <bool kParallel>
void BM_AverageGradient(benchmark::State& st) {
  const FcnParams p = RandomParams({48, 512, 10}, 3);
  const Batch b = UniformBatch(static_cast<std::size_t>(st.range(0)), 48, 10, 4);
  for (auto _ : st) {
    GradientBundle g = kParallel ? AverageGradient(p, b) : AverageGradientSerial(p, b);
    benchmark::DoNotOptimize(g.weight_grads.data());
  }
}

}  // namespace

BENCHMARK(BM_CsrMatVec<false>)->Arg(1 << 14)->Arg(1 << 17);
BENCHMARK(BM_CsrMatVec<true>)->Arg(1 << 14)->Arg(1 << 17);
BENCHMARK(BM_ExclusiveOwners<false>)->Arg(1 << 16)->Arg(1 << 20);
BENCHMARK(BM_ExclusiveOwners<true>)->Arg(1 << 16)->Arg(1 << 20);
BENCHMARK(BM_AverageGradient<false>)->Arg(16)->Arg(128);
BENCHMARK(BM_AverageGradient<true>)->Arg(16)->Arg(128);

BENCHMARK_MAIN();
