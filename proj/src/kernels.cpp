#include "gradleak/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace gradleak::kernels {

namespace {

std::atomic<int> g_thread_override{0};

int ThreadsFromEnv() {
  const char* env = std::getenv("GRADLEAK_THREADS");
  if (env == nullptr) return 0;
  try {
    const int n = std::stoi(env);
    return n > 0 ? n : 0;
  } catch (...) {
    return 0;
  }
}

}  // namespace

int MaxThreads() {
#if defined(_OPENMP)
  if (const int o = g_thread_override.load(); o > 0) return o;
  static const int from_env = ThreadsFromEnv();
  if (from_env > 0) return from_env;
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void SetThreads(int n) { g_thread_override.store(n > 0 ? n : 0); }

void CsrMatVec(std::span<const std::int64_t> row_ptr, std::span<const std::int64_t> col_idx,
               std::span<const double> values, const double* x, double* y) {
  const auto rows = static_cast<std::int64_t>(row_ptr.size()) - 1;
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) num_threads(MaxThreads()) if (rows > 2048)
#endif
  for (std::int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (auto p = row_ptr[r]; p < row_ptr[r + 1]; ++p) acc += values[p] * x[col_idx[p]];
    y[r] = acc;
  }
}

void CsrMatVecSerial(std::span<const std::int64_t> row_ptr, std::span<const std::int64_t> col_idx,
                     std::span<const double> values, const double* x, double* y) {
  const auto rows = static_cast<std::int64_t>(row_ptr.size()) - 1;
  for (std::int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (auto p = row_ptr[r]; p < row_ptr[r + 1]; ++p) acc += values[p] * x[col_idx[p]];
    y[r] = acc;
  }
}

void ExclusiveOwners(std::span<const std::uint8_t* const> masks, std::size_t width,
                     std::vector<int>& owner) {
  owner.assign(width, kNoOwner);
  const auto n = static_cast<std::int64_t>(width);
  const auto samples = static_cast<int>(masks.size());
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) num_threads(MaxThreads()) if (n * samples > 65536)
#endif
  for (std::int64_t j = 0; j < n; ++j) {
    int o = kNoOwner;
    for (int m = 0; m < samples; ++m) {
      if (masks[static_cast<std::size_t>(m)][j] == 0) continue;
      if (o != kNoOwner) {
        o = kShared;
        break;
      }
      o = m;
    }
    owner[static_cast<std::size_t>(j)] = o;
  }
}

void ExclusiveOwnersSerial(std::span<const std::uint8_t* const> masks, std::size_t width,
                           std::vector<int>& owner) {
  owner.assign(width, kNoOwner);
  for (std::size_t j = 0; j < width; ++j) {
    int count = 0;
    int last = kNoOwner;
    for (std::size_t m = 0; m < masks.size(); ++m) {
      if (masks[m][j] != 0) {
        ++count;
        last = static_cast<int>(m);
      }
    }
    owner[j] = count == 0 ? kNoOwner : (count == 1 ? last : kShared);
  }
}

}  // namespace gradleak::kernels
