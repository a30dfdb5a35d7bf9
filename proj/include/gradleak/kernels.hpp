#pragma once

// Data-parallel inner loops. Every OpenMP kernel has a serial twin with the
// same signature; the serial versions are the reference the tests compare
// against and the baseline of bench/bench_kernels.

#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <span>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace gradleak::kernels {

// Worker count: GRADLEAK_THREADS when set and positive, else the OpenMP
// default. Always 1 without OpenMP.
int MaxThreads();
// Overrides the worker count for subsequent kernels (0 restores the default).
void SetThreads(int n);

// y = A x for a CSR matrix.
void CsrMatVec(std::span<const std::int64_t> row_ptr, std::span<const std::int64_t> col_idx,
               std::span<const double> values, const double* x, double* y);
void CsrMatVecSerial(std::span<const std::int64_t> row_ptr, std::span<const std::int64_t> col_idx,
                     std::span<const double> values, const double* x, double* y);

inline constexpr int kNoOwner = -1;
inline constexpr int kShared = -2;

// For one layer of width `width`, owner[j] is the sample index when exactly
// one of `masks` has neuron j on, kNoOwner when none does and kShared
// otherwise.
void ExclusiveOwners(std::span<const std::uint8_t* const> masks, std::size_t width,
                     std::vector<int>& owner);
void ExclusiveOwnersSerial(std::span<const std::uint8_t* const> masks, std::size_t width,
                           std::vector<int>& owner);

// Runs fn(i) for i in [0, n). Iterations must write disjoint state. The first
// exception thrown by any iteration is rethrown on the calling thread.
template <typename Fn>
void ParallelFor(std::int64_t n, Fn&& fn) {
#if defined(_OPENMP)
  if (n > 1 && MaxThreads() > 1) {
    std::exception_ptr error;
    std::mutex error_mu;
#pragma omp parallel for schedule(dynamic) num_threads(MaxThreads())
    for (std::int64_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
    return;
  }
#endif
  for (std::int64_t i = 0; i < n; ++i) fn(i);
}

}  // namespace gradleak::kernels
