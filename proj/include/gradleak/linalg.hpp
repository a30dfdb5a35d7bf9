#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gradleak/error.hpp"

namespace gradleak {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kDefaultRankTol = 1e-10;

// Throws NonFinite when any entry is NaN or Inf.
void RequireFinite(const Matrix& m, const char* what);

// Moore-Penrose pseudo-inverse. Singular values below rank_tol times the
// largest one are treated as zero.
Matrix Pinv(const Matrix& m, double rank_tol = kDefaultRankTol);

// Orthonormal basis of {x : m x = 0}, one basis vector per column.
Matrix NullSpaceBasis(const Matrix& m, double rank_tol = kDefaultRankTol);

// Numerical rank with the same relative threshold as Pinv.
std::size_t NumericalRank(const Matrix& m, double rank_tol = kDefaultRankTol);

struct Triplet {
  std::int64_t row;
  std::int64_t col;
  double value;
};

// A least-squares problem A x = b with A held in coordinate format while it
// is being assembled.
struct SparseSystem {
  std::int64_t n_rows = 0;
  std::int64_t n_cols = 0;
  std::vector<Triplet> entries;
  std::vector<double> rhs;

  // Checks index ranges, duplicate (row, col) pairs and finiteness.
  void Validate() const;

  Vector Rhs() const { return Eigen::Map<const Vector>(rhs.data(), rhs.size()); }
};

// Compressed sparse row matrix; also keeps its transpose in CSR form so that
// both products are row-parallel.
class CsrMatrix {
 public:
  CsrMatrix() = default;
  static CsrMatrix FromSystem(const SparseSystem& sys);

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }

  // y = A x
  void Multiply(const Vector& x, Vector& y) const;
  // y = A^T x
  void MultiplyTransposed(const Vector& x, Vector& y) const;

  Matrix ToDense() const;

 private:
  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  std::vector<std::int64_t> row_ptr_;
  std::vector<std::int64_t> col_idx_;
  std::vector<double> values_;
  std::vector<std::int64_t> t_row_ptr_;
  std::vector<std::int64_t> t_col_idx_;
  std::vector<double> t_values_;
};

struct LsmrOptions {
  double atol = 1e-12;
  double btol = 1e-12;
  // 0 selects 10 * n_cols.
  std::int64_t max_iter = 0;
};

struct LsmrResult {
  Vector solution;
  double residual_norm = 0.0;
  std::int64_t iterations = 0;
  // LSMR stopping reason (1..6 converged in the Fong-Saunders sense, 7 hit
  // the iteration limit).
  int stop_reason = 0;
};

class DidNotConverge : public Error {
 public:
  explicit DidNotConverge(LsmrResult best)
      : Error(ErrorCode::kDidNotConverge,
              "iteration limit reached after " + std::to_string(best.iterations) +
                  " iterations, residual " + std::to_string(best.residual_norm)),
        best_(std::move(best)) {}
  const LsmrResult& best() const noexcept { return best_; }

 private:
  LsmrResult best_;
};

// LSMR with zero damping on a prepared CSR matrix.
LsmrResult LsmrSolve(const CsrMatrix& a, const Vector& b, const LsmrOptions& opts = {});
LsmrResult LsmrSolve(const SparseSystem& sys, const LsmrOptions& opts = {});

// Minimum-cost perfect matching on a square cost matrix. Returns
// (row, col) pairs ordered by row.
std::vector<std::pair<std::size_t, std::size_t>> Hungarian(const Matrix& cost);

}  // namespace gradleak
