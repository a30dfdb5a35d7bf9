#include "gradleak/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gradleak/kernels.hpp"

namespace gradleak {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kDidNotConverge: return "DidNotConverge";
    case ErrorCode::kNonSquare: return "NonSquare";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kAlreadyLinear: return "AlreadyLinear";
    case ErrorCode::kCurationFailed: return "CurationFailed";
    case ErrorCode::kNoGroups: return "NoGroups";
    case ErrorCode::kGroupOverlap: return "GroupOverlap";
    case ErrorCode::kPatternAmbiguous: return "PatternAmbiguous";
    case ErrorCode::kSubsetSumAmbiguous: return "SubsetSumAmbiguous";
    case ErrorCode::kNotApplicable: return "NotApplicable";
    case ErrorCode::kPreconditionFailed: return "PreconditionFailed";
    case ErrorCode::kEmptySubspace: return "EmptySubspace";
    case ErrorCode::kDegenerateWeights: return "DegenerateWeights";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kNegativeMse: return "NegativeMse";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

void RequireFinite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::kNonFinite, std::string(what) + " contains NaN or Inf");
  }
}

namespace {

// Thin SVD is enough for the pseudo-inverse; the null space needs full V.
Eigen::BDCSVD<Matrix> Decompose(const Matrix& m, bool full_v) {
  const unsigned flags =
      full_v ? static_cast<unsigned>(Eigen::ComputeFullV) : (Eigen::ComputeThinU | Eigen::ComputeThinV);
  return Eigen::BDCSVD<Matrix>(m, flags);
}

std::size_t RankFromSingular(const Vector& sv, double rank_tol) {
  if (sv.size() == 0 || sv(0) <= 0.0) return 0;
  const double cut = rank_tol * sv(0);
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cut) ++r;
  }
  return r;
}

}  // namespace

Matrix Pinv(const Matrix& m, double rank_tol) {
  RequireFinite(m, "pinv input");
  if (rank_tol <= 0.0) throw Error(ErrorCode::kInvalidArgument, "rank_tol must be positive");
  if (m.size() == 0) return Matrix::Zero(m.cols(), m.rows());
  auto svd = Decompose(m, false);
  const Vector& sv = svd.singularValues();
  const std::size_t r = RankFromSingular(sv, rank_tol);
  if (r == 0) return Matrix::Zero(m.cols(), m.rows());
  const auto k = static_cast<Eigen::Index>(r);
  Vector inv = sv.head(k).cwiseInverse();
  return svd.matrixV().leftCols(k) * inv.asDiagonal() * svd.matrixU().leftCols(k).transpose();
}

Matrix NullSpaceBasis(const Matrix& m, double rank_tol) {
  RequireFinite(m, "null_space_basis input");
  if (m.rows() == 0 || m.size() == 0) return Matrix::Identity(m.cols(), m.cols());
  auto svd = Decompose(m, true);
  const std::size_t r = RankFromSingular(svd.singularValues(), rank_tol);
  const auto k = static_cast<Eigen::Index>(r);
  return svd.matrixV().rightCols(m.cols() - k);
}

std::size_t NumericalRank(const Matrix& m, double rank_tol) {
  RequireFinite(m, "rank input");
  if (m.size() == 0) return 0;
  Eigen::BDCSVD<Matrix> svd(m);
  return RankFromSingular(svd.singularValues(), rank_tol);
}

void SparseSystem::Validate() const {
  if (n_rows < 0 || n_cols < 0) throw Error(ErrorCode::kShapeMismatch, "negative system size");
  if (static_cast<std::int64_t>(rhs.size()) != n_rows) {
    throw Error(ErrorCode::kShapeMismatch, "rhs length differs from n_rows");
  }
  for (double v : rhs) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "rhs contains NaN or Inf");
  }
  std::vector<std::pair<std::int64_t, std::int64_t>> keys;
  keys.reserve(entries.size());
  for (const auto& t : entries) {
    if (t.row < 0 || t.row >= n_rows || t.col < 0 || t.col >= n_cols) {
      throw Error(ErrorCode::kShapeMismatch, "entry index out of range");
    }
    if (!std::isfinite(t.value)) throw Error(ErrorCode::kNonFinite, "entry is NaN or Inf");
    keys.emplace_back(t.row, t.col);
  }
  std::sort(keys.begin(), keys.end());
  if (std::adjacent_find(keys.begin(), keys.end()) != keys.end()) {
    throw Error(ErrorCode::kInvalidArgument, "duplicate (row, col) entry");
  }
}

namespace {

void BuildCsr(std::int64_t n_rows, const std::vector<Triplet>& entries, bool transpose,
              std::vector<std::int64_t>& ptr, std::vector<std::int64_t>& idx,
              std::vector<double>& val) {
  ptr.assign(static_cast<std::size_t>(n_rows) + 1, 0);
  for (const auto& t : entries) ++ptr[static_cast<std::size_t>(transpose ? t.col : t.row) + 1];
  for (std::size_t i = 1; i < ptr.size(); ++i) ptr[i] += ptr[i - 1];
  idx.resize(entries.size());
  val.resize(entries.size());
  std::vector<std::int64_t> next(ptr.begin(), ptr.end() - 1);
  for (const auto& t : entries) {
    const auto r = transpose ? t.col : t.row;
    const auto c = transpose ? t.row : t.col;
    const auto pos = static_cast<std::size_t>(next[static_cast<std::size_t>(r)]++);
    idx[pos] = c;
    val[pos] = t.value;
  }
}

}  // namespace

CsrMatrix CsrMatrix::FromSystem(const SparseSystem& sys) {
  CsrMatrix out;
  out.rows_ = sys.n_rows;
  out.cols_ = sys.n_cols;
  BuildCsr(sys.n_rows, sys.entries, false, out.row_ptr_, out.col_idx_, out.values_);
  BuildCsr(sys.n_cols, sys.entries, true, out.t_row_ptr_, out.t_col_idx_, out.t_values_);
  return out;
}

void CsrMatrix::Multiply(const Vector& x, Vector& y) const {
  y.resize(rows_);
  kernels::CsrMatVec(row_ptr_, col_idx_, values_, x.data(), y.data());
}

void CsrMatrix::MultiplyTransposed(const Vector& x, Vector& y) const {
  y.resize(cols_);
  kernels::CsrMatVec(t_row_ptr_, t_col_idx_, t_values_, x.data(), y.data());
}

Matrix CsrMatrix::ToDense() const {
  Matrix d = Matrix::Zero(rows_, cols_);
  for (std::int64_t r = 0; r < rows_; ++r) {
    for (auto p = row_ptr_[static_cast<std::size_t>(r)]; p < row_ptr_[static_cast<std::size_t>(r) + 1]; ++p) {
      d(r, col_idx_[static_cast<std::size_t>(p)]) += values_[static_cast<std::size_t>(p)];
    }
  }
  return d;
}

}  // namespace gradleak
