// Shortest augmenting path Hungarian method with row/column potentials,
// O(n^3).

#include <limits>
#include <vector>

#include "gradleak/linalg.hpp"

namespace gradleak {

std::vector<std::pair<std::size_t, std::size_t>> Hungarian(const Matrix& cost) {
  if (cost.rows() != cost.cols()) {
    throw Error(ErrorCode::kNonSquare, "cost matrix is " + std::to_string(cost.rows()) + "x" +
                                           std::to_string(cost.cols()));
  }
  RequireFinite(cost, "cost matrix");
  const auto n = static_cast<std::size_t>(cost.rows());
  if (n == 0) return {};

  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based internally; column 0 is the virtual start.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match_col(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match_col[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match_col[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) -
                           u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match_col[j0] = match_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::pair<std::size_t, std::size_t>> out(n);
  for (std::size_t j = 1; j <= n; ++j) out[match_col[j] - 1] = {match_col[j] - 1, j - 1};
  return out;
}

}  // namespace gradleak
