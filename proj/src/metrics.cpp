#include "gradleak/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace gradleak {

double Mse(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kLengthMismatch, "vectors differ in length");
  if (a.size() == 0) throw Error(ErrorCode::kLengthMismatch, "empty vectors");
  return (a - b).norm() / static_cast<double>(a.size());
}

double Psnr(double mse) {
  if (mse < 0.0 || std::isnan(mse)) throw Error(ErrorCode::kNegativeMse, "mse must be non-negative");
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double LabelAccuracy(const std::vector<int>& recon, const std::vector<int>& truth) {
  if (truth.empty()) return 0.0;
  std::map<int, std::size_t> left;
  for (int y : recon) ++left[y];
  std::size_t hits = 0;
  for (int y : truth) {
    auto it = left.find(y);
    if (it != left.end() && it->second > 0) {
      --it->second;
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

MatchedScore MatchAndScore(const Batch& recon, const Batch& truth) {
  MatchedScore out;
  const std::size_t nr = recon.size(), nt = truth.size();
  out.size_mismatch = nr != nt;
  out.lacc = LabelAccuracy(recon.labels, truth.labels);
  const std::size_t n = std::max(nr, nt);
  if (std::min(nr, nt) == 0) return out;

  Matrix cost = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < nr; ++i) {
    for (std::size_t j = 0; j < nt; ++j) {
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = Mse(recon.inputs[i], truth.inputs[j]);
    }
  }
  double psnr_sum = 0.0, mse_sum = 0.0;
  for (const auto& [i, j] : Hungarian(cost)) {
    if (i >= nr || j >= nt) continue;
    const double e = cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    const double p = Psnr(e);
    out.pairs.emplace_back(i, j);
    out.per_pair_mse.push_back(e);
    out.per_pair_psnr.push_back(p);
    mse_sum += e;
    if (std::isinf(p)) {
      ++out.infinite_psnr;
      psnr_sum += kPsnrCap;
    } else {
      psnr_sum += std::min(p, kPsnrCap);
    }
  }
  const auto k = static_cast<double>(out.pairs.size());
  out.mean_mse = mse_sum / k;
  out.mean_psnr = psnr_sum / k;
  return out;
}

namespace {

std::vector<double> Ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double SpearmanRho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error(ErrorCode::kLengthMismatch, "series differ in length");
  if (x.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need at least two points");
  const std::vector<double> rx = Ranks(x), ry = Ranks(y);
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace gradleak
