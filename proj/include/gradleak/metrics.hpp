#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "gradleak/fcn.hpp"

namespace gradleak {

// |a - b|_2 / dim.
double Mse(const Vector& a, const Vector& b);

// -10 log10(mse); +inf for mse == 0.
double Psnr(double mse);

inline constexpr double kPsnrCap = 300.0;

struct MatchedScore {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (recon, truth)
  std::vector<double> per_pair_mse;
  std::vector<double> per_pair_psnr;  // may hold +inf
  double mean_mse = 0.0;
  double mean_psnr = 0.0;  // infinite entries counted as kPsnrCap
  std::size_t infinite_psnr = 0;
  double lacc = 0.0;
  bool size_mismatch = false;
};

// Hungarian matching on pairwise MSE. With unequal batch sizes only
// min(|recon|, |truth|) pairs are scored and size_mismatch is set.
MatchedScore MatchAndScore(const Batch& recon, const Batch& truth);

// Multiset intersection of the label lists over the truth batch size.
double LabelAccuracy(const std::vector<int>& recon, const std::vector<int>& truth);

// Spearman rank correlation with average ranks for ties.
double SpearmanRho(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace gradleak
