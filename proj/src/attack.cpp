#include "gradleak/attack.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "gradleak/exclusivity.hpp"
#include "gradleak/kernels.hpp"

namespace gradleak {

std::string_view G1PolicyName(G1Policy p) {
  return p == G1Policy::kTwoThirds ? "two-thirds" : "bias-refine";
}

G1Policy ParseG1Policy(std::string_view name) {
  if (name == "two-thirds") return G1Policy::kTwoThirds;
  if (name == "bias-refine") return G1Policy::kBiasRefine;
  throw Error(ErrorCode::kInvalidArgument, "unknown g1 policy '" + std::string(name) + "'");
}

namespace {

bool Close(double a, double b, double rel) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b));
}

bool LastHiddenIsRelu(const FcnParams& params) {
  return params.hidden_layers() >= 2 || params.first_layer_relu;
}

// Columns of the last weight gradient grouped by identical ratio vectors.
std::vector<std::vector<std::size_t>> GroupColumns(const Matrix& g, std::size_t den,
                                                   const AttackOptions& opts) {
  const Eigen::Index k = g.rows();
  const double scale = g.cwiseAbs().maxCoeff();
  const std::size_t key = den == 0 ? 1 : 0;

  std::vector<std::size_t> cols;
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    if (std::abs(g(static_cast<Eigen::Index>(den), j)) > opts.zero_tol * scale) {
      cols.push_back(static_cast<std::size_t>(j));
    }
  }
  auto ratio = [&](std::size_t row, std::size_t col) {
    return g(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)) /
           g(static_cast<Eigen::Index>(den), static_cast<Eigen::Index>(col));
  };
  std::sort(cols.begin(), cols.end(), [&](std::size_t a, std::size_t b) {
    const double ra = ratio(key, a), rb = ratio(key, b);
    return ra != rb ? ra < rb : a < b;
  });

  std::vector<std::vector<std::size_t>> groups;
  std::size_t start = 0;
  while (start < cols.size()) {
    std::size_t end = start + 1;
    while (end < cols.size() && Close(ratio(key, cols[end - 1]), ratio(key, cols[end]), opts.group_tol)) {
      ++end;
    }
    // Split the run by the full ratio vector.
    std::vector<std::vector<std::size_t>> sub;
    for (std::size_t t = start; t < end; ++t) {
      const std::size_t c = cols[t];
      bool placed = false;
      for (auto& s : sub) {
        bool same = true;
        for (Eigen::Index r = 0; r < k && same; ++r) {
          same = Close(ratio(static_cast<std::size_t>(r), c),
                       ratio(static_cast<std::size_t>(r), s.front()), opts.group_tol);
        }
        if (same) {
          s.push_back(c);
          placed = true;
          break;
        }
      }
      if (!placed) sub.push_back({c});
    }
    std::size_t big = 0;
    for (auto& s : sub) {
      if (s.size() >= 2) {
        ++big;
        std::sort(s.begin(), s.end());
        groups.push_back(std::move(s));
      }
    }
    if (big > 1) {
      throw Error(ErrorCode::kGroupOverlap,
                  "distinct column groups share the ratio " + std::to_string(ratio(key, cols[start])));
    }
    start = end;
  }
  std::sort(groups.begin(), groups.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return groups;
}

int InferLabel(const Vector& rho, const Matrix& g_last, const std::vector<std::size_t>& group,
               bool relu_last, std::vector<std::string>& warnings, std::size_t sample) {
  const Eigen::Index k = rho.size();
  if (k == 2 && relu_last) {
    // g_1 and the last-layer column share a sign because f_H >= 0.
    double s = 0.0;
    for (std::size_t j : group) s += g_last(0, static_cast<Eigen::Index>(j));
    return s < 0.0 ? 0 : 1;
  }
  std::vector<Eigen::Index> neg;
  for (Eigen::Index c = 1; c < k; ++c) {
    if (rho(c) < 0.0) neg.push_back(c);
  }
  if (k > 2 && neg.size() == 1) return static_cast<int>(neg.front());
  if (static_cast<Eigen::Index>(neg.size()) == k - 1) return 0;
  warnings.push_back("sample " + std::to_string(sample) + ": ratio signs fit no label, using 1");
  return 0;
}

double TwoThirdsScale(const Vector& rho, int label) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < rho.size(); ++c) {
    if (c != label) s += rho(c);
  }
  // With Y != 1 the constraint sum_{c != Y} p_c <= 1 bounds g_1 by 1 / s;
  // with Y = 1 every other ratio is -p_c / (1 - p_1) and the sum is -1.
  if (label != 0) return (2.0 / 3.0) / s;
  return -(2.0 / 3.0) / std::abs(s);
}

}  // namespace

LossProfile InferLossProfile(const GradientBundle& grad, const FcnParams& params,
                             const AttackOptions& opts) {
  params.Validate();
  grad.Validate(params);
  const std::size_t h = params.hidden_layers();
  if (h == 0) throw Error(ErrorCode::kPreconditionFailed, "the model has no hidden layer");
  const std::size_t k = params.num_classes();
  if (k < 2) throw Error(ErrorCode::kPreconditionFailed, "need at least two classes");
  const Matrix& g = grad.weight_grads[h];
  if (g.cwiseAbs().maxCoeff() == 0.0) throw Error(ErrorCode::kNoGroups, "last-layer gradient is zero");

  LossProfile prof;
  // Denominator row: class 1 unless another row has more usable columns.
  {
    const double scale = g.cwiseAbs().maxCoeff();
    std::vector<std::size_t> usable(k, 0);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      for (Eigen::Index j = 0; j < g.cols(); ++j) {
        if (std::abs(g(r, j)) > opts.zero_tol * scale) ++usable[static_cast<std::size_t>(r)];
      }
    }
    const auto best = std::max_element(usable.begin(), usable.end());
    prof.denominator_row = usable[0] == *best ? 0 : static_cast<std::size_t>(best - usable.begin());
  }

  prof.exan_groups = GroupColumns(g, prof.denominator_row, opts);
  if (prof.exan_groups.empty()) {
    throw Error(ErrorCode::kNoGroups, "no two last-layer columns share a ratio vector");
  }
  const std::size_t m = prof.exan_groups.size();
  prof.batch_size = m;
  // The equations below are scaled by M, so a group count that disagrees
  // with the known batch size means some sample has no usable ExAN pair.
  if (grad.batch_size_hint && *grad.batch_size_hint != m) {
    throw Error(ErrorCode::kPreconditionFailed, "found " + std::to_string(m) +
                                                    " sample groups for a batch of " +
                                                    std::to_string(*grad.batch_size_hint));
  }

  prof.ratio_table.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  const bool relu_last = LastHiddenIsRelu(params);
  for (std::size_t s = 0; s < m; ++s) {
    Vector rho = Vector::Zero(static_cast<Eigen::Index>(k));
    for (std::size_t j : prof.exan_groups[s]) {
      const auto col = g.col(static_cast<Eigen::Index>(j));
      rho += col / col(0);
    }
    rho /= static_cast<double>(prof.exan_groups[s].size());
    rho(0) = 1.0;
    prof.ratio_table.row(static_cast<Eigen::Index>(s)) = rho.transpose();
    prof.labels.push_back(InferLabel(rho, g, prof.exan_groups[s], relu_last, prof.warnings, s));
  }

  prof.g1_values.resize(m);
  for (std::size_t s = 0; s < m; ++s) {
    prof.g1_values[s] = TwoThirdsScale(prof.ratio_table.row(static_cast<Eigen::Index>(s)).transpose(),
                                       prof.labels[s]);
  }
  if (opts.g1_policy == G1Policy::kBiasRefine) {
    const Matrix& w_last = params.weights[h];
    const Vector& db_last = grad.bias_grads[h];
    const Vector& db_prev = grad.bias_grads[h - 1];
    std::size_t rows = k;
    for (const auto& grp : prof.exan_groups) rows += grp.size();
    Matrix a = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(m));
    Vector b(static_cast<Eigen::Index>(rows));
    const double md = static_cast<double>(m);
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t s = 0; s < m; ++s) {
        a(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(s)) =
            prof.ratio_table(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(c));
      }
      b(static_cast<Eigen::Index>(c)) = md * db_last(static_cast<Eigen::Index>(c));
    }
    std::size_t r = k;
    for (std::size_t s = 0; s < m; ++s) {
      const Vector back = w_last.transpose() * prof.ratio_table.row(static_cast<Eigen::Index>(s)).transpose();
      for (std::size_t j : prof.exan_groups[s]) {
        a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s)) = back(static_cast<Eigen::Index>(j));
        b(static_cast<Eigen::Index>(r)) = md * db_prev(static_cast<Eigen::Index>(j));
        ++r;
      }
    }
    const Vector s1 = a.colPivHouseholderQr().solve(b);
    for (std::size_t s = 0; s < m; ++s) {
      const double v = s1(static_cast<Eigen::Index>(s));
      if (!std::isfinite(v) || v == 0.0 || (v < 0.0) != (prof.labels[s] == 0)) {
        prof.warnings.push_back("sample " + std::to_string(s) +
                                ": bias fit gave an infeasible g_1, keeping the two-thirds value");
        continue;
      }
      prof.g1_values[s] = v;
    }
  }

  for (std::size_t s = 0; s < m; ++s) {
    prof.loss_vectors.push_back(prof.g1_values[s] *
                                prof.ratio_table.row(static_cast<Eigen::Index>(s)).transpose());
  }
  return prof;
}

namespace {

struct SubsetMatch {
  std::uint64_t mask;
  double residual;
};

// Subsets of `values` whose sum lies within tol of target (meet in the
// middle). At most `cap` matches are collected; when none exists the single
// closest subset is returned with exact = false.
std::vector<SubsetMatch> SubsetSums(const std::vector<double>& values, double target, double tol,
                                    std::size_t cap, bool& exact) {
  const std::size_t n = values.size();
  const std::size_t nl = n / 2;
  const std::size_t nr = n - nl;
  std::vector<std::pair<double, std::uint64_t>> left;
  left.reserve(std::size_t{1} << nl);
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << nl); ++bits) {
    double s = 0.0;
    for (std::size_t t = 0; t < nl; ++t) {
      if (bits >> t & 1U) s += values[t];
    }
    left.emplace_back(s, bits);
  }
  std::sort(left.begin(), left.end());

  std::vector<SubsetMatch> out;
  SubsetMatch closest{0, std::numeric_limits<double>::infinity()};
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << nr); ++bits) {
    double s = 0.0;
    for (std::size_t t = 0; t < nr; ++t) {
      if (bits >> t & 1U) s += values[nl + t];
    }
    const double want = target - s;
    auto it = std::lower_bound(left.begin(), left.end(), std::make_pair(want - tol, std::uint64_t{0}));
    for (auto jt = it; jt != left.end() && jt->first <= want + tol; ++jt) {
      if (out.size() < cap) out.push_back({jt->second | bits << nl, std::abs(jt->first - want)});
    }
    for (auto jt : {it, it == left.begin() ? it : it - 1}) {
      if (jt == left.end()) continue;
      const double res = std::abs(jt->first - want);
      if (res < closest.residual) closest = {jt->second | bits << nl, res};
    }
  }
  exact = !out.empty();
  if (!exact) out.push_back(closest);
  return out;
}

}  // namespace

PatternRecovery InferActivationPatterns(const GradientBundle& grad, const LossProfile& profile,
                                        const FcnParams& params, const AttackOptions& opts) {
  const std::size_t h = params.hidden_layers();
  const std::size_t m = profile.batch_size;
  if (h == 0 || m == 0) throw Error(ErrorCode::kPreconditionFailed, "nothing to recover");
  const std::size_t k = params.num_classes();

  PatternRecovery rec;
  auto& masks = rec.patterns.masks;
  masks.assign(m, std::vector<std::vector<std::uint8_t>>(h));
  for (std::size_t s = 0; s < m; ++s) {
    for (std::size_t i = 1; i <= h; ++i) masks[s][i - 1].assign(params.width(i), 0);
  }

  // Layers H-1 .. 1 from the rows of the weight gradient that belong to an
  // ExAN of the layer above.
  std::vector<std::vector<std::size_t>> exan_above = profile.exan_groups;
  std::vector<std::vector<std::size_t>> exan_prev_layer;  // ExANs at H-1
  for (std::size_t i = h - 1; i >= 1; --i) {
    const Matrix& gi = grad.weight_grads[i];
    const double scale = gi.cwiseAbs().maxCoeff();
    const bool linear = i == 1 && !params.first_layer_relu;
    for (std::size_t s = 0; s < m; ++s) {
      auto& mask = masks[s][i - 1];
      if (linear) {
        std::fill(mask.begin(), mask.end(), std::uint8_t{1});
        continue;
      }
      if (exan_above[s].empty()) {
        throw Error(ErrorCode::kPatternAmbiguous, "sample " + std::to_string(s) +
                                                      " has no exclusive neuron at layer " +
                                                      std::to_string(i + 1));
      }
      std::size_t best = exan_above[s].front();
      double best_norm = -1.0;
      for (std::size_t j : exan_above[s]) {
        const double nrm = gi.row(static_cast<Eigen::Index>(j)).norm();
        if (nrm > best_norm) best_norm = nrm, best = j;
      }
      for (std::size_t c = 0; c < mask.size(); ++c) {
        mask[c] = std::abs(gi(static_cast<Eigen::Index>(best), static_cast<Eigen::Index>(c))) >
                          opts.zero_tol * scale
                      ? 1
                      : 0;
      }
    }
    ActivationPattern layer_only;
    layer_only.masks.assign(m, std::vector<std::vector<std::uint8_t>>(1));
    for (std::size_t s = 0; s < m; ++s) layer_only.masks[s][0] = masks[s][i - 1];
    const ExanTable t = ExanCounts(layer_only);
    for (std::size_t s = 0; s < m; ++s) {
      if (t.count(s, 1) == 0) {
        throw Error(ErrorCode::kPatternAmbiguous, "sample " + std::to_string(s) +
                                                      " has no exclusive neuron at layer " +
                                                      std::to_string(i));
      }
    }
    exan_above.clear();
    for (std::size_t s = 0; s < m; ++s) exan_above.push_back(t.exans(s, 1));
    if (i == h - 1) exan_prev_layer = exan_above;
  }

  // Layer H. 1 = active, 0 = inactive, 2 = undetermined.
  const std::size_t dh = params.width(h);
  std::vector<std::vector<std::uint8_t>> state(m, std::vector<std::uint8_t>(dh, 2));
  std::vector<std::uint8_t> grouped(dh, 0);
  for (std::size_t s = 0; s < m; ++s) {
    for (std::size_t j : profile.exan_groups[s]) {
      grouped[j] = 1;
      for (std::size_t t = 0; t < m; ++t) state[t][j] = t == s ? 1 : 0;
    }
  }
  if (h >= 2) {
    // Column c of the gradient of W_{H-1}, for an ExAN c of sample s at layer
    // H-1, is proportional to delta_H of sample s.
    const Matrix& gp = grad.weight_grads[h - 1];
    const double scale = gp.cwiseAbs().maxCoeff();
    for (std::size_t s = 0; s < m; ++s) {
      std::size_t best = exan_prev_layer[s].front();
      double best_norm = -1.0;
      for (std::size_t c : exan_prev_layer[s]) {
        const double nrm = gp.col(static_cast<Eigen::Index>(c)).norm();
        if (nrm > best_norm) best_norm = nrm, best = c;
      }
      for (std::size_t j = 0; j < dh; ++j) {
        if (grouped[j]) continue;
        state[s][j] = std::abs(gp(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(best))) >
                              opts.zero_tol * scale
                          ? 1
                          : 0;
      }
    }
  }

  // Remaining neurons: M db_{H-1}[j] = sum over active samples of (W_H^T g^m)_j.
  const Matrix& w_last = params.weights[h];
  Matrix contrib(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(dh));
  for (std::size_t s = 0; s < m; ++s) {
    contrib.row(static_cast<Eigen::Index>(s)) = (w_last.transpose() * profile.loss_vectors[s]).transpose();
  }
  const Vector& db = grad.bias_grads[h - 1];
  const Matrix& g_last = grad.weight_grads[h];
  const double md = static_cast<double>(m);
  auto& diag = rec.diagnostics;
  for (std::size_t j = 0; j < dh; ++j) {
    if (grouped[j]) continue;
    std::vector<std::size_t> unknown;
    double target = md * db(static_cast<Eigen::Index>(j));
    double mag = std::abs(target);
    for (std::size_t s = 0; s < m; ++s) {
      const double c = contrib(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j));
      mag = std::max(mag, std::abs(c));
      if (state[s][j] == 2) unknown.push_back(s);
      if (state[s][j] == 1) target -= c;
    }
    if (unknown.empty()) continue;
    if (unknown.size() > opts.max_subset_samples || unknown.size() > 62) {
      throw Error(ErrorCode::kPatternAmbiguous,
                  "subset sum over " + std::to_string(unknown.size()) + " samples is too large");
    }
    ++diag.subset_sum_neurons;
    std::vector<double> vals;
    for (std::size_t s : unknown) vals.push_back(contrib(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)));
    bool exact = false;
    const double tol = opts.subset_tol * std::max(1.0, mag);
    std::vector<SubsetMatch> cand = SubsetSums(vals, target, tol, 64, exact);
    std::uint64_t chosen = cand.front().mask;
    if (!exact) {
      diag.inexact_neurons.push_back(j);
    } else if (cand.size() > 1) {
      // The last-layer column is a nonnegative combination of the loss
      // vectors of the samples that activate neuron j.
      const Vector y = md * g_last.col(static_cast<Eigen::Index>(j));
      const double ynorm = std::max(y.norm(), 1e-300);
      std::vector<std::size_t> good;
      std::vector<double> resid(cand.size());
      for (std::size_t c = 0; c < cand.size(); ++c) {
        std::vector<std::size_t> members;
        for (std::size_t t = 0; t < unknown.size(); ++t) {
          if (cand[c].mask >> t & 1U) members.push_back(unknown[t]);
        }
        for (std::size_t s = 0; s < m; ++s) {
          if (state[s][j] == 1) members.push_back(s);
        }
        if (members.empty()) {
          resid[c] = y.norm() / ynorm;
        } else {
          Matrix a(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(members.size()));
          for (std::size_t t = 0; t < members.size(); ++t) {
            a.col(static_cast<Eigen::Index>(t)) = profile.loss_vectors[members[t]];
          }
          const Vector phi = a.colPivHouseholderQr().solve(y);
          resid[c] = (a * phi - y).norm() / ynorm;
          if (resid[c] <= 1e-6 && (phi.array() > 0.0).all()) good.push_back(c);
        }
        if (members.empty() && resid[c] <= 1e-6) good.push_back(c);
      }
      if (good.size() == 1) {
        chosen = cand[good.front()].mask;
        ++diag.resolved_by_column;
      } else {
        if (opts.strict_subset_sum) {
          throw Error(ErrorCode::kSubsetSumAmbiguous,
                      std::to_string(cand.size()) + " subsets fit neuron " + std::to_string(j));
        }
        diag.ambiguous_neurons.push_back(j);
        std::size_t best = 0;
        for (std::size_t c = 1; c < cand.size(); ++c) {
          if (resid[c] < resid[best]) best = c;
        }
        chosen = cand[best].mask;
      }
    }
    for (std::size_t t = 0; t < unknown.size(); ++t) {
      state[unknown[t]][j] = (chosen >> t & 1U) ? 1 : 0;
    }
  }
  for (std::size_t s = 0; s < m; ++s) {
    for (std::size_t j = 0; j < dh; ++j) masks[s][h - 1][j] = state[s][j] == 1 ? 1 : 0;
  }
  return rec;
}

SparseSystem AssembleLinearSystem(const GradientBundle& grad, const LossProfile& profile,
                                  const ActivationPattern& patterns, const FcnParams& params) {
  const std::size_t h = params.hidden_layers();
  const std::size_t m = profile.batch_size;
  const auto d0 = static_cast<Eigen::Index>(params.input_dim());
  if (patterns.samples() != m || patterns.layers() != h) {
    throw Error(ErrorCode::kShapeMismatch, "patterns do not match the loss profile");
  }

  // Per sample: delta[i] for i = 1..H+1 and the affine maps f_i = L_i x + c_i.
  struct SampleMaps {
    std::vector<Vector> delta;  // delta[i], index 0 unused
    std::vector<Matrix> lin;    // lin[i], i = 1..H
    std::vector<Vector> off;
  };
  std::vector<SampleMaps> maps(m);
  kernels::ParallelFor(static_cast<std::int64_t>(m), [&](std::int64_t si) {
    const auto s = static_cast<std::size_t>(si);
    auto& mp = maps[s];
    mp.delta.resize(h + 2);
    mp.delta[h + 1] = profile.loss_vectors[s];
    for (std::size_t i = h; i >= 1; --i) {
      Vector d = params.weights[i].transpose() * mp.delta[i + 1];
      const auto& mask = patterns.mask(s, i);
      for (Eigen::Index t = 0; t < d.size(); ++t) {
        if (!mask[static_cast<std::size_t>(t)]) d(t) = 0.0;
      }
      mp.delta[i] = std::move(d);
    }
    mp.lin.resize(h + 1);
    mp.off.resize(h + 1);
    for (std::size_t i = 1; i <= h; ++i) {
      Matrix l = i == 1 ? params.weights[0] : Matrix(params.weights[i - 1] * mp.lin[i - 1]);
      Vector c = i == 1 ? params.biases[0] : Vector(params.weights[i - 1] * mp.off[i - 1] + params.biases[i - 1]);
      const auto& mask = patterns.mask(s, i);
      for (Eigen::Index t = 0; t < l.rows(); ++t) {
        if (!mask[static_cast<std::size_t>(t)]) {
          l.row(t).setZero();
          c(t) = 0.0;
        }
      }
      mp.lin[i] = std::move(l);
      mp.off[i] = std::move(c);
    }
  });

  // One block per (layer, output neuron); blocks are concatenated in order.
  std::vector<std::pair<std::size_t, Eigen::Index>> blocks;
  for (std::size_t i = 0; i <= h; ++i) {
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(params.width(i + 1)); ++j) blocks.emplace_back(i, j);
  }
  struct Block {
    std::vector<Triplet> entries;  // row field is block-local
    std::vector<double> rhs;
  };
  std::vector<Block> out(blocks.size());
  const double md = static_cast<double>(m);
  kernels::ParallelFor(static_cast<std::int64_t>(blocks.size()), [&](std::int64_t bi) {
    const auto [i, j] = blocks[static_cast<std::size_t>(bi)];
    const Matrix& gi = grad.weight_grads[i];
    Block& blk = out[static_cast<std::size_t>(bi)];
    for (Eigen::Index kk = 0; kk < gi.cols(); ++kk) {
      if (!grad.available(i, j, kk)) continue;
      const auto row = static_cast<std::int64_t>(blk.rhs.size());
      double rhs = md * gi(j, kk);
      const std::size_t before = blk.entries.size();
      for (std::size_t s = 0; s < m; ++s) {
        const double a = maps[s].delta[i + 1](j);
        if (a == 0.0) continue;
        const std::int64_t base = static_cast<std::int64_t>(s) * d0;
        if (i == 0) {
          blk.entries.push_back({row, base + kk, a});
          continue;
        }
        if (!patterns.mask(s, i)[static_cast<std::size_t>(kk)]) continue;
        const auto lrow = maps[s].lin[i].row(kk);
        for (Eigen::Index t = 0; t < d0; ++t) {
          if (lrow(t) != 0.0) blk.entries.push_back({row, base + t, a * lrow(t)});
        }
        rhs -= a * maps[s].off[i](kk);
      }
      if (blk.entries.size() > before) blk.rhs.push_back(rhs);
    }
  });

  SparseSystem sys;
  sys.n_cols = static_cast<std::int64_t>(m) * d0;
  std::size_t total = 0;
  for (const auto& b : out) total += b.entries.size();
  sys.entries.reserve(total);
  for (auto& b : out) {
    const std::int64_t offset = static_cast<std::int64_t>(sys.rhs.size());
    for (auto& e : b.entries) sys.entries.push_back({e.row + offset, e.col, e.value});
    sys.rhs.insert(sys.rhs.end(), b.rhs.begin(), b.rhs.end());
  }
  sys.n_rows = static_cast<std::int64_t>(sys.rhs.size());
  return sys;
}

namespace {

using Clock = std::chrono::steady_clock;

double Millis(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

template <typename Fn>
auto RunStage(std::string_view stage, std::vector<StageTiming>& timings, Fn&& fn) {
  const auto t0 = Clock::now();
  try {
    auto r = fn();
    timings.push_back({std::string(stage), Millis(t0)});
    return r;
  } catch (const NotApplicable&) {
    throw;
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::kNoGroups:
      case ErrorCode::kGroupOverlap:
      case ErrorCode::kPatternAmbiguous:
      case ErrorCode::kSubsetSumAmbiguous:
      case ErrorCode::kPreconditionFailed:
        throw NotApplicable(std::string(stage), e.code(), e.what());
      default:
        throw;
    }
  }
}

}  // namespace

ReconResult Reconstruct(const GradientBundle& grad, const FcnParams& params, const AttackOptions& opts) {
  params.Validate();
  grad.Validate(params);
  ReconResult res;
  res.profile = RunStage(kStageLossProfile, res.timings,
                         [&] { return InferLossProfile(grad, params, opts); });
  PatternRecovery pat = RunStage(kStagePatterns, res.timings, [&] {
    return InferActivationPatterns(grad, res.profile, params, opts);
  });
  res.pattern_diagnostics = pat.diagnostics;
  SparseSystem sys = RunStage(kStageSystem, res.timings, [&] {
    SparseSystem s = AssembleLinearSystem(grad, res.profile, pat.patterns, params);
    if (s.n_rows == 0) throw Error(ErrorCode::kPreconditionFailed, "no usable gradient equations");
    return s;
  });
  res.system_rows = sys.n_rows;
  res.system_cols = sys.n_cols;
  res.system_nnz = sys.entries.size();

  LsmrResult sol = RunStage(kStageSolve, res.timings, [&] {
    try {
      return LsmrSolve(sys, opts.lsmr);
    } catch (const DidNotConverge& e) {
      res.converged = false;
      res.warnings.push_back(e.what());
      return e.best();
    }
  });
  res.residual_norm = sol.residual_norm;
  res.iterations = sol.iterations;

  const auto d0 = static_cast<Eigen::Index>(params.input_dim());
  for (std::size_t s = 0; s < res.profile.batch_size; ++s) {
    res.inputs.push_back(sol.solution.segment(static_cast<Eigen::Index>(s) * d0, d0));
  }
  res.labels = res.profile.labels;
  res.warnings.insert(res.warnings.begin(), res.profile.warnings.begin(), res.profile.warnings.end());
  for (std::size_t j : pat.diagnostics.ambiguous_neurons) {
    res.warnings.push_back("subset sum ambiguous at last-layer neuron " + std::to_string(j));
  }
  for (std::size_t j : pat.diagnostics.inexact_neurons) {
    res.warnings.push_back("no exact subset sum at last-layer neuron " + std::to_string(j));
  }
  return res;
}

GradientBundle MaskGradient(const GradientBundle& grad, double beta, std::uint64_t rng_seed) {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "beta must lie in [0, 1]");
  }
  GradientBundle out = grad;
  const std::size_t layers = grad.weight_grads.size();
  std::vector<AvailabilityMask> mask(layers);
  for (std::size_t i = 0; i < layers; ++i) {
    mask[i] = AvailabilityMask::Ones(grad.weight_grads[i].rows(), grad.weight_grads[i].cols());
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < layers; ++i) n += static_cast<std::size_t>(mask[i].size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(rng_seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto keep = static_cast<std::size_t>(std::llround(beta * static_cast<double>(n)));

  std::vector<std::uint8_t> flat(n, 0);
  for (std::size_t t = 0; t < keep; ++t) flat[order[t]] = 1;
  std::size_t pos = 0;
  for (std::size_t i = 0; i + 1 < layers; ++i) {
    // Row-major walk, matching GradientBundle::Flatten.
    for (Eigen::Index r = 0; r < mask[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < mask[i].cols(); ++c) {
        const bool before = grad.available(i, r, c);
        mask[i](r, c) = (flat[pos++] && before) ? 1 : 0;
      }
    }
  }
  out.weight_mask = std::move(mask);
  return out;
}

}  // namespace gradleak
