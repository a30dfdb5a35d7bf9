#include "gradleak/exclusivity.hpp"

#include <algorithm>

#include "gradleak/kernels.hpp"

namespace gradleak {

std::string_view ExclusivityKindName(ExclusivityKind kind) {
  switch (kind) {
    case ExclusivityKind::kInsecure: return "Insecure";
    case ExclusivityKind::kSecure: return "Secure";
    case ExclusivityKind::kOther: return "Other";
  }
  return "Other";
}

ExanTable ExanCounts(const ActivationPattern& patterns) {
  const std::size_t m = patterns.samples();
  if (m == 0) throw Error(ErrorCode::kEmptyBatch, "no activation patterns");
  const std::size_t layers = patterns.layers();
  for (const auto& s : patterns.masks) {
    if (s.size() != layers) throw Error(ErrorCode::kShapeMismatch, "patterns differ in depth");
    for (std::size_t i = 0; i < layers; ++i) {
      if (s[i].size() != patterns.masks.front()[i].size()) {
        throw Error(ErrorCode::kShapeMismatch, "patterns differ in layer width");
      }
    }
  }
  ExanTable t;
  t.indices.assign(m, std::vector<std::vector<std::size_t>>(layers));
  std::vector<const std::uint8_t*> ptrs(m);
  std::vector<int> owner;
  for (std::size_t i = 0; i < layers; ++i) {
    for (std::size_t s = 0; s < m; ++s) ptrs[s] = patterns.masks[s][i].data();
    const std::size_t width = patterns.masks.front()[i].size();
    kernels::ExclusiveOwners(ptrs, width, owner);
    for (std::size_t j = 0; j < width; ++j) {
      if (owner[j] >= 0) t.indices[static_cast<std::size_t>(owner[j])][i].push_back(j);
    }
  }
  return t;
}

ExclusivityState ClassifyBatch(const ExanTable& table, std::size_t m, std::size_t d1) {
  ExclusivityState st;
  st.batch_exceeds_first_width = m > d1;
  const std::size_t hidden = table.layers();
  bool insecure = hidden > 0 && table.samples() > 0;
  bool secure = hidden > 0 && table.samples() > 0 && st.batch_exceeds_first_width;
  for (std::size_t s = 0; s < table.samples(); ++s) {
    SampleEvidence ev;
    for (std::size_t i = 1; i <= hidden; ++i) ev.counts.push_back(table.count(s, i));
    if (hidden > 0) {
      ev.last_layer_sufficient = ev.counts.back() >= 2;
      ev.inner_layers_sufficient =
          std::all_of(ev.counts.begin(), ev.counts.end() - 1, [](std::size_t c) { return c >= 1; });
      ev.first_layer_empty = ev.counts.front() == 0;
    }
    insecure = insecure && ev.last_layer_sufficient && ev.inner_layers_sufficient;
    secure = secure && ev.first_layer_empty;
    st.evidence.push_back(std::move(ev));
  }
  st.kind = insecure ? ExclusivityKind::kInsecure
                     : (secure ? ExclusivityKind::kSecure : ExclusivityKind::kOther);
  return st;
}

ExclusivityState ClassifyBatch(const FcnParams& params, const Batch& batch) {
  const ExanTable t = ExanCounts(BatchPattern(params, batch));
  return ClassifyBatch(t, batch.size(), params.hidden_layers() > 0 ? params.width(1) : 0);
}

namespace {

bool TrialIsInsecure(const FcnParams& params, const Batch& batch) {
  return ClassifyBatch(params, batch).kind == ExclusivityKind::kInsecure;
}

}  // namespace

double InsecureProportion(const FcnParams& params, const BatchSource& source, std::size_t trials,
                          std::size_t batch_size, std::uint64_t rng_seed) {
  if (trials == 0) throw Error(ErrorCode::kInvalidArgument, "trials must be at least 1");
  std::vector<std::uint8_t> hit(trials, 0);
  kernels::ParallelFor(static_cast<std::int64_t>(trials), [&](std::int64_t t) {
    const Batch b = source.Sample(batch_size, DeriveSeed(rng_seed, static_cast<std::uint64_t>(t)));
    hit[static_cast<std::size_t>(t)] = TrialIsInsecure(params, b) ? 1 : 0;
  });
  const auto n = std::count(hit.begin(), hit.end(), std::uint8_t{1});
  return static_cast<double>(n) / static_cast<double>(trials);
}

CurationResult CurateInsecureBatch(const FcnParams& params, const BatchSource& source,
                                   std::size_t batch_size, std::size_t max_trials,
                                   std::uint64_t rng_seed) {
  if (max_trials == 0) throw Error(ErrorCode::kInvalidArgument, "max_trials must be at least 1");
  const std::size_t chunk = 32 * static_cast<std::size_t>(kernels::MaxThreads());
  std::vector<std::uint8_t> hit;
  for (std::size_t start = 0; start < max_trials; start += chunk) {
    const std::size_t n = std::min(chunk, max_trials - start);
    hit.assign(n, 0);
    kernels::ParallelFor(static_cast<std::int64_t>(n), [&](std::int64_t k) {
      const auto t = start + static_cast<std::size_t>(k);
      const Batch b = source.Sample(batch_size, DeriveSeed(rng_seed, t));
      hit[static_cast<std::size_t>(k)] = TrialIsInsecure(params, b) ? 1 : 0;
    });
    const auto it = std::find(hit.begin(), hit.end(), std::uint8_t{1});
    if (it != hit.end()) {
      const auto t = start + static_cast<std::size_t>(it - hit.begin());
      return {source.Sample(batch_size, DeriveSeed(rng_seed, t)), t + 1};
    }
  }
  throw CurationFailed(max_trials);
}

}  // namespace gradleak
