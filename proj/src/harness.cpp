#include "gradleak/harness.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <mutex>

#include "gradleak/defense.hpp"
#include "gradleak/exclusivity.hpp"
#include "gradleak/io.hpp"
#include "gradleak/kernels.hpp"
#include "gradleak/metrics.hpp"

namespace gradleak::harness {

namespace {

using io::Json;

// Probe set used to calibrate activation rates.
constexpr std::size_t kProbeSize = 4096;
constexpr std::uint64_t kProbeStream = 0x70726f6265;

class Manifest {
 public:
  Manifest(fs::path dir, std::string command) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    doc_ = {{"schema_version", io::kSchemaVersion},
            {"command", std::move(command)},
            {"threads", kernels::MaxThreads()},
            {"files", Json::array()}};
  }
  fs::path Path(const std::string& name) {
    doc_["files"].push_back(name);
    return dir_ / name;
  }
  Json& operator[](const char* key) { return doc_[key]; }
  void Write() const { io::WriteJson(dir_ / "manifest.json", doc_); }

 private:
  fs::path dir_;
  Json doc_;
};

std::string Numbered(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03zu%s", stem, i, ext);
  return buf;
}

double MillisSince(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

Json AttackReport(const ReconResult* rec, const Batch* truth, const Batch* recon_batch, double ms) {
  Json j = {{"schema_version", io::kSchemaVersion}, {"runtime_ms", ms}};
  if (rec) {
    j["status"] = "ok";
    j["stage_diagnostics"] = io::ToJson(*rec);
  }
  if (rec && truth && recon_batch) {
    const Json s = io::ToJson(MatchAndScore(*recon_batch, *truth));
    for (auto it = s.begin(); it != s.end(); ++it) j[it.key()] = it.value();
  }
  return j;
}

Json NotApplicableReport(const NotApplicable& e, double ms) {
  return {{"schema_version", io::kSchemaVersion},
          {"status", "not_applicable"},
          {"stage", e.stage()},
          {"cause", ErrorCodeName(e.cause())},
          {"message", e.what()},
          {"runtime_ms", ms}};
}

Batch ReconBatch(const ReconResult& r, const FcnParams& params, const Batch* truth) {
  Batch b;
  b.inputs = r.inputs;
  b.labels = r.labels;
  b.num_classes = params.num_classes();
  if (truth) b.raster = truth->raster;
  return b;
}

void DumpRasters(Manifest& man, const char* stem, const Batch& b) {
  if (!b.raster) return;
  const auto& shape = *b.raster;
  if (shape[0] != 1 && shape[0] != 3) return;
  for (std::size_t s = 0; s < b.size(); ++s) {
    io::WriteRaster(man.Path(Numbered(stem, s, io::RasterExtension(shape))), b.inputs[s], shape);
  }
}

}  // namespace

FcnParams GenerateModel(const ModelSpec& spec) {
  FcnParams p = RandomParams(spec.dims, spec.seed, spec.first_layer_relu);
  if (spec.activation_rate) {
    const Batch probe = UniformBatch(kProbeSize, spec.dims.front(), spec.dims.back(),
                                     DeriveSeed(spec.seed, kProbeStream));
    CalibrateActivationRate(p, probe.inputs, *spec.activation_rate);
  }
  return p;
}

Batch GenerateBatch(const BatchSpec& spec) {
  if (spec.m == 0) throw Error(ErrorCode::kInvalidArgument, "batch size must be at least 1");
  Batch b = UniformBatch(spec.m, spec.d0, spec.k, spec.seed);
  b.raster = spec.raster;
  b.Validate(true);
  return b;
}

int RunGenModel(const GenModelConfig& cfg) {
  const FcnParams p = GenerateModel(cfg.spec);
  Manifest man(cfg.out, "gen-model");
  io::WriteModel(man.Path("model.json"), p);
  man.Path("model.bin");
  man["seed"] = cfg.spec.seed;
  man.Write();
  return kExitOk;
}

int RunGenBatch(const GenBatchConfig& cfg) {
  Manifest man(cfg.out, "gen-batch");
  Batch b;
  if (cfg.curate_model) {
    const FcnParams p = io::ReadModel(*cfg.curate_model);
    if (p.input_dim() != cfg.spec.d0 || p.num_classes() != cfg.spec.k) {
      throw Error(ErrorCode::kShapeMismatch, "batch spec does not match the curation model");
    }
    const UniformBatchSource src(cfg.spec.d0, cfg.spec.k);
    CurationResult c = CurateInsecureBatch(p, src, cfg.spec.m, cfg.max_trials, cfg.spec.seed);
    b = std::move(c.batch);
    b.raster = cfg.spec.raster;
    b.Validate(true);
    man["curation_trials"] = c.trials;
  } else {
    b = GenerateBatch(cfg.spec);
  }
  io::WriteBatch(man.Path("batch.json"), b);
  man.Path("batch.bin");
  man["seed"] = cfg.spec.seed;
  man.Write();
  return kExitOk;
}

int RunGradient(const GradientConfig& cfg) {
  const FcnParams p = io::ReadModel(cfg.model);
  const Batch b = io::ReadBatch(cfg.batch);
  GradientBundle g = AverageGradient(p, b);
  g.batch_size_hint = b.size();
  Manifest man(cfg.out, "gradient");
  if (cfg.dpsgd_clip || cfg.dpsgd_sigma) {
    g = DpsgdObfuscate(g, cfg.dpsgd_clip.value_or(1.0), cfg.dpsgd_sigma.value_or(0.0), cfg.seed);
    man["dpsgd"] = {{"clip", cfg.dpsgd_clip.value_or(1.0)}, {"sigma", cfg.dpsgd_sigma.value_or(0.0)}};
  }
  io::WriteGradient(man.Path("grad.json"), g, p.dims);
  man.Path("grad.bin");
  man["seed"] = cfg.seed;
  man.Write();
  return kExitOk;
}

int RunAttack(const AttackConfig& cfg) {
  const FcnParams p = io::ReadModel(cfg.model);
  GradientBundle g = io::ReadGradient(cfg.gradient);
  std::optional<Batch> truth;
  if (cfg.truth) truth = io::ReadBatch(*cfg.truth);
  Manifest man(cfg.out, "attack");
  man["seed"] = cfg.seed;
  if (cfg.beta) {
    g = MaskGradient(g, *cfg.beta, cfg.seed);
    man["beta"] = *cfg.beta;
  }
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const ReconResult r = Reconstruct(g, p, cfg.opts);
    const double ms = MillisSince(t0);
    const Batch recon = ReconBatch(r, p, truth ? &*truth : nullptr);
    io::WriteBatch(man.Path("recon_batch.json"), recon);
    man.Path("recon_batch.bin");
    io::WriteJson(man.Path("report.json"), AttackReport(&r, truth ? &*truth : nullptr, &recon, ms));
    DumpRasters(man, "sample", recon);
    man.Write();
    return kExitOk;
  } catch (const NotApplicable& e) {
    io::WriteJson(man.Path("report.json"), NotApplicableReport(e, MillisSince(t0)));
    man.Write();
    std::cerr << "not applicable: " << e.what() << '\n';
    return kExitNotApplicable;
  }
}

int RunDefend(const DefendConfig& cfg) {
  const FcnParams p = io::ReadModel(cfg.model);
  const Batch b = io::ReadBatch(cfg.batch);
  Manifest man(cfg.out, "defend");
  man["seed"] = cfg.seed;
  const PerturbationSubspace s = ComputePerturbationSubspace(p, b);
  Json diffs = Json::array();
  double worst = 0.0;
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    const Batch art = SampleArtifactBatch(b, s, DeriveSeed(cfg.seed, i), cfg.box);
    const double d = VerifyGradientInvariance(p, b, art);
    worst = std::max(worst, d);
    double delta = 0.0;
    for (std::size_t m = 0; m < b.size(); ++m) delta += (art.inputs[m] - b.inputs[m]).squaredNorm();
    diffs.push_back({{"artifact", i}, {"max_relative_diff", d}, {"delta_norm", std::sqrt(delta)}});
    io::WriteBatch(man.Path(Numbered("artifact", i, ".json")), art);
    man.Path(Numbered("artifact", i, ".bin"));
    if (art.raster) {
      for (std::size_t m = 0; m < art.size(); ++m) {
        const std::string name = "artifact_" + std::to_string(i) + "_" +
                                 Numbered("sample", m, io::RasterExtension(*art.raster));
        io::WriteRaster(man.Path(name), art.inputs[m], *art.raster);
      }
    }
  }
  io::WriteJson(man.Path("invariance.json"), {{"schema_version", io::kSchemaVersion},
                                              {"subspace_dim", s.dim},
                                              {"dim_upper_bound", b.size() * (p.input_dim() - p.width(1))},
                                              {"max_relative_diff", worst},
                                              {"artifacts", diffs}});
  io::WriteJson(man.Path("bound.json"), io::ToJson(PerturbationLowerBound(p, b)));
  man.Write();
  return kExitOk;
}

int RunAudit(const AuditConfig& cfg) {
  const FcnParams p = io::ReadModel(cfg.model);
  const Batch b = io::ReadBatch(cfg.batch);
  const ExanTable t = ExanCounts(BatchPattern(p, b));
  const ExclusivityState st = ClassifyBatch(t, b.size(), p.hidden_layers() ? p.width(1) : 0);
  const Json j = io::ToJson(st, t);
  if (!cfg.out.empty()) {
    Manifest man(cfg.out, "audit");
    io::WriteJson(man.Path("audit.json"), j);
    man.Write();
  }
  std::cout << ExclusivityKindName(st.kind) << '\n';
  return kExitOk;
}

namespace {

struct AxisPoint {
  std::string axis;
  double value = 0.0;
  ModelSpec model;
  std::size_t batch_size = 0;
};

std::vector<AxisPoint> ExpandAxes(const ModelSpec& base, std::size_t batch_size,
                                  const std::vector<std::size_t>& batch_sizes,
                                  const std::vector<std::size_t>& widths,
                                  const std::vector<std::size_t>& depths, std::size_t depth_width) {
  const int axes = !batch_sizes.empty() + !widths.empty() + !depths.empty();
  if (axes > 1) throw Error(ErrorCode::kInvalidArgument, "choose at most one sweep axis");
  if (base.dims.size() < 2) throw Error(ErrorCode::kInvalidArgument, "dims need at least d0 and K");
  const std::size_t d0 = base.dims.front(), k = base.dims.back();
  std::vector<AxisPoint> pts;
  for (std::size_t m : batch_sizes) pts.push_back({"batch_size", double(m), base, m});
  for (std::size_t w : widths) {
    AxisPoint pt{"width", double(w), base, batch_size};
    pt.model.dims = {d0, w, k};
    pts.push_back(pt);
  }
  for (std::size_t depth : depths) {
    AxisPoint pt{"depth", double(depth), base, batch_size};
    pt.model.dims = {d0};
    for (std::size_t i = 0; i < depth; ++i) pt.model.dims.push_back(depth_width);
    pt.model.dims.push_back(k);
    pts.push_back(pt);
  }
  if (pts.empty()) pts.push_back({"none", 0.0, base, batch_size});
  return pts;
}

}  // namespace

int RunStats(const StatsConfig& cfg) {
  const auto pts = ExpandAxes(cfg.model, cfg.batch_size, {}, cfg.widths, cfg.depths, cfg.depth_width);
  Manifest man(cfg.out, "stats");
  Json out = Json::array();
  for (const auto& pt : pts) {
    const FcnParams p = GenerateModel(pt.model);
    const UniformBatchSource src(p.input_dim(), p.num_classes());
    const double prop = InsecureProportion(p, src, cfg.trials, pt.batch_size, cfg.seed);
    out.push_back({{"axis", pt.axis},
                   {"value", pt.value},
                   {"dims", pt.model.dims},
                   {"batch_size", pt.batch_size},
                   {"proportion", prop},
                   {"trials", cfg.trials},
                   {"seed", cfg.seed}});
  }
  io::WriteJson(man.Path("stats.json"), {{"schema_version", io::kSchemaVersion}, {"points", out}});
  man["seed"] = cfg.seed;
  man.Write();
  return kExitOk;
}

namespace {

// Gradient, optional mask, attack and score for one sweep point.
Json RunPoint(const FcnParams& p, const Batch& truth, std::optional<double> beta, std::uint64_t mask_seed,
              const AttackOptions& opts, const fs::path& dir) {
  Manifest man(dir, "sweep-point");
  GradientBundle g = AverageGradient(p, truth);
  g.batch_size_hint = truth.size();
  if (beta) g = MaskGradient(g, *beta, mask_seed);
  io::WriteBatch(man.Path("batch.json"), truth);
  man.Path("batch.bin");
  const auto t0 = std::chrono::steady_clock::now();
  Json row;
  try {
    const ReconResult r = Reconstruct(g, p, opts);
    const double ms = MillisSince(t0);
    const Batch recon = ReconBatch(r, p, &truth);
    const MatchedScore s = MatchAndScore(recon, truth);
    io::WriteBatch(man.Path("recon_batch.json"), recon);
    man.Path("recon_batch.bin");
    io::WriteJson(man.Path("report.json"), AttackReport(&r, &truth, &recon, ms));
    row = {{"status", "ok"}, {"mean_mse", s.mean_mse}, {"mean_psnr", s.mean_psnr}, {"lacc", s.lacc},
           {"runtime_ms", ms}};
  } catch (const NotApplicable& e) {
    io::WriteJson(man.Path("report.json"), NotApplicableReport(e, MillisSince(t0)));
    row = {{"status", "not_applicable"}, {"stage", e.stage()}};
  }
  man.Write();
  return row;
}

}  // namespace

int RunSweep(const SweepConfig& cfg) {
  if (!cfg.betas.empty() && (!cfg.batch_sizes.empty() || !cfg.widths.empty() || !cfg.depths.empty())) {
    throw Error(ErrorCode::kInvalidArgument, "choose at most one sweep axis");
  }
  Manifest man(cfg.out, "sweep");
  std::vector<Json> rows;
  std::string axis;
  std::vector<double> values;

  if (!cfg.betas.empty()) {
    axis = "beta";
    values = cfg.betas;
    const FcnParams p = GenerateModel(cfg.model);
    const UniformBatchSource src(p.input_dim(), p.num_classes());
    const Batch truth = CurateInsecureBatch(p, src, cfg.batch_size, cfg.max_trials, cfg.batch_seed).batch;
    rows.resize(values.size());
    kernels::ParallelFor(static_cast<std::int64_t>(values.size()), [&](std::int64_t i) {
      const auto u = static_cast<std::size_t>(i);
      rows[u] = RunPoint(p, truth, values[u], cfg.mask_seed, cfg.opts, cfg.out / Numbered("point", u, ""));
    });
  } else {
    const auto pts = ExpandAxes(cfg.model, cfg.batch_size, cfg.batch_sizes, cfg.widths, cfg.depths,
                                cfg.depth_width);
    axis = pts.front().axis;
    for (const auto& pt : pts) values.push_back(pt.value);
    rows.resize(pts.size());
    kernels::ParallelFor(static_cast<std::int64_t>(pts.size()), [&](std::int64_t i) {
      const auto u = static_cast<std::size_t>(i);
      const FcnParams p = GenerateModel(pts[u].model);
      const UniformBatchSource src(p.input_dim(), p.num_classes());
      const fs::path dir = cfg.out / Numbered("point", u, "");
      try {
        const Batch truth = CurateInsecureBatch(p, src, pts[u].batch_size, cfg.max_trials,
                                                DeriveSeed(cfg.batch_seed, u))
                                .batch;
        rows[u] = RunPoint(p, truth, std::nullopt, cfg.mask_seed, cfg.opts, dir);
      } catch (const CurationFailed& e) {
        rows[u] = {{"status", "curation_failed"}, {"trials", e.trials()}};
      }
    });
  }

  Json points = Json::array();
  std::vector<double> xs, mses;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Json row = rows[i];
    row["axis"] = axis;
    row["value"] = values[i];
    row["dir"] = Numbered("point", i, "");
    if (row["status"] == "ok") {
      xs.push_back(values[i]);
      mses.push_back(row["mean_mse"].get<double>());
    }
    points.push_back(row);
    man["files"].push_back(Numbered("point", i, "") + "/");
  }
  Json summary = {{"schema_version", io::kSchemaVersion}, {"axis", axis}, {"points", points}};
  if (axis == "beta" && xs.size() >= 2) {
    const double rho = SpearmanRho(xs, mses);
    summary["mse_spearman"] = rho;
    summary["mse_decreasing"] = rho <= -0.8;
  }
  io::WriteJson(man.Path("summary.json"), summary);
  man["model_seed"] = cfg.model.seed;
  man["batch_seed"] = cfg.batch_seed;
  man["mask_seed"] = cfg.mask_seed;
  man.Write();
  return kExitOk;
}

}  // namespace gradleak::harness
