#include <doctest.h>

#include <fstream>
#include <iterator>
#include <random>

#include "gradleak/harness.hpp"
#include "gradleak/io.hpp"

using namespace gradleak;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("gradleak_test_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string Slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("model round trip is exact") {
    TempDir tmp;
    const FcnParams p = RandomParams({7, 5, 4, 3}, 12, false);
    io::WriteModel(tmp.path() / "m.json", p);
    const FcnParams q = io::ReadModel(tmp.path() / "m.json");
    CHECK(q.dims == p.dims);
    CHECK(q.first_layer_relu == p.first_layer_relu);
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
      CHECK(q.weights[i] == p.weights[i]);
      CHECK(q.biases[i] == p.biases[i]);
    }
    CHECK(fs::file_size(tmp.path() / "m.bin") == 8 * (7 * 5 + 5 + 5 * 4 + 4 + 4 * 3 + 3));
  }

  TEST_CASE("batch round trip keeps labels and raster") {
    TempDir tmp;
    Batch b = UniformBatch(3, 12, 4, 2);
    b.raster = std::array<std::size_t, 3>{3, 2, 2};
    io::WriteBatch(tmp.path() / "b.json", b);
    const io::Json j = io::ReadJson(tmp.path() / "b.json");
    for (std::size_t s = 0; s < 3; ++s) CHECK(j["labels"][s].get<int>() == b.labels[s] + 1);
    CHECK(j["schema_version"] == io::kSchemaVersion);
    const Batch c = io::ReadBatch(tmp.path() / "b.json");
    CHECK(c.inputs == b.inputs);
    CHECK(c.labels == b.labels);
    CHECK(c.raster == b.raster);
  }

  TEST_CASE("gradient round trip keeps the availability mask") {
    TempDir tmp;
    const FcnParams p = RandomParams({6, 8, 3}, 3);
    GradientBundle g = AverageGradient(p, UniformBatch(4, 6, 3, 4));
    g.batch_size_hint = 4;
    g = MaskGradient(g, 0.4, 5);
    io::WriteGradient(tmp.path() / "g.json", g, p.dims);
    const GradientBundle h = io::ReadGradient(tmp.path() / "g.json");
    CHECK(h.Flatten() == g.Flatten());
    CHECK(h.batch_size_hint == g.batch_size_hint);
    REQUIRE(h.weight_mask);
    for (std::size_t i = 0; i < 2; ++i) CHECK((*h.weight_mask)[i] == (*g.weight_mask)[i]);
    CHECK(fs::file_size(tmp.path() / "g.mask") == 6 * 8 + 8 * 3);
  }

  TEST_CASE("truncated binaries are rejected") {
    TempDir tmp;
    io::WriteBatch(tmp.path() / "b.json", UniformBatch(2, 5, 3, 1));
    fs::resize_file(tmp.path() / "b.bin", 8 * 9);
    CHECK_THROWS_AS(io::ReadBatch(tmp.path() / "b.json"), Error);
    CHECK_THROWS_AS(io::ReadModel(tmp.path() / "missing.json"), Error);
  }

  TEST_CASE("raster shape must match the input dimension") {
    Batch b = UniformBatch(2, 12, 3, 1);
    b.raster = std::array<std::size_t, 3>{1, 3, 3};
    TempDir tmp;
    CHECK_THROWS_AS(io::WriteBatch(tmp.path() / "b.json", b), Error);
  }

  TEST_CASE("pgm header and pixel mapping") {
    TempDir tmp;
    Vector x(6);
    x << -1.0, 1.0, 0.0, -1.0, 1.0, 0.0;
    io::WriteRaster(tmp.path() / "x.pgm", x, {1, 2, 3});
    const std::string s = Slurp(tmp.path() / "x.pgm");
    REQUIRE(s.rfind("P5\n3 2\n255\n", 0) == 0);
    const std::string px = s.substr(s.size() - 6);
    CHECK(static_cast<unsigned char>(px[0]) == 0);
    CHECK(static_cast<unsigned char>(px[1]) == 255);
    CHECK(std::string(io::RasterExtension({3, 2, 2})) == ".ppm");
  }

  TEST_CASE("generation is byte-identical for the same seed") {
    TempDir tmp;
    harness::GenModelConfig m{{{10, 16, 4}, 7, true, 0.3}, tmp.path() / "a"};
    harness::RunGenModel(m);
    m.out = tmp.path() / "b";
    harness::RunGenModel(m);
    CHECK(Slurp(tmp.path() / "a" / "model.bin") == Slurp(tmp.path() / "b" / "model.bin"));
    harness::GenBatchConfig b{{4, 10, 4, 9, std::nullopt}, tmp.path() / "c"};
    harness::RunGenBatch(b);
    b.out = tmp.path() / "d";
    harness::RunGenBatch(b);
    CHECK(Slurp(tmp.path() / "c" / "batch.bin") == Slurp(tmp.path() / "d" / "batch.bin"));
    CHECK(io::ReadJson(tmp.path() / "c" / "manifest.json")["command"] == "gen-batch");
  }

  TEST_CASE("end-to-end pipeline through the harness") {
    TempDir tmp;
    const fs::path d = tmp.path();
    harness::RunGenModel({{{16, 64, 5}, 1, true, std::nullopt}, d / "model"});
    harness::GenBatchConfig gb{{3, 16, 5, 2, std::nullopt}, d / "batch"};
    gb.curate_model = d / "model" / "model.json";
    harness::RunGenBatch(gb);
    harness::AuditConfig audit{d / "model" / "model.json", d / "batch" / "batch.json", d / "audit"};
    CHECK(harness::RunAudit(audit) == harness::kExitOk);
    CHECK(io::ReadJson(d / "audit" / "audit.json")["state"] == "Insecure");
    harness::GradientConfig gc{d / "model" / "model.json", d / "batch" / "batch.json", d / "grad"};
    harness::RunGradient(gc);
    harness::AttackConfig ac;
    ac.model = d / "model" / "model.json";
    ac.gradient = d / "grad" / "grad.json";
    ac.out = d / "attack";
    ac.truth = d / "batch" / "batch.json";
    CHECK(harness::RunAttack(ac) == harness::kExitOk);
    const io::Json rep = io::ReadJson(d / "attack" / "report.json");
    CHECK(rep["lacc"].get<double>() == 1.0);
    CHECK(rep["per_pair"].size() == 3);

    gc.out = d / "noisy";
    gc.dpsgd_clip = 1.0;
    gc.dpsgd_sigma = 0.5;
    harness::RunGradient(gc);
    ac.gradient = d / "noisy" / "grad.json";
    ac.out = d / "attack_noisy";
    CHECK(harness::RunAttack(ac) == harness::kExitNotApplicable);
    const io::Json na = io::ReadJson(d / "attack_noisy" / "report.json");
    CHECK(na["status"] == "not_applicable");
    CHECK(na["stage"].get<std::string>().size() > 0);
  }

  TEST_CASE("defend writes invariant artifacts") {
    TempDir tmp;
    const fs::path d = tmp.path();
    harness::RunGenModel({{{20, 4, 16, 5}, 3, false, std::nullopt}, d / "model"});
    harness::RunGenBatch({{6, 20, 5, 4, std::nullopt}, d / "batch"});
    harness::DefendConfig dc{d / "model" / "model.json", d / "batch" / "batch.json", d / "defend", 1, 3, true};
    CHECK(harness::RunDefend(dc) == harness::kExitOk);
    const io::Json inv = io::ReadJson(d / "defend" / "invariance.json");
    CHECK(inv["max_relative_diff"].get<double>() <= 1e-8);
    CHECK(inv["subspace_dim"].get<std::size_t>() <= inv["dim_upper_bound"].get<std::size_t>());
    CHECK(inv["artifacts"].size() == 3);
    CHECK(fs::exists(d / "defend" / "artifact_002.json"));
    CHECK(fs::exists(d / "defend" / "bound.json"));
  }

  TEST_CASE("beta sweep writes six points and the monotonicity flag") {
    TempDir tmp;
    harness::SweepConfig sc;
    sc.model = {{64, 10, 10}, 1, true, 0.3};
    sc.batch_size = 4;
    sc.batch_seed = 1;
    sc.mask_seed = 7;
    sc.betas = {0.05, 0.1, 0.2, 0.4, 0.7, 1.0};
    sc.out = tmp.path() / "sweep";
    CHECK(harness::RunSweep(sc) == harness::kExitOk);
    const io::Json s = io::ReadJson(sc.out / "summary.json");
    CHECK(s["points"].size() == 6);
    CHECK(s["axis"] == "beta");
    CHECK(s.contains("mse_decreasing"));
    CHECK(fs::exists(sc.out / "point_005" / "report.json"));
  }
}
