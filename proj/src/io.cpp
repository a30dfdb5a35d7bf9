#include "gradleak/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

namespace gradleak::io {

namespace {

[[noreturn]] void Fail(const std::string& msg) { throw Error(ErrorCode::kIoError, msg); }

fs::path BinPath(const fs::path& json_path) {
  fs::path p = json_path;
  p.replace_extension(".bin");
  return p;
}

void AppendRowMajor(const Matrix& m, std::vector<double>& out) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  }
}

class Reader {
 public:
  Reader(std::vector<double> v, const fs::path& src) : v_(std::move(v)), src_(src) {}
  Matrix Take(Eigen::Index rows, Eigen::Index cols) {
    Need(static_cast<std::size_t>(rows * cols));
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v_[pos_++];
    }
    return m;
  }
  Vector TakeVector(Eigen::Index n) {
    Need(static_cast<std::size_t>(n));
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = v_[pos_++];
    return x;
  }
  void Finish() const {
    if (pos_ != v_.size()) Fail(src_.string() + ": " + std::to_string(v_.size() - pos_) + " trailing values");
  }

 private:
  void Need(std::size_t n) const {
    if (pos_ + n > v_.size()) Fail(src_.string() + ": file too short");
  }
  std::vector<double> v_;
  fs::path src_;
  std::size_t pos_ = 0;
};

std::vector<std::size_t> ReadDims(const Json& j, const fs::path& path) {
  if (!j.contains("dims") || !j["dims"].is_array()) Fail(path.string() + ": missing dims");
  auto dims = j["dims"].get<std::vector<std::size_t>>();
  if (dims.size() < 2) Fail(path.string() + ": dims needs at least two entries");
  return dims;
}

void CheckEncoding(const Json& j, const fs::path& path) {
  if (j.value("byte_order", "LE") != "LE" || j.value("dtype", "f64") != "f64") {
    Fail(path.string() + ": only little-endian f64 payloads are supported");
  }
}

Json NumberOrInf(double v) { return std::isinf(v) ? Json("inf") : Json(v); }

}  // namespace

void WriteF64(const fs::path& path, const std::vector<double>& values) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) Fail("cannot open " + path.string() + " for writing");
  std::vector<unsigned char> buf(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) buf[i * 8 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(bits >> (8 * b));
  }
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) Fail("write failed: " + path.string());
}

std::vector<double> ReadF64(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) Fail("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() % 8 != 0) Fail(path.string() + ": size is not a multiple of 8 bytes");
  std::vector<double> out(buf.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{buf[i * 8 + static_cast<std::size_t>(b)]} << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

void WriteJson(const fs::path& path, const Json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) Fail("cannot open " + path.string() + " for writing");
  f << j.dump(2) << '\n';
  if (!f) Fail("write failed: " + path.string());
}

Json ReadJson(const fs::path& path) {
  std::ifstream f(path);
  if (!f) Fail("cannot open " + path.string());
  try {
    return Json::parse(f);
  } catch (const Json::exception& e) {
    Fail(path.string() + ": " + e.what());
  }
}

void WriteModel(const fs::path& json_path, const FcnParams& params) {
  params.Validate();
  std::vector<double> flat;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    AppendRowMajor(params.weights[i], flat);
    flat.insert(flat.end(), params.biases[i].data(), params.biases[i].data() + params.biases[i].size());
  }
  const fs::path bin = BinPath(json_path);
  WriteJson(json_path, {{"schema_version", kSchemaVersion},
                        {"dims", params.dims},
                        {"first_layer_relu", params.first_layer_relu},
                        {"seed", params.seed},
                        {"byte_order", "LE"},
                        {"dtype", "f64"},
                        {"data", bin.filename().string()}});
  WriteF64(bin, flat);
}

FcnParams ReadModel(const fs::path& json_path) {
  const Json j = ReadJson(json_path);
  CheckEncoding(j, json_path);
  FcnParams p;
  p.dims = ReadDims(j, json_path);
  p.first_layer_relu = j.value("first_layer_relu", true);
  p.seed = j.value("seed", std::uint64_t{0});
  const fs::path bin = json_path.parent_path() / j.value("data", BinPath(json_path).filename().string());
  Reader r(ReadF64(bin), bin);
  for (std::size_t i = 0; i + 1 < p.dims.size(); ++i) {
    p.weights.push_back(r.Take(static_cast<Eigen::Index>(p.dims[i + 1]), static_cast<Eigen::Index>(p.dims[i])));
    p.biases.push_back(r.TakeVector(static_cast<Eigen::Index>(p.dims[i + 1])));
  }
  r.Finish();
  p.Validate();
  return p;
}

void WriteBatch(const fs::path& json_path, const Batch& batch) {
  batch.Validate();
  std::vector<int> labels;
  for (int y : batch.labels) labels.push_back(y + 1);
  Json j = {{"schema_version", kSchemaVersion},
            {"M", batch.size()},
            {"d0", batch.input_dim()},
            {"K", batch.num_classes},
            {"labels", labels},
            {"byte_order", "LE"},
            {"dtype", "f64"}};
  if (batch.raster) j["raster"] = *batch.raster;
  const fs::path bin = BinPath(json_path);
  j["data"] = bin.filename().string();
  std::vector<double> flat;
  for (const auto& x : batch.inputs) flat.insert(flat.end(), x.data(), x.data() + x.size());
  WriteJson(json_path, j);
  WriteF64(bin, flat);
}

Batch ReadBatch(const fs::path& json_path) {
  const Json j = ReadJson(json_path);
  CheckEncoding(j, json_path);
  Batch b;
  std::size_t m = 0, d0 = 0;
  try {
    m = j.at("M").get<std::size_t>();
    d0 = j.at("d0").get<std::size_t>();
    b.num_classes = j.at("K").get<std::size_t>();
    for (int y : j.at("labels").get<std::vector<int>>()) b.labels.push_back(y - 1);
    if (j.contains("raster")) b.raster = j["raster"].get<std::array<std::size_t, 3>>();
  } catch (const Json::exception& e) {
    Fail(json_path.string() + ": " + e.what());
  }
  const fs::path bin = json_path.parent_path() / j.value("data", BinPath(json_path).filename().string());
  Reader r(ReadF64(bin), bin);
  for (std::size_t s = 0; s < m; ++s) b.inputs.push_back(r.TakeVector(static_cast<Eigen::Index>(d0)));
  r.Finish();
  b.Validate();
  return b;
}

void WriteGradient(const fs::path& json_path, const GradientBundle& grad,
                   const std::vector<std::size_t>& dims) {
  if (grad.weight_grads.size() + 1 != dims.size()) Fail("gradient does not match dims");
  std::vector<double> flat;
  for (std::size_t i = 0; i < grad.weight_grads.size(); ++i) {
    AppendRowMajor(grad.weight_grads[i], flat);
    flat.insert(flat.end(), grad.bias_grads[i].data(), grad.bias_grads[i].data() + grad.bias_grads[i].size());
  }
  const fs::path bin = BinPath(json_path);
  Json j = {{"schema_version", kSchemaVersion}, {"dims", dims},   {"byte_order", "LE"},
            {"dtype", "f64"},                   {"data", bin.filename().string()}};
  if (grad.batch_size_hint) j["batch_size"] = *grad.batch_size_hint;
  if (grad.weight_mask) {
    fs::path mask_path = json_path;
    mask_path.replace_extension(".mask");
    std::ofstream f(mask_path, std::ios::binary | std::ios::trunc);
    if (!f) Fail("cannot open " + mask_path.string());
    for (const auto& m : *grad.weight_mask) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) f.put(static_cast<char>(m(r, c) ? 1 : 0));
      }
    }
    if (!f) Fail("write failed: " + mask_path.string());
    j["mask"] = mask_path.filename().string();
  }
  WriteJson(json_path, j);
  WriteF64(bin, flat);
}

GradientBundle ReadGradient(const fs::path& json_path) {
  const Json j = ReadJson(json_path);
  CheckEncoding(j, json_path);
  const auto dims = ReadDims(j, json_path);
  GradientBundle g;
  const fs::path bin = json_path.parent_path() / j.value("data", BinPath(json_path).filename().string());
  Reader r(ReadF64(bin), bin);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    g.weight_grads.push_back(r.Take(static_cast<Eigen::Index>(dims[i + 1]), static_cast<Eigen::Index>(dims[i])));
    g.bias_grads.push_back(r.TakeVector(static_cast<Eigen::Index>(dims[i + 1])));
  }
  r.Finish();
  if (j.contains("batch_size") && !j["batch_size"].is_null()) g.batch_size_hint = j["batch_size"].get<std::size_t>();
  if (j.contains("mask") && !j["mask"].is_null()) {
    const fs::path mask_path = json_path.parent_path() / j["mask"].get<std::string>();
    std::ifstream f(mask_path, std::ios::binary);
    if (!f) Fail("cannot open " + mask_path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    std::vector<AvailabilityMask> masks;
    for (const auto& w : g.weight_grads) {
      AvailabilityMask m(w.rows(), w.cols());
      for (Eigen::Index rr = 0; rr < m.rows(); ++rr) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          if (pos >= bytes.size()) Fail(mask_path.string() + ": file too short");
          m(rr, c) = bytes[pos++] ? 1 : 0;
        }
      }
      masks.push_back(std::move(m));
    }
    if (pos != bytes.size()) Fail(mask_path.string() + ": trailing bytes");
    g.weight_mask = std::move(masks);
  }
  return g;
}

const char* RasterExtension(const std::array<std::size_t, 3>& shape) {
  return shape[0] == 3 ? ".ppm" : ".pgm";
}

void WriteRaster(const fs::path& path, const Vector& x, const std::array<std::size_t, 3>& shape) {
  const auto [ch, h, w] = shape;
  if (ch != 1 && ch != 3) Fail("raster dumps need 1 or 3 channels");
  if (static_cast<std::size_t>(x.size()) != ch * h * w) Fail("raster shape does not match the input");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) Fail("cannot open " + path.string() + " for writing");
  f << (ch == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  auto pixel = [](double v) {
    const double q = std::round((v + 1.0) / 2.0 * 255.0);
    return static_cast<char>(static_cast<unsigned char>(std::clamp(q, 0.0, 255.0)));
  };
  // Inputs are channel-major; PPM interleaves channels per pixel.
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t k = 0; k < ch; ++k) f.put(pixel(x(static_cast<Eigen::Index>(k * h * w + r * w + c))));
    }
  }
  if (!f) Fail("write failed: " + path.string());
}

Json ToJson(const ReconResult& r) {
  Json timings = Json::array();
  for (const auto& t : r.timings) timings.push_back({{"stage", t.stage}, {"ms", t.ms}});
  std::vector<int> labels;
  for (int y : r.labels) labels.push_back(y + 1);
  Json groups = Json::array();
  for (const auto& g : r.profile.exan_groups) groups.push_back(g);
  Json loss_vectors = Json::array();
  for (const auto& g : r.profile.loss_vectors) loss_vectors.push_back(std::vector<double>(g.data(), g.data() + g.size()));
  return {
      {"batch_size", r.profile.batch_size},
      {"labels", labels},
      {"exan_groups", groups},
      {"denominator_row", r.profile.denominator_row + 1},
      {"g1_values", r.profile.g1_values},
      {"loss_vectors", loss_vectors},
      {"residual_norm", r.residual_norm},
      {"iterations", r.iterations},
      {"converged", r.converged},
      {"system", {{"rows", r.system_rows}, {"cols", r.system_cols}, {"nnz", r.system_nnz}}},
      {"patterns",
       {{"subset_sum_neurons", r.pattern_diagnostics.subset_sum_neurons},
        {"resolved_by_column", r.pattern_diagnostics.resolved_by_column},
        {"ambiguous_neurons", r.pattern_diagnostics.ambiguous_neurons},
        {"inexact_neurons", r.pattern_diagnostics.inexact_neurons}}},
      {"timings", timings},
      {"warnings", r.warnings},
  };
}

Json ToJson(const MatchedScore& s) {
  Json pairs = Json::array();
  for (std::size_t i = 0; i < s.pairs.size(); ++i) {
    pairs.push_back({{"recon", s.pairs[i].first},
                     {"truth", s.pairs[i].second},
                     {"mse", s.per_pair_mse[i]},
                     {"psnr", NumberOrInf(s.per_pair_psnr[i])}});
  }
  return {{"per_pair", pairs},         {"mean_mse", s.mean_mse},
          {"mean_psnr", s.mean_psnr},  {"infinite_psnr_pairs", s.infinite_psnr},
          {"lacc", s.lacc},            {"size_mismatch", s.size_mismatch}};
}

Json ToJson(const BoundReport& b) {
  Json eta = Json::array();
  for (const auto& e : b.eta) eta.push_back(std::vector<double>(e.data(), e.data() + e.size()));
  return {{"schema_version", kSchemaVersion},
          {"eta", eta},
          {"lower_bound", b.lower_bound},
          {"achieved_norm", b.achieved_norm}};
}

Json ToJson(const ExclusivityState& st, const ExanTable& table) {
  Json samples = Json::array();
  for (std::size_t s = 0; s < st.evidence.size(); ++s) {
    const auto& ev = st.evidence[s];
    Json exans = Json::array();
    for (std::size_t i = 1; i <= table.layers(); ++i) exans.push_back(table.exans(s, i));
    samples.push_back({{"sample", s},
                       {"exan_counts", ev.counts},
                       {"exans", exans},
                       {"last_layer_sufficient", ev.last_layer_sufficient},
                       {"inner_layers_sufficient", ev.inner_layers_sufficient},
                       {"first_layer_empty", ev.first_layer_empty}});
  }
  return {{"schema_version", kSchemaVersion},
          {"state", ExclusivityKindName(st.kind)},
          {"batch_exceeds_first_width", st.batch_exceeds_first_width},
          {"samples", samples}};
}

}  // namespace gradleak::io
