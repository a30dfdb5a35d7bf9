#pragma once

// On-disk formats. Every payload is a JSON header plus a raw little-endian
// float64 file next to it (same stem, .bin):
//   model:    W_0, b_0, W_1, b_1, ... with matrices row-major
//   batch:    samples one after another, labels 1-based in the header
//   gradient: same layout as the model; an optional mask file holds one byte
//             per weight entry (W_0, W_1, ... row-major), 1 = available

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "gradleak/attack.hpp"
#include "gradleak/defense.hpp"
#include "gradleak/exclusivity.hpp"
#include "gradleak/fcn.hpp"
#include "gradleak/metrics.hpp"

namespace gradleak::io {

namespace fs = std::filesystem;
using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

void WriteModel(const fs::path& json_path, const FcnParams& params);
FcnParams ReadModel(const fs::path& json_path);

void WriteBatch(const fs::path& json_path, const Batch& batch);
Batch ReadBatch(const fs::path& json_path);

void WriteGradient(const fs::path& json_path, const GradientBundle& grad,
                   const std::vector<std::size_t>& dims);
GradientBundle ReadGradient(const fs::path& json_path);

void WriteJson(const fs::path& path, const Json& j);
Json ReadJson(const fs::path& path);

void WriteF64(const fs::path& path, const std::vector<double>& values);
std::vector<double> ReadF64(const fs::path& path);

// P5 for one channel, P6 for three; x in [-1, 1] maps to round((x + 1) / 2 * 255).
void WriteRaster(const fs::path& path, const Vector& x, const std::array<std::size_t, 3>& shape);
// The raster extension for a shape: ".pgm" or ".ppm".
const char* RasterExtension(const std::array<std::size_t, 3>& shape);

Json ToJson(const ReconResult& r);
Json ToJson(const MatchedScore& s);
Json ToJson(const BoundReport& b);
Json ToJson(const ExclusivityState& st, const ExanTable& table);

}  // namespace gradleak::io
