#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "mnm/synthdata/dataset.h"

namespace mnm::synth {

inline constexpr char kManifestFormat[] = "mnm-synth-v1";

// Writes `dir/manifest.json` plus `dir/images/<breast_id>_{cc,mlo}.f32`.
// The directory is created if needed. Throws IoError on write failure.
void SaveDataset(const Dataset& dataset, const std::filesystem::path& dir);

// Inverse of SaveDataset. Throws IoError for unreadable or missing files
// (the message names the file) and FormatError for malformed manifests or
// image blobs whose size disagrees with the declared shape.
Dataset LoadDataset(const std::filesystem::path& dir);

// Image blobs: little-endian float32, row-major.
void WriteImage(const Image& image, const std::filesystem::path& path);
Image ReadImage(const std::filesystem::path& path, std::size_t height,
                std::size_t width);

nlohmann::ordered_json FindingToJson(const Finding& finding);
Finding FindingFromJson(const nlohmann::json& json);

}  // namespace mnm::synth
