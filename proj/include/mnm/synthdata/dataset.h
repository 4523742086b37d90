#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mnm/geometry/bbox.h"

namespace mnm::synth {

enum class Category { kMalignant, kBenign, kNegative };
enum class Label { kMalignant, kBenign };
enum class View { kCC, kMLO };
// Which view of a malignant finding was rendered with benign-looking texture.
enum class AmbiguousView { kNone, kCC, kMLO };

std::string ToString(Category c);
std::string ToString(Label l);
std::string ToString(AmbiguousView v);
Category ParseCategory(const std::string& s);
Label ParseLabel(const std::string& s);
AmbiguousView ParseAmbiguousView(const std::string& s);

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // row-major

  float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  bool operator==(const Image&) const = default;
};

struct Finding {
  BBox box_cc;
  BBox box_mlo;
  Label label = Label::kBenign;
  double contrast = 0;
  // Texture strength actually rendered in each view; malignant-looking
  // texture is high, benign-looking is low.
  double texture_cc = 0;
  double texture_mlo = 0;
  AmbiguousView ambiguous = AmbiguousView::kNone;
  // Distance from the nipple point divided by breast extent.
  double radial_cc = 0;
  double radial_mlo = 0;

  const BBox& box(View v) const { return v == View::kCC ? box_cc : box_mlo; }
  bool operator==(const Finding&) const = default;
};

struct BreastSample {
  std::string breast_id;
  std::string exam_id;
  char side = 'L';
  Category category = Category::kNegative;
  bool annotated = false;
  Image image_cc;
  Image image_mlo;
  std::vector<Finding> findings;

  const Image& image(View v) const { return v == View::kCC ? image_cc : image_mlo; }
  bool malignant() const { return category == Category::kMalignant; }
  bool operator==(const BreastSample&) const = default;
};

struct DatasetConfig {
  std::size_t malignant = 75;
  std::size_t benign = 30;
  std::size_t negative = 395;
  double annotated_malignant = 0.88;
  double annotated_benign = 0.28;
  double annotated_negative = 0.0;
  std::size_t image_height = 128;
  std::size_t image_width = 128;
  // Lesion Gaussian sigma as a fraction of image width.
  double sigma_min = 0.02;
  double sigma_max = 0.04;
  double contrast_min = 0.5;
  double contrast_max = 0.9;
  double malignant_texture_min = 0.7;
  double malignant_texture_max = 1.0;
  double benign_texture_min = 0.0;
  double benign_texture_max = 0.2;
  // Stripe period of lesion texture in pixels.
  double texture_period = 3.0;
  double ambiguity_fraction = 0.3;
  double benign_distractor_rate = 0.3;
  // Cross-view jitter on the normalized radial coordinate and on the angle
  // (radians).
  double radial_jitter = 0.03;
  double angular_jitter = 0.15;
  double noise_level = 0.04;
  // Normal-tissue structures in every breast (negatives included).
  double tissue_rate = 2.0;
  double tissue_contrast_min = 0.1;
  double tissue_contrast_max = 0.35;
  std::uint64_t seed = 0;

  std::size_t total() const { return malignant + benign + negative; }
  // Throws ConfigError on out-of-range values.
  void Validate() const;
  bool operator==(const DatasetConfig&) const = default;
};

nlohmann::ordered_json ToJson(const DatasetConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
DatasetConfig DatasetConfigFromJson(const nlohmann::json& json);

struct Dataset {
  DatasetConfig config;
  std::vector<BreastSample> breasts;

  bool operator==(const Dataset&) const = default;
};

}  // namespace mnm::synth
