#include "mnm/synthdata/dataset.h"

#include <set>

#include "mnm/common/error.h"

namespace mnm::synth {
namespace {

// Visits every config field with its JSON key, so serialization and parsing
// cannot drift apart.
template <typename Config, typename Fn>
void VisitFields(Config& c, Fn&& fn) {
  fn("malignant", c.malignant);
  fn("benign", c.benign);
  fn("negative", c.negative);
  fn("annotated_malignant", c.annotated_malignant);
  fn("annotated_benign", c.annotated_benign);
  fn("annotated_negative", c.annotated_negative);
  fn("image_height", c.image_height);
  fn("image_width", c.image_width);
  fn("sigma_min", c.sigma_min);
  fn("sigma_max", c.sigma_max);
  fn("contrast_min", c.contrast_min);
  fn("contrast_max", c.contrast_max);
  fn("malignant_texture_min", c.malignant_texture_min);
  fn("malignant_texture_max", c.malignant_texture_max);
  fn("benign_texture_min", c.benign_texture_min);
  fn("benign_texture_max", c.benign_texture_max);
  fn("texture_period", c.texture_period);
  fn("ambiguity_fraction", c.ambiguity_fraction);
  fn("benign_distractor_rate", c.benign_distractor_rate);
  fn("radial_jitter", c.radial_jitter);
  fn("angular_jitter", c.angular_jitter);
  fn("noise_level", c.noise_level);
  fn("tissue_rate", c.tissue_rate);
  fn("tissue_contrast_min", c.tissue_contrast_min);
  fn("tissue_contrast_max", c.tissue_contrast_max);
  fn("seed", c.seed);
}

}  // namespace

std::string ToString(Category c) {
  switch (c) {
    case Category::kMalignant: return "malignant";
    case Category::kBenign: return "benign";
    case Category::kNegative: return "negative";
  }
  return "?";
}

std::string ToString(Label l) {
  return l == Label::kMalignant ? "malignant" : "benign";
}

std::string ToString(AmbiguousView v) {
  switch (v) {
    case AmbiguousView::kNone: return "none";
    case AmbiguousView::kCC: return "cc";
    case AmbiguousView::kMLO: return "mlo";
  }
  return "?";
}

Category ParseCategory(const std::string& s) {
  if (s == "malignant") return Category::kMalignant;
  if (s == "benign") return Category::kBenign;
  if (s == "negative") return Category::kNegative;
  throw FormatError("unknown category '" + s + "'");
}

Label ParseLabel(const std::string& s) {
  if (s == "malignant") return Label::kMalignant;
  if (s == "benign") return Label::kBenign;
  throw FormatError("unknown finding label '" + s + "'");
}

AmbiguousView ParseAmbiguousView(const std::string& s) {
  if (s == "none") return AmbiguousView::kNone;
  if (s == "cc") return AmbiguousView::kCC;
  if (s == "mlo") return AmbiguousView::kMLO;
  throw FormatError("unknown ambiguous view '" + s + "'");
}

nlohmann::ordered_json ToJson(const DatasetConfig& config) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  VisitFields(config, [&](const char* key, const auto& value) { out[key] = value; });
  return out;
}

DatasetConfig DatasetConfigFromJson(const nlohmann::json& json) {
  if (!json.is_object()) throw ConfigError("dataset config must be a JSON object");
  DatasetConfig config;
  std::set<std::string> known;
  VisitFields(config, [&](const char* key, auto& value) {
    known.insert(key);
    auto it = json.find(key);
    if (it == json.end()) return;
    using T = std::decay_t<decltype(value)>;
    if (!it->is_number()) {
      throw ConfigError(std::string("dataset config: '") + key + "' must be a number");
    }
    if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer() ||
          (!it->is_number_unsigned() && it->template get<long long>() < 0)) {
        throw ConfigError(std::string("dataset config: '") + key +
                          "' must be a nonnegative integer");
      }
    }
    value = it->template get<T>();
  });
  for (const auto& [key, value] : json.items()) {
    if (!known.contains(key)) throw ConfigError("dataset config: unknown key '" + key + "'");
  }
  return config;
}

}  // namespace mnm::synth
