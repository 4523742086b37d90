#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <json.hpp>

namespace mnm::model {

enum class MilScheme { kNoisyOr, kMax, kMean, kGap };

std::string ToString(MilScheme scheme);
// Throws ConfigError for unknown names.
MilScheme ParseMilScheme(const std::string& name);

// Backbone downsampling factor: three stride-2 blocks.
inline constexpr std::size_t kFeatureStride = 8;
inline constexpr std::size_t kStages = 6;

struct ModelConfig {
  std::size_t num_proposals = 40;
  std::size_t dim = 64;
  std::size_t heads = 8;
  std::size_t stages = kStages;
  std::size_t roi_size = 7;
  // Width of the dynamic bottleneck between the two proposal-generated layers.
  std::size_t dynamic_dim = 16;
  std::size_t ffn_multiplier = 4;
  double dropout = 0.0;
  MilScheme mil_scheme = MilScheme::kNoisyOr;
  std::uint64_t init_seed = 0;

  // Everything the network can be built with. Tests use this directly to
  // get fewer stages.
  void ValidateShapes() const;
  // ValidateShapes plus the fixed stage count.
  void Validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::ordered_json ToJson(const ModelConfig& config);
// Missing keys keep defaults; unknown keys and invalid values throw
// ConfigError.
ModelConfig ModelConfigFromJson(const nlohmann::json& json);

}  // namespace mnm::model
