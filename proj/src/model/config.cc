#include "mnm/model/config.h"

#include <set>

#include "mnm/common/error.h"

namespace mnm::model {

std::string ToString(MilScheme scheme) {
  switch (scheme) {
    case MilScheme::kNoisyOr: return "noisy_or";
    case MilScheme::kMax: return "max";
    case MilScheme::kMean: return "mean";
    case MilScheme::kGap: return "gap";
  }
  return "?";
}

MilScheme ParseMilScheme(const std::string& name) {
  if (name == "noisy_or") return MilScheme::kNoisyOr;
  if (name == "max") return MilScheme::kMax;
  if (name == "mean") return MilScheme::kMean;
  if (name == "gap") return MilScheme::kGap;
  throw ConfigError("unknown mil_scheme '" + name + "' (noisy_or, max, mean, gap)");
}

void ModelConfig::ValidateShapes() const {
  if (num_proposals == 0) throw ConfigError("num_proposals must be >= 1");
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("dim " + std::to_string(dim) + " must be a positive multiple of heads " +
                      std::to_string(heads));
  }
  if (dim % 4 != 0) throw ConfigError("dim must be divisible by 4 (backbone widths)");
  if (stages == 0) throw ConfigError("stages must be >= 1");
  if (roi_size == 0 || dynamic_dim == 0 || ffn_multiplier == 0) {
    throw ConfigError("roi_size, dynamic_dim and ffn_multiplier must be positive");
  }
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
}

void ModelConfig::Validate() const {
  ValidateShapes();
  if (stages != kStages) {
    throw ConfigError("stages is fixed at " + std::to_string(kStages) + ", got " +
                      std::to_string(stages));
  }
}

nlohmann::ordered_json ToJson(const ModelConfig& c) {
  return {{"num_proposals", c.num_proposals},
          {"dim", c.dim},
          {"heads", c.heads},
          {"stages", c.stages},
          {"roi_size", c.roi_size},
          {"dynamic_dim", c.dynamic_dim},
          {"ffn_multiplier", c.ffn_multiplier},
          {"dropout", c.dropout},
          {"mil_scheme", ToString(c.mil_scheme)},
          {"init_seed", c.init_seed}};
}

ModelConfig ModelConfigFromJson(const nlohmann::json& json) {
  if (!json.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  static const std::set<std::string> kKeys = {
      "num_proposals", "dim", "heads", "stages", "roi_size", "dynamic_dim",
      "ffn_multiplier", "dropout", "mil_scheme", "init_seed"};
  for (const auto& [key, value] : json.items()) {
    if (!kKeys.contains(key)) throw ConfigError("model config: unknown key '" + key + "'");
  }
  auto size = [&](const char* key, std::size_t& out) {
    if (!json.contains(key)) return;
    const auto& v = json.at(key);
    if (!v.is_number_unsigned()) {
      throw ConfigError(std::string("model config: '") + key + "' must be a nonnegative integer");
    }
    out = v.get<std::size_t>();
  };
  size("num_proposals", c.num_proposals);
  size("dim", c.dim);
  size("heads", c.heads);
  size("stages", c.stages);
  size("roi_size", c.roi_size);
  size("dynamic_dim", c.dynamic_dim);
  size("ffn_multiplier", c.ffn_multiplier);
  if (json.contains("init_seed")) {
    if (!json["init_seed"].is_number_unsigned()) {
      throw ConfigError("model config: 'init_seed' must be a nonnegative integer");
    }
    c.init_seed = json["init_seed"].get<std::uint64_t>();
  }
  if (json.contains("dropout")) {
    if (!json["dropout"].is_number()) throw ConfigError("model config: 'dropout' must be a number");
    c.dropout = json["dropout"].get<double>();
  }
  if (json.contains("mil_scheme")) {
    if (!json["mil_scheme"].is_string()) throw ConfigError("model config: 'mil_scheme' must be a string");
    c.mil_scheme = ParseMilScheme(json["mil_scheme"].get<std::string>());
  }
  c.Validate();
  return c;
}

}  // namespace mnm::model
