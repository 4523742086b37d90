#include "mnm/synthdata/io.h"

#include <bit>
#include <cstring>
#include <fstream>

#include "mnm/common/error.h"

namespace mnm::synth {
namespace fs = std::filesystem;
namespace {

static_assert(sizeof(float) == 4);

nlohmann::ordered_json BoxToJson(const BBox& b) {
  return nlohmann::ordered_json::array({b.x1, b.y1, b.x2, b.y2});
}

BBox BoxFromJson(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) {
    throw FormatError("box must be an array of four numbers");
  }
  try {
    return BBox::Make(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                      j[3].get<double>());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("invalid box: ") + e.what());
  }
}

template <typename T>
T Required(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(std::string("manifest: missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("manifest: field '") + key + "' has the wrong type");
  }
}

std::string ImageName(const BreastSample& b, View v) {
  return "images/" + b.breast_id + (v == View::kCC ? "_cc" : "_mlo") + ".f32";
}

}  // namespace

nlohmann::ordered_json FindingToJson(const Finding& f) {
  nlohmann::ordered_json j;
  j["box_cc"] = BoxToJson(f.box_cc);
  j["box_mlo"] = BoxToJson(f.box_mlo);
  j["label"] = ToString(f.label);
  j["contrast"] = f.contrast;
  j["texture_cc"] = f.texture_cc;
  j["texture_mlo"] = f.texture_mlo;
  j["ambiguous"] = ToString(f.ambiguous);
  j["radial_cc"] = f.radial_cc;
  j["radial_mlo"] = f.radial_mlo;
  return j;
}

Finding FindingFromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("finding must be an object");
  Finding f;
  f.box_cc = BoxFromJson(Required<nlohmann::json>(j, "box_cc"));
  f.box_mlo = BoxFromJson(Required<nlohmann::json>(j, "box_mlo"));
  f.label = ParseLabel(Required<std::string>(j, "label"));
  // Rendering attributes are optional in hand-written manifests.
  f.contrast = j.value("contrast", 0.0);
  f.texture_cc = j.value("texture_cc", 0.0);
  f.texture_mlo = j.value("texture_mlo", 0.0);
  f.ambiguous = ParseAmbiguousView(j.value("ambiguous", std::string("none")));
  f.radial_cc = j.value("radial_cc", 0.0);
  f.radial_mlo = j.value("radial_mlo", 0.0);
  return f;
}

void WriteImage(const Image& image, const fs::path& path) {
  std::string bytes(image.pixels.size() * 4, '\0');
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(image.pixels[i]);
    for (int b = 0; b < 4; ++b) {
      bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Image ReadImage(const fs::path& path, std::size_t height, std::size_t width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing or unreadable image file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t expected = height * width * 4;
  if (bytes.size() != expected) {
    throw FormatError("image file " + path.string() + " has " +
                      std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(expected));
  }
  Image image;
  image.height = height;
  image.width = width;
  image.pixels.resize(height * width);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b]))
              << (8 * b);
    }
    image.pixels[i] = std::bit_cast<float>(bits);
  }
  return image;
}

void SaveDataset(const Dataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());

  nlohmann::ordered_json manifest;
  manifest["format"] = kManifestFormat;
  manifest["config"] = ToJson(dataset.config);
  auto& breasts = manifest["breasts"] = nlohmann::ordered_json::array();
  for (const BreastSample& b : dataset.breasts) {
    nlohmann::ordered_json entry;
    entry["breast_id"] = b.breast_id;
    entry["exam_id"] = b.exam_id;
    entry["side"] = std::string(1, b.side);
    entry["category"] = ToString(b.category);
    entry["annotated"] = b.annotated;
    for (View v : {View::kCC, View::kMLO}) {
      const Image& img = b.image(v);
      const std::string name = ImageName(b, v);
      WriteImage(img, dir / name);
      entry["views"][v == View::kCC ? "cc" : "mlo"] = {
          {"path", name}, {"shape", {img.height, img.width}}};
    }
    entry["findings"] = nlohmann::ordered_json::array();
    for (const Finding& f : b.findings) entry["findings"].push_back(FindingToJson(f));
    breasts.push_back(std::move(entry));
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(1) << '\n';
  if (!out) throw IoError("write failed: " + (dir / "manifest.json").string());
}

Dataset LoadDataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("missing or unreadable manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.is_object()) throw FormatError("manifest must be a JSON object");
  if (manifest.value("format", std::string()) != kManifestFormat) {
    throw FormatError("manifest format must be '" + std::string(kManifestFormat) + "'");
  }

  Dataset dataset;
  try {
    dataset.config = DatasetConfigFromJson(Required<nlohmann::json>(manifest, "config"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("manifest config: ") + e.what());
  }
  const auto breasts = Required<nlohmann::json>(manifest, "breasts");
  if (!breasts.is_array()) throw FormatError("manifest: 'breasts' must be an array");
  for (const auto& entry : breasts) {
    BreastSample b;
    b.breast_id = Required<std::string>(entry, "breast_id");
    b.exam_id = entry.value("exam_id", b.breast_id);
    const auto side = entry.value("side", std::string("L"));
    if (side != "L" && side != "R") throw FormatError("side must be 'L' or 'R'");
    b.side = side[0];
    b.category = ParseCategory(Required<std::string>(entry, "category"));
    b.annotated = Required<bool>(entry, "annotated");
    const auto views = Required<nlohmann::json>(entry, "views");
    for (View v : {View::kCC, View::kMLO}) {
      const auto view = Required<nlohmann::json>(views, v == View::kCC ? "cc" : "mlo");
      const auto shape = Required<std::vector<std::size_t>>(view, "shape");
      if (shape.size() != 2 || shape[0] == 0 || shape[1] == 0) {
        throw FormatError("image shape must be [height, width]");
      }
      Image img = ReadImage(dir / Required<std::string>(view, "path"), shape[0], shape[1]);
      (v == View::kCC ? b.image_cc : b.image_mlo) = std::move(img);
    }
    for (const auto& f : entry.value("findings", nlohmann::json::array())) {
      b.findings.push_back(FindingFromJson(f));
    }
    if (b.category == Category::kNegative && !b.findings.empty()) {
      throw FormatError("negative breast " + b.breast_id + " lists findings");
    }
    dataset.breasts.push_back(std::move(b));
  }
  return dataset;
}

}  // namespace mnm::synth
