#include "mnm/numerics/params.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mnm/common/error.h"

namespace mnm {

void AppendLittleEndian(std::vector<unsigned char>& out, double value) {
  unsigned char bytes[8];
  std::memcpy(bytes, &value, 8);
  if constexpr (std::endian::native == std::endian::big) {
    for (int i = 7; i >= 0; --i) out.push_back(bytes[i]);
  } else {
    out.insert(out.end(), bytes, bytes + 8);
  }
}

double ReadLittleEndian(const unsigned char* bytes) {
  unsigned char ordered[8];
  if constexpr (std::endian::native == std::endian::big) {
    for (int i = 0; i < 8; ++i) ordered[i] = bytes[7 - i];
  } else {
    std::memcpy(ordered, bytes, 8);
  }
  double value;
  std::memcpy(&value, ordered, 8);
  return value;
}

Tensor ParamStore::Add(const std::string& name, Tensor value) {
  for (const auto& [existing, _] : entries_) {
    if (existing == name) throw ConfigError("duplicate parameter name " + name);
  }
  value.set_requires_grad(true);
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

Tensor ParamStore::AddZeros(const std::string& name, const Shape& shape) {
  return Add(name, Tensor::Zeros(shape));
}

Tensor ParamStore::AddConstant(const std::string& name, const Shape& shape,
                                double fill) {
  return Add(name, Tensor::Full(shape, fill));
}

Tensor ParamStore::AddUniform(const std::string& name, const Shape& shape,
                               std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(NumElements(shape));
  for (double& v : values) v = dist(rng);
  return Add(name, Tensor::FromVector(shape, std::move(values)));
}

Tensor ParamStore::AddNormal(const std::string& name, const Shape& shape,
                              double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(NumElements(shape));
  for (double& v : values) v = dist(rng);
  return Add(name, Tensor::FromVector(shape, std::move(values)));
}

const Tensor& ParamStore::Get(const std::string& name) const {
  for (const auto& [existing, tensor] : entries_) {
    if (existing == name) return tensor;
  }
  throw ConfigError("unknown parameter " + name);
}

std::size_t ParamStore::TotalElements() const {
  std::size_t total = 0;
  for (const auto& entry : entries_) total += entry.second.numel();
  return total;
}

void ParamStore::ZeroGrad() {
  for (auto& entry : entries_) entry.second.ZeroGrad();
}

std::vector<unsigned char> ParamStore::SerializeBlob() const {
  std::vector<unsigned char> blob;
  blob.reserve(TotalElements() * 8);
  for (const auto& entry : entries_) {
    for (double v : entry.second.data()) AppendLittleEndian(blob, v);
  }
  return blob;
}

nlohmann::ordered_json ParamStore::Index() const {
  nlohmann::ordered_json index = nlohmann::ordered_json::object();
  std::size_t offset = 0;
  for (const auto& [name, tensor] : entries_) {
    index[name] = {{"offset", offset}, {"shape", tensor.shape()}};
    offset += tensor.numel() * 8;
  }
  return index;
}

void ParamStore::Deserialize(const std::vector<unsigned char>& blob,
                             const nlohmann::ordered_json& index) {
  if (!index.is_object() || index.size() != entries_.size()) {
    throw FormatError("parameter index has " +
                      std::to_string(index.is_object() ? index.size() : 0) +
                      " entries, model expects " +
                      std::to_string(entries_.size()));
  }
  for (auto& [name, tensor] : entries_) {
    if (!index.contains(name)) {
      throw FormatError("parameter index is missing " + name);
    }
    const auto& entry = index.at(name);
    Shape shape;
    std::size_t offset = 0;
    try {
      shape = entry.at("shape").get<Shape>();
      offset = entry.at("offset").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed index entry for " + name + ": " + e.what());
    }
    if (shape != tensor.shape()) {
      throw FormatError("parameter " + name + " has shape " +
                        ShapeToString(shape) + " in index, model expects " +
                        ShapeToString(tensor.shape()));
    }
    if (offset + tensor.numel() * 8 > blob.size()) {
      throw FormatError("parameter blob truncated at " + name);
    }
    auto values = tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = ReadLittleEndian(blob.data() + offset + i * 8);
    }
  }
}

void ParamStore::Save(const std::filesystem::path& blob_path,
                      const std::filesystem::path& index_path) const {
  const auto blob = SerializeBlob();
  std::ofstream out(blob_path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size()));
  std::ofstream idx(index_path);
  idx << Index().dump(2) << "\n";
  if (!out || !idx) throw IoError("failed to write " + blob_path.string());
}

void ParamStore::Load(const std::filesystem::path& blob_path,
                      const std::filesystem::path& index_path) {
  std::ifstream in(blob_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + blob_path.string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  std::ifstream idx(index_path);
  if (!idx) throw IoError("cannot open " + index_path.string());
  nlohmann::ordered_json index;
  try {
    index = nlohmann::ordered_json::parse(idx);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(index_path.string() + ": " + e.what());
  }
  Deserialize(blob, index);
}

std::vector<std::vector<double>> ParamStore::Values() const {
  std::vector<std::vector<double>> values;
  values.reserve(entries_.size());
  for (const auto& entry : entries_) {
    values.emplace_back(entry.second.data().begin(), entry.second.data().end());
  }
  return values;
}

void ParamStore::SetValues(const std::vector<std::vector<double>>& values) {
  if (values.size() != entries_.size()) {
    throw ShapeError("parameter snapshot size mismatch");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto dst = entries_[i].second.mutable_data();
    if (values[i].size() != dst.size()) {
      throw ShapeError("parameter snapshot mismatch at " + entries_[i].first);
    }
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

}  // namespace mnm
