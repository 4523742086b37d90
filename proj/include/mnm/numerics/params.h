#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mnm/numerics/tensor.h"

namespace mnm {

// Named, ordered collection of trainable leaf tensors. Order of insertion is
// the serialization order and the optimizer's iteration order.
class ParamStore {
 public:
  Tensor Add(const std::string& name, Tensor value);
  Tensor AddZeros(const std::string& name, const Shape& shape);
  Tensor AddConstant(const std::string& name, const Shape& shape, double fill);
  // Uniform(-bound, bound) with bound = 1/sqrt(fan_in).
  Tensor AddUniform(const std::string& name, const Shape& shape,
                     std::size_t fan_in, std::mt19937_64& rng);
  Tensor AddNormal(const std::string& name, const Shape& shape, double stddev,
                    std::mt19937_64& rng);

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Tensor& at(std::size_t i) { return entries_[i].second; }
  const Tensor& at(std::size_t i) const { return entries_[i].second; }
  const Tensor& Get(const std::string& name) const;
  std::size_t TotalElements() const;

  void ZeroGrad();

  // Flat little-endian float64 blob plus a JSON index
  // {"name": {"offset": <byte offset>, "shape": [...]}, ...}.
  std::vector<unsigned char> SerializeBlob() const;
  nlohmann::ordered_json Index() const;
  // Overwrites values in place; the index must match names and shapes exactly.
  void Deserialize(const std::vector<unsigned char>& blob,
                   const nlohmann::ordered_json& index);

  void Save(const std::filesystem::path& blob_path,
            const std::filesystem::path& index_path) const;
  void Load(const std::filesystem::path& blob_path,
            const std::filesystem::path& index_path);

  // Deep copy of all values (snapshot used for read-only inference).
  std::vector<std::vector<double>> Values() const;
  void SetValues(const std::vector<std::vector<double>>& values);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Little-endian float64 encoding helpers shared with checkpoint code.
void AppendLittleEndian(std::vector<unsigned char>& out, double value);
double ReadLittleEndian(const unsigned char* bytes);

}  // namespace mnm
