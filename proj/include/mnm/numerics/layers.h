#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "mnm/numerics/params.h"
#include "mnm/numerics/tensor.h"

namespace mnm {

// Affine map y = xW + b with parameters registered as <prefix>.weight and
// <prefix>.bias.
class Dense {
 public:
  Dense() = default;
  Dense(ParamStore& store, const std::string& prefix, std::size_t in,
        std::size_t out, std::mt19937_64& rng);

  Tensor operator()(const Tensor& x) const;

  std::size_t in_features() const { return weight_.dim(0); }
  std::size_t out_features() const { return weight_.dim(1); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

class Norm {
 public:
  Norm() = default;
  Norm(ParamStore& store, const std::string& prefix, std::size_t width,
       double eps = 1e-5);

  Tensor operator()(const Tensor& x) const;

 private:
  Tensor gain_;
  Tensor bias_;
  double eps_ = 1e-5;
};

// Scaled dot-product attention over `heads` equal slices of the model
// dimension, followed by an output projection. Scores are scaled by
// 1/sqrt(dim / heads).
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& prefix,
                     std::size_t dim, std::size_t heads, std::mt19937_64& rng);

  // query: [n, D]; key, value: [m, D] -> [n, D]
  Tensor operator()(const Tensor& query, const Tensor& key,
                    const Tensor& value) const;

  std::size_t dim() const { return dim_; }
  std::size_t heads() const { return heads_; }
  Dense& query_proj() { return q_; }
  Dense& key_proj() { return k_; }
  Dense& value_proj() { return v_; }
  Dense& output_proj() { return out_; }

 private:
  std::size_t dim_ = 0;
  std::size_t heads_ = 1;
  Dense q_, k_, v_, out_;
};

}  // namespace mnm
