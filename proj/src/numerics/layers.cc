#include "mnm/numerics/layers.h"

#include <cmath>
#include <vector>

#include "mnm/common/error.h"
#include "mnm/numerics/ops.h"

namespace mnm {

Dense::Dense(ParamStore& store, const std::string& prefix, std::size_t in,
             std::size_t out, std::mt19937_64& rng)
    : weight_(store.AddUniform(prefix + ".weight", {in, out}, in, rng)),
      bias_(store.AddUniform(prefix + ".bias", {out}, in, rng)) {}

Tensor Dense::operator()(const Tensor& x) const {
  return ops::Linear(x, weight_, bias_);
}

Norm::Norm(ParamStore& store, const std::string& prefix, std::size_t width,
           double eps)
    : gain_(store.AddConstant(prefix + ".gain", {width}, 1.0)),
      bias_(store.AddZeros(prefix + ".bias", {width})),
      eps_(eps) {}

Tensor Norm::operator()(const Tensor& x) const {
  return ops::LayerNorm(x, gain_, bias_, eps_);
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store,
                                       const std::string& prefix,
                                       std::size_t dim, std::size_t heads,
                                       std::mt19937_64& rng)
    : dim_(dim), heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention dim " + std::to_string(dim) +
                      " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  q_ = Dense(store, prefix + ".q", dim, dim, rng);
  k_ = Dense(store, prefix + ".k", dim, dim, rng);
  v_ = Dense(store, prefix + ".v", dim, dim, rng);
  out_ = Dense(store, prefix + ".out", dim, dim, rng);
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& key,
                                      const Tensor& value) const {
  if (query.rank() != 2 || key.rank() != 2 || value.rank() != 2 ||
      query.dim(1) != dim_ || key.dim(1) != dim_ || value.dim(1) != dim_ ||
      key.dim(0) != value.dim(0)) {
    throw ShapeError("attention: query " + ShapeToString(query.shape()) +
                     ", key " + ShapeToString(key.shape()) + ", value " +
                     ShapeToString(value.shape()) + " for dim " +
                     std::to_string(dim_));
  }
  const Tensor q = q_(query);
  const Tensor k = k_(key);
  const Tensor v = v_(value);
  const std::size_t head_dim = dim_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  std::vector<Tensor> per_head;
  per_head.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t start = h * head_dim;
    Tensor qh = ops::SliceColumns(q, start, head_dim);
    Tensor kh = ops::SliceColumns(k, start, head_dim);
    Tensor vh = ops::SliceColumns(v, start, head_dim);
    Tensor weights =
        ops::Softmax(ops::Scale(ops::MatMul(qh, ops::Transpose(kh)), scale));
    per_head.push_back(ops::MatMul(weights, vh));
  }
  Tensor merged = heads_ == 1 ? per_head[0] : ops::ConcatColumns(per_head);
  return out_(merged);
}

}  // namespace mnm
