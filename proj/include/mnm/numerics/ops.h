#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "mnm/numerics/tensor.h"

// Differentiable primitives. Binary elementwise ops accept equal shapes or a
// single-element operand broadcast against the other; nothing else.
namespace mnm::ops {

Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
Tensor Scale(const Tensor& a, double factor);
Tensor AddScalar(const Tensor& a, double offset);

Tensor Sigmoid(const Tensor& x);
Tensor Softplus(const Tensor& x);
Tensor Relu(const Tensor& x);

// Stable scalar helpers shared with loss code.
double SigmoidValue(double x);
double SoftplusValue(double x);

// [M,K] x [K,N] -> [M,N]
Tensor MatMul(const Tensor& a, const Tensor& b);
// [B,M,K] x [B,K,N] -> [B,M,N]
Tensor BatchMatMul(const Tensor& a, const Tensor& b);
// x: [..., Din] viewed as rows; W: [Din, Dout]; b: [Dout].
Tensor Linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor Transpose(const Tensor& a);  // rank-2 only

Tensor Reshape(const Tensor& a, const Shape& shape);
// Columns [start, start+count) of a rank-2 tensor.
Tensor SliceColumns(const Tensor& a, std::size_t start, std::size_t count);
Tensor ConcatColumns(const std::vector<Tensor>& parts);

// Softmax along the last axis.
Tensor Softmax(const Tensor& x);
// Normalizes each row of the last axis; gain and bias have the last extent.
Tensor LayerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps = 1e-5);
// Inverted dropout. rate == 0 or a null rng returns x unchanged.
Tensor Dropout(const Tensor& x, double rate, std::mt19937_64* rng);

Tensor Sum(const Tensor& x);
Tensor Mean(const Tensor& x);
// [N, D] -> [D]
Tensor MeanRows(const Tensor& x);
Tensor Max(const Tensor& x);

// x: [H, W, Cin], weight: [k, k, Cin, Cout], bias: [Cout].
Tensor Conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding);

}  // namespace mnm::ops
