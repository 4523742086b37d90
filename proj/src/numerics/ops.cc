#include "mnm/numerics/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "mnm/common/error.h"

namespace mnm::ops {
namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

enum class Broadcast { kSame, kLeftScalar, kRightScalar };

Broadcast ResolveBroadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.numel() == 1) return Broadcast::kRightScalar;
  if (a.numel() == 1) return Broadcast::kLeftScalar;
  throw ShapeError(std::string(op) + ": cannot broadcast " +
                   ShapeToString(a.shape()) + " with " +
                   ShapeToString(b.shape()));
}

Node& Parent(Node& self, std::size_t i) { return *self.parents[i]; }

// Shared driver for the three arithmetic binaries. `fwd(x, y)` gives the
// value, `dx(x, y)` and `dy(x, y)` the local partials.
template <typename F, typename DX, typename DY>
Tensor Binary(const Tensor& a, const Tensor& b, const char* op, F fwd, DX dx,
              DY dy) {
  const Broadcast mode = ResolveBroadcast(a, b, op);
  const Tensor& big = mode == Broadcast::kLeftScalar ? b : a;
  const std::size_t n = big.numel();
  std::vector<double> out(n);
  auto ai = [&](std::size_t i) { return mode == Broadcast::kLeftScalar ? a[0] : a[i]; };
  auto bi = [&](std::size_t i) { return mode == Broadcast::kRightScalar ? b[0] : b[i]; };
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ai(i), bi(i));
  return MakeResult(
      big.shape(), std::move(out), {a, b},
      [mode, n, dx, dy](Node& self) {
        Node& pa = Parent(self, 0);
        Node& pb = Parent(self, 1);
        auto av = [&](std::size_t i) {
          return mode == Broadcast::kLeftScalar ? pa.value[0] : pa.value[i];
        };
        auto bv = [&](std::size_t i) {
          return mode == Broadcast::kRightScalar ? pb.value[0] : pb.value[i];
        };
        if (pa.requires_grad) {
          auto& g = pa.EnsureGrad();
          for (std::size_t i = 0; i < n; ++i) {
            g[mode == Broadcast::kLeftScalar ? 0 : i] +=
                self.grad[i] * dx(av(i), bv(i));
          }
        }
        if (pb.requires_grad) {
          auto& g = pb.EnsureGrad();
          for (std::size_t i = 0; i < n; ++i) {
            g[mode == Broadcast::kRightScalar ? 0 : i] +=
                self.grad[i] * dy(av(i), bv(i));
          }
        }
      },
      op);
}

template <typename F, typename DF>
Tensor Unary(const Tensor& x, const char* op, F fwd, DF deriv) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return MakeResult(
      x.shape(), std::move(out), {x},
      [deriv](Node& self) {
        Node& px = Parent(self, 0);
        auto& g = px.EnsureGrad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += self.grad[i] * deriv(px.value[i], self.value[i]);
        }
      },
      op);
}

}  // namespace

double SigmoidValue(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double SoftplusValue(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Tensor Add(const Tensor& a, const Tensor& b) {
  return Binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor Sub(const Tensor& a, const Tensor& b) {
  return Binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor Mul(const Tensor& a, const Tensor& b) {
  return Binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor Scale(const Tensor& a, double factor) {
  return Unary(
      a, "scale", [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor AddScalar(const Tensor& a, double offset) {
  return Unary(
      a, "add_scalar", [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Tensor Sigmoid(const Tensor& x) {
  return Unary(
      x, "sigmoid", SigmoidValue,
      [](double, double y) { return y * (1.0 - y); });
}

Tensor Softplus(const Tensor& x) {
  return Unary(
      x, "softplus", SoftplusValue,
      [](double in, double) { return SigmoidValue(in); });
}

Tensor Relu(const Tensor& x) {
  return Unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; },
      [](double in, double) { return in > 0 ? 1.0 : 0.0; });
}

Tensor MatMul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + ShapeToString(a.shape()) +
                     " and " + ShapeToString(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MatMap(out.data(), m, n).noalias() =
      ConstMatMap(a.data().data(), m, k) * ConstMatMap(b.data().data(), k, n);
  return MakeResult(
      {a.dim(0), b.dim(1)}, std::move(out), {a, b},
      [m, k, n](Node& self) {
        Node& pa = Parent(self, 0);
        Node& pb = Parent(self, 1);
        ConstMatMap g(self.grad.data(), m, n);
        if (pa.requires_grad) {
          MatMap(pa.EnsureGrad().data(), m, k).noalias() +=
              g * ConstMatMap(pb.value.data(), k, n).transpose();
        }
        if (pb.requires_grad) {
          MatMap(pb.EnsureGrad().data(), k, n).noalias() +=
              ConstMatMap(pa.value.data(), m, k).transpose() * g;
        }
      },
      "matmul");
}

Tensor BatchMatMul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(1)) {
    throw ShapeError("batch_matmul: incompatible shapes " +
                     ShapeToString(a.shape()) + " and " +
                     ShapeToString(b.shape()));
  }
  const std::size_t batch = a.dim(0);
  const auto m = static_cast<Eigen::Index>(a.dim(1));
  const auto k = static_cast<Eigen::Index>(a.dim(2));
  const auto n = static_cast<Eigen::Index>(b.dim(2));
  const std::size_t sa = m * k, sb = k * n, so = m * n;
  std::vector<double> out(batch * so);
  for (std::size_t i = 0; i < batch; ++i) {
    MatMap(out.data() + i * so, m, n).noalias() =
        ConstMatMap(a.data().data() + i * sa, m, k) *
        ConstMatMap(b.data().data() + i * sb, k, n);
  }
  return MakeResult(
      {batch, a.dim(1), b.dim(2)}, std::move(out), {a, b},
      [batch, m, k, n, sa, sb, so](Node& self) {
        Node& pa = Parent(self, 0);
        Node& pb = Parent(self, 1);
        for (std::size_t i = 0; i < batch; ++i) {
          ConstMatMap g(self.grad.data() + i * so, m, n);
          if (pa.requires_grad) {
            MatMap(pa.EnsureGrad().data() + i * sa, m, k).noalias() +=
                g * ConstMatMap(pb.value.data() + i * sb, k, n).transpose();
          }
          if (pb.requires_grad) {
            MatMap(pb.EnsureGrad().data() + i * sb, k, n).noalias() +=
                ConstMatMap(pa.value.data() + i * sa, m, k).transpose() * g;
          }
        }
      },
      "batch_matmul");
}

Tensor Linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() < 1 || weight.rank() != 2 || bias.rank() != 1 ||
      x.shape().back() != weight.dim(0) || bias.dim(0) != weight.dim(1)) {
    throw ShapeError("linear: x " + ShapeToString(x.shape()) + ", W " +
                     ShapeToString(weight.shape()) + ", b " +
                     ShapeToString(bias.shape()));
  }
  const auto din = static_cast<Eigen::Index>(weight.dim(0));
  const auto dout = static_cast<Eigen::Index>(weight.dim(1));
  const auto rows = static_cast<Eigen::Index>(x.numel() / din);
  Shape out_shape = x.shape();
  out_shape.back() = weight.dim(1);
  std::vector<double> out(static_cast<std::size_t>(rows * dout));
  MatMap y(out.data(), rows, dout);
  y.noalias() = ConstMatMap(x.data().data(), rows, din) *
                ConstMatMap(weight.data().data(), din, dout);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), dout);
  return MakeResult(
      std::move(out_shape), std::move(out), {x, weight, bias},
      [rows, din, dout](Node& self) {
        Node& px = Parent(self, 0);
        Node& pw = Parent(self, 1);
        Node& pb = Parent(self, 2);
        ConstMatMap g(self.grad.data(), rows, dout);
        if (px.requires_grad) {
          MatMap(px.EnsureGrad().data(), rows, din).noalias() +=
              g * ConstMatMap(pw.value.data(), din, dout).transpose();
        }
        if (pw.requires_grad) {
          MatMap(pw.EnsureGrad().data(), din, dout).noalias() +=
              ConstMatMap(px.value.data(), rows, din).transpose() * g;
        }
        if (pb.requires_grad) {
          Eigen::Map<Eigen::RowVectorXd>(pb.EnsureGrad().data(), dout) +=
              g.colwise().sum();
        }
      },
      "linear");
}

Tensor Transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw ShapeError("transpose expects rank 2, got " + ShapeToString(a.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto n = static_cast<Eigen::Index>(a.dim(1));
  std::vector<double> out(a.numel());
  MatMap(out.data(), n, m) = ConstMatMap(a.data().data(), m, n).transpose();
  return MakeResult(
      {a.dim(1), a.dim(0)}, std::move(out), {a},
      [m, n](Node& self) {
        MatMap(Parent(self, 0).EnsureGrad().data(), m, n) +=
            ConstMatMap(self.grad.data(), n, m).transpose();
      },
      "transpose");
}

Tensor Reshape(const Tensor& a, const Shape& shape) {
  if (NumElements(shape) != a.numel()) {
    throw ShapeError("reshape " + ShapeToString(a.shape()) + " to " +
                     ShapeToString(shape));
  }
  return MakeResult(
      shape, std::vector<double>(a.data().begin(), a.data().end()), {a},
      [](Node& self) {
        auto& g = Parent(self, 0).EnsureGrad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      },
      "reshape");
}

Tensor SliceColumns(const Tensor& a, std::size_t start, std::size_t count) {
  if (a.rank() != 2 || count == 0 || start + count > a.dim(1)) {
    throw ShapeError("slice_columns: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " +
                     ShapeToString(a.shape()));
  }
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + r * cols + start, count,
                out.data() + r * count);
  }
  return MakeResult(
      {rows, count}, std::move(out), {a},
      [rows, cols, start, count](Node& self) {
        auto& g = Parent(self, 0).EnsureGrad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < count; ++c) {
            g[r * cols + start + c] += self.grad[r * count + c];
          }
        }
      },
      "slice_columns");
}

Tensor ConcatColumns(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_columns: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) {
      throw ShapeError("concat_columns: part " + ShapeToString(p.shape()) +
                       " does not have " + std::to_string(rows) + " rows");
    }
    offsets.push_back(total);
    total += p.dim(1);
  }
  std::vector<double> out(rows * total);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::size_t w = parts[i].dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(parts[i].data().data() + r * w, w,
                  out.data() + r * total + offsets[i]);
    }
  }
  return MakeResult(
      {rows, total}, std::move(out), parts,
      [rows, total, offsets](Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
          Node& p = Parent(self, i);
          if (!p.requires_grad) continue;
          const std::size_t w = p.shape[1];
          auto& g = p.EnsureGrad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
              g[r * w + c] += self.grad[r * total + offsets[i] + c];
            }
          }
        }
      },
      "concat_columns");
}

Tensor Softmax(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax needs rank >= 1");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * width;
    double* o = out.data() + r * width;
    const double peak = *std::max_element(in, in + width);
    double total = 0;
    for (std::size_t c = 0; c < width; ++c) total += (o[c] = std::exp(in[c] - peak));
    for (std::size_t c = 0; c < width; ++c) o[c] /= total;
  }
  return MakeResult(
      x.shape(), std::move(out), {x},
      [rows, width](Node& self) {
        auto& g = Parent(self, 0).EnsureGrad();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = self.value.data() + r * width;
          const double* gy = self.grad.data() + r * width;
          double dot = 0;
          for (std::size_t c = 0; c < width; ++c) dot += y[c] * gy[c];
          for (std::size_t c = 0; c < width; ++c) {
            g[r * width + c] += y[c] * (gy[c] - dot);
          }
        }
      },
      "softmax");
}

Tensor LayerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps) {
  if (eps <= 0) throw ShapeError("layer_norm: eps must be positive");
  const std::size_t width = x.shape().back();
  if (gain.numel() != width || bias.numel() != width) {
    throw ShapeError("layer_norm: x " + ShapeToString(x.shape()) + ", gain " +
                     ShapeToString(gain.shape()) + ", bias " +
                     ShapeToString(bias.shape()));
  }
  const std::size_t rows = x.numel() / width;
  std::vector<double> out(x.numel());
  // Normalized activations and inverse std per row, reused by backward.
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * width;
    double mean = 0;
    for (std::size_t c = 0; c < width; ++c) mean += in[c];
    mean /= static_cast<double>(width);
    double var = 0;
    for (std::size_t c = 0; c < width; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < width; ++c) {
      const double h = (in[c] - mean) * inv_std[r];
      xhat[r * width + c] = h;
      out[r * width + c] = h * gain[c] + bias[c];
    }
  }
  return MakeResult(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, width, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node& self) {
        Node& px = Parent(self, 0);
        Node& pg = Parent(self, 1);
        Node& pb = Parent(self, 2);
        const double w = static_cast<double>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gy = self.grad.data() + r * width;
          const double* h = xhat.data() + r * width;
          if (pg.requires_grad) {
            auto& gg = pg.EnsureGrad();
            for (std::size_t c = 0; c < width; ++c) gg[c] += gy[c] * h[c];
          }
          if (pb.requires_grad) {
            auto& gb = pb.EnsureGrad();
            for (std::size_t c = 0; c < width; ++c) gb[c] += gy[c];
          }
          if (px.requires_grad) {
            double sum_d = 0, sum_dh = 0;
            for (std::size_t c = 0; c < width; ++c) {
              const double d = gy[c] * pg.value[c];
              sum_d += d;
              sum_dh += d * h[c];
            }
            auto& gx = px.EnsureGrad();
            for (std::size_t c = 0; c < width; ++c) {
              const double d = gy[c] * pg.value[c];
              gx[r * width + c] +=
                  inv_std[r] * (d - sum_d / w - h[c] * sum_dh / w);
            }
          }
        }
      },
      "layer_norm");
}

Tensor Dropout(const Tensor& x, double rate, std::mt19937_64* rng) {
  if (rate <= 0 || rng == nullptr) return x;
  if (rate >= 1) throw ShapeError("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = keep(*rng) ? scale : 0.0;
    out[i] = x[i] * mask[i];
  }
  return MakeResult(
      x.shape(), std::move(out), {x},
      [mask = std::move(mask)](Node& self) {
        auto& g = Parent(self, 0).EnsureGrad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
      },
      "dropout");
}

Tensor Sum(const Tensor& x) {
  double total = 0;
  for (double v : x.data()) total += v;
  return MakeResult(
      {}, {total}, {x},
      [](Node& self) {
        auto& g = Parent(self, 0).EnsureGrad();
        for (double& v : g) v += self.grad[0];
      },
      "sum");
}

Tensor Mean(const Tensor& x) {
  return Scale(Sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor MeanRows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("mean_rows expects rank 2");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += x[r * cols + c];
  }
  for (double& v : out) v /= static_cast<double>(rows);
  return MakeResult(
      {cols}, std::move(out), {x},
      [rows, cols](Node& self) {
        auto& g = Parent(self, 0).EnsureGrad();
        const double inv = 1.0 / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            g[r * cols + c] += self.grad[c] * inv;
          }
        }
      },
      "mean_rows");
}

Tensor Max(const Tensor& x) {
  const auto it = std::max_element(x.data().begin(), x.data().end());
  const std::size_t arg = static_cast<std::size_t>(it - x.data().begin());
  return MakeResult(
      {}, {*it}, {x},
      [arg](Node& self) { Parent(self, 0).EnsureGrad()[arg] += self.grad[0]; },
      "max");
}

Tensor Conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(0) != weight.dim(1) ||
      weight.dim(2) != x.dim(2) || bias.rank() != 1 ||
      bias.dim(0) != weight.dim(3) || stride == 0) {
    throw ShapeError("conv2d: x " + ShapeToString(x.shape()) + ", weight " +
                     ShapeToString(weight.shape()) + ", bias " +
                     ShapeToString(bias.shape()));
  }
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const std::size_t k = weight.dim(0), cout = weight.dim(3);
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (w + 2 * padding - k) / stride + 1;
  const std::size_t patch = k * k * cin;

  // im2col: one row per output pixel, (ky, kx, c) order to match weight.
  std::vector<double> cols(ho * wo * patch, 0.0);
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      double* row = cols.data() + (oy * wo + ox) * patch;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          std::copy_n(x.data().data() + (iy * w + ix) * cin, cin,
                      row + (ky * k + kx) * cin);
        }
      }
    }
  }
  const auto rows = static_cast<Eigen::Index>(ho * wo);
  const auto pk = static_cast<Eigen::Index>(patch);
  const auto co = static_cast<Eigen::Index>(cout);
  std::vector<double> out(ho * wo * cout);
  MatMap y(out.data(), rows, co);
  y.noalias() = ConstMatMap(cols.data(), rows, pk) *
                ConstMatMap(weight.data().data(), pk, co);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), co);

  return MakeResult(
      {ho, wo, cout}, std::move(out), {x, weight, bias},
      [=, cols = std::move(cols)](Node& self) {
        Node& px = Parent(self, 0);
        Node& pw = Parent(self, 1);
        Node& pb = Parent(self, 2);
        ConstMatMap g(self.grad.data(), rows, co);
        if (pw.requires_grad) {
          MatMap(pw.EnsureGrad().data(), pk, co).noalias() +=
              ConstMatMap(cols.data(), rows, pk).transpose() * g;
        }
        if (pb.requires_grad) {
          Eigen::Map<Eigen::RowVectorXd>(pb.EnsureGrad().data(), co) +=
              g.colwise().sum();
        }
        if (px.requires_grad) {
          RowMatrix dcols = g * ConstMatMap(pw.value.data(), pk, co).transpose();
          auto& gx = px.EnsureGrad();
          for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const double* row = dcols.data() + (oy * wo + ox) * patch;
              for (std::size_t ky = 0; ky < k; ++ky) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                  if (ix < 0 || ix >= static_cast<long>(w)) continue;
                  double* dst = gx.data() + (iy * w + ix) * cin;
                  const double* src = row + (ky * k + kx) * cin;
                  for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
                }
              }
            }
          }
        }
      },
      "conv2d");
}

}  // namespace mnm::ops
