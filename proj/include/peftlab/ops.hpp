// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. All of them are 2-D at most; a 1-D
// tensor of length n behaves as a 1 x n row where a matrix is expected.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "peftlab/tensor.hpp"

namespace peftlab {

namespace kernel {

// out[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out + i * n;
    const double* ar = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

// out[m x n] += a[m x k] * b[n x k]^T
inline void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* o = out + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      o[j] += s;
    }
  }
}

// out[k x n] += a[m x k]^T * b[m x n]
inline void gemm_tn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    const double* br = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      double* o = out + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

}  // namespace kernel

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.dim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline void require_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (std::isnan(v)) throw NumericError(std::string(op) + ": NaN in input");
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  kernel::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      kernel::gemm_nt(self.grad.data(), pb.data.data(), pa.grad.data(), m, n, k);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      kernel::gemm_tn(pa.data.data(), self.grad.data(), pb.grad.data(), m, k, n);
    }
  });
}

// a[m x k] * b[n x k]^T, the layout of a linear layer with weight [out x in].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  kernel::gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      kernel::gemm_nn(self.grad.data(), pb.data.data(), pa.grad.data(), m, n, k);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      kernel::gemm_tn(self.grad.data(), pa.data.data(), pb.grad.data(), m, n, k);
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto d = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = d[i * n + j];
  return detail::make_result({n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += self.grad[j * m + i];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  return detail::make_result(std::move(shape), a.values(), {a}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  });
}

// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.data[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values());
  for (auto& v : out) v *= s;
  return detail::make_result(a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += s * self.grad[i];
  });
}

// Adds a length-n vector to every row of an m x n matrix.
inline Tensor add_row(const Tensor& a, const Tensor& row) {
  const std::size_t m = a.rows(), n = a.cols();
  if (row.size() != n) {
    throw DimensionError("add_row: row of shape " + shape_str(row.shape()) +
                         " does not fit matrix " + shape_str(a.shape()));
  }
  std::vector<double> out(a.values());
  const auto r = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += r[j];
  return detail::make_result(a.shape(), std::move(out), {a, row}, [m, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pr = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pr.requires_grad) {
      pr.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) pr.grad[j] += self.grad[i * n + j];
    }
  });
}

inline Tensor square(const Tensor& a) { return mul(a, a); }

inline Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return detail::make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pa.grad[i] += self.grad[i] * (1.0 - self.data[i] * self.data[i]);
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return detail::make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (pa.data[i] > 0.0) pa.grad[i] += self.grad[i];
  });
}

// Exact (erf) GELU.
inline Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
  return detail::make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = pa.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      pa.grad[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result({}, {s}, {a}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (auto& g : pa.grad) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

// Mean squared error between two same-shape tensors.
inline Tensor mse(const Tensor& prediction, const Tensor& target) {
  return mean(square(sub(prediction, target)));
}

// Numerically stable softmax along an axis (0 = down columns, 1 = along rows).
inline Tensor softmax(const Tensor& a, int axis = -1) {
  detail::require_finite(a.data(), "softmax");
  const std::size_t m = a.rows(), n = a.cols();
  if (axis < 0) axis = a.dim() == 2 ? 1 : 0;
  const bool along_rows = a.dim() < 2 ? axis == 0 : axis == 1;
  if (a.dim() < 2 ? axis != 0 : axis > 1) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " +
                         shape_str(a.shape()));
  }
  // Slices: count x length with stride between elements of a slice.
  const std::size_t count = along_rows ? m : n;
  const std::size_t length = along_rows ? n : m;
  const std::size_t stride = along_rows ? 1 : n;
  const std::size_t step = along_rows ? n : 1;
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t base = s * step;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < length; ++i) mx = std::max(mx, x[base + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < length; ++i) {
      const double e = std::exp(x[base + i * stride] - mx);
      out[base + i * stride] = e;
      z += e;
    }
    for (std::size_t i = 0; i < length; ++i) out[base + i * stride] /= z;
  }
  return detail::make_result(
      a.shape(), std::move(out), {a}, [count, length, stride, step](detail::Node& self) {
        auto& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t s = 0; s < count; ++s) {
          const std::size_t base = s * step;
          double dot = 0.0;
          for (std::size_t i = 0; i < length; ++i) {
            const std::size_t k = base + i * stride;
            dot += self.grad[k] * self.data[k];
          }
          for (std::size_t i = 0; i < length; ++i) {
            const std::size_t k = base + i * stride;
            pa.grad[k] += self.data[k] * (self.grad[k] - dot);
          }
        }
      });
}

enum class Reduction { kMean, kSum };

// Token-level cross-entropy of logits [T x V] against T target ids.
inline Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                            Reduction reduction = Reduction::kMean) {
  const std::size_t t_len = logits.rows(), vocab = logits.cols();
  if (targets.size() != t_len || t_len == 0) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  for (std::size_t t = 0; t < t_len; ++t) {
    if (targets[t] >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[t]) + " at position " +
                       std::to_string(t) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
  detail::require_finite(logits.data(), "cross_entropy");
  const auto x = logits.data();
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    const double* row = x.data() + t * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(row[v] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t v = 0; v < vocab; ++v) probs[t * vocab + v] = std::exp(row[v] - log_z);
    total -= row[targets[t]] - log_z;
  }
  const double factor = reduction == Reduction::kMean ? 1.0 / static_cast<double>(t_len) : 1.0;
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return detail::make_result(
      {}, {total * factor}, {logits},
      [probs = std::move(probs), tgt = std::move(tgt), vocab, factor](detail::Node& self) {
        auto& pl = *self.parents[0];
        pl.ensure_grad();
        const double g = self.grad[0] * factor;
        for (std::size_t t = 0; t < tgt.size(); ++t) {
          for (std::size_t v = 0; v < vocab; ++v) {
            const double onehot = v == tgt[t] ? 1.0 : 0.0;
            pl.grad[t * vocab + v] += g * (probs[t * vocab + v] - onehot);
          }
        }
      });
}

// Rows of an embedding table [V x d] selected by ids.
inline Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  detail::require_matrix(table, "embedding");
  const std::size_t vocab = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  const auto w = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(w.begin() + ids[i] * d, d, out.begin() + i * d);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return detail::make_result({ids.size(), d}, std::move(out), {table},
                             [idx = std::move(idx), d](detail::Node& self) {
                               auto& pt = *self.parents[0];
                               pt.ensure_grad();
                               for (std::size_t i = 0; i < idx.size(); ++i)
                                 for (std::size_t j = 0; j < d; ++j)
                                   pt.grad[idx[i] * d + j] += self.grad[i * d + j];
                             });
}

// Row-wise layer normalization with learned gain and bias of length n.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " for input " + shape_str(x.shape()));
  }
  const auto xd = x.data(), gd = gain.data(), bd = bias.data();
  std::vector<double> out(x.size()), xhat(x.size()), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xd.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gd[j] + bd[j];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), m, n](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        if (pg.requires_grad) {
          pg.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) pg.grad[j] += self.grad[i * n + j] * xhat[i * n + j];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) pb.grad[j] += self.grad[i * n + j];
        }
        if (px.requires_grad) {
          px.ensure_grad();
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double g = self.grad[i * n + j] * pg.data[j];
              sum_g += g;
              sum_gx += g * xhat[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
              const double g = self.grad[i * n + j] * pg.data[j];
              px.grad[i * n + j] +=
                  inv_std[i] * (g - inv_n * sum_g - xhat[i * n + j] * inv_n * sum_gx);
            }
          }
        }
      });
}

// Columns [begin, end) of a matrix.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t m = a.rows(), n = a.cols();
  if (begin > end || end > n) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_str(a.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  const auto d = a.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(d.begin() + i * n + begin, w, out.begin() + i * w);
  return detail::make_result({m, w}, std::move(out), {a}, [m, n, w, begin](detail::Node& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) pa.grad[i * n + begin + j] += self.grad[i * w + j];
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row counts differ, " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    offsets.push_back(n);
    n += p.cols();
  }
  std::vector<double> out(m * n);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto d = parts[k].data();
    const std::size_t w = parts[k].cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(d.begin() + i * w, w, out.begin() + i * n + offsets[k]);
  }
  return detail::make_result({m, n}, std::move(out), parts,
                             [m, n, offsets](detail::Node& self) {
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 auto& p = *self.parents[k];
                                 if (!p.requires_grad) continue;
                                 p.ensure_grad();
                                 const std::size_t w = p.data.size() / m;
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < w; ++j)
                                     p.grad[i * w + j] += self.grad[i * n + offsets[k] + j];
                               }
                             });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  std::vector<std::size_t> offsets;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column counts differ, " +
                           shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
    }
    offsets.push_back(m * n);
    m += p.rows();
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return detail::make_result({m, n}, std::move(out), parts, [offsets](detail::Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < p.data.size(); ++i) p.grad[i] += self.grad[offsets[k] + i];
    }
  });
}

// Mean over rows: [m x n] -> [n].
inline Tensor mean_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(n, 0.0);
  const auto d = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += d[i * n + j];
  for (auto& v : out) v /= static_cast<double>(m);
  return detail::make_result({n}, std::move(out), {a}, [m, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += self.grad[j] * inv;
  });
}

}  // namespace peftlab
