// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "peftlab/tensor.hpp"

namespace peftlab {

struct EigenResult {
  Tensor eigenvalues;   // [n], ascending
  Tensor eigenvectors;  // [n x n], column i pairs with eigenvalue i
  int sweeps = 0;
};

inline constexpr int kJacobiMaxSweeps = 100;
inline constexpr double kJacobiTolerance = 1e-12;

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
inline EigenResult sym_eigen(const Tensor& s) {
  if (s.dim() != 2 || s.rows() != s.cols()) {
    throw DimensionError("sym_eigen: expected a square matrix, got " + shape_str(s.shape()));
  }
  const std::size_t n = s.rows();
  std::vector<double> a(s.data().begin(), s.data().end());
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  const double sym_tol = 1e-9 * std::max(1.0, scale);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(a[i * n + j] - a[j * n + i]) > sym_tol) {
        throw ContractError("sym_eigen: matrix is not symmetric at (" + std::to_string(i) + ", " +
                            std::to_string(j) + ")");
      }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = a[j * n + i] = 0.5 * (a[i * n + j] + a[j * n + i]);

  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  auto off_norm = [&] {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) acc += a[i * n + j] * a[i * n + j];
    return std::sqrt(acc);
  };

  const double threshold = kJacobiTolerance * std::max(1.0, scale);
  int sweep = 0;
  for (; sweep < kJacobiMaxSweeps && off_norm() > threshold; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p], aqq = a[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - sn * akq;
          a[k * n + q] = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - sn * aqk;
          a[q * n + k] = sn * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - sn * vkq;
          v[k * n + q] = sn * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a[x * n + x] < a[y * n + y]; });
  std::vector<double> values(n), vectors(n * n);
  for (std::size_t k = 0; k < n; ++k) {
    values[k] = a[order[k] * n + order[k]];
    for (std::size_t i = 0; i < n; ++i) vectors[i * n + k] = v[i * n + order[k]];
  }
  return {Tensor({n}, std::move(values)), Tensor({n, n}, std::move(vectors)), sweep};
}

// V f(Λ) Vᵀ for a symmetric matrix.
template <typename F>
Tensor sym_apply(const Tensor& s, F&& f) {
  const auto eig = sym_eigen(s);
  const std::size_t n = s.rows();
  const auto lam = eig.eigenvalues.data();
  const auto vec = eig.eigenvectors.data();
  std::vector<double> out(n * n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double fk = f(lam[k]);
    if (fk == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double vik = vec[i * n + k] * fk;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += vik * vec[j * n + k];
    }
  }
  return Tensor({n, n}, std::move(out));
}

// Square root of a symmetric PSD matrix; negative eigenvalues clamp to zero.
inline Tensor sym_sqrt(const Tensor& s) {
  return sym_apply(s, [](double x) { return x > 0.0 ? std::sqrt(x) : 0.0; });
}

}  // namespace peftlab
