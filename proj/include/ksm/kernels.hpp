// Copyright 2026 The KSM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Scalar-generic dense kernels shared by the autodiff tape and by callers
// that only need forward values.

#include <Eigen/Dense>

#include <cmath>

#include "ksm/errors.hpp"
#include "ksm/tensor.hpp"

namespace ksm::kernels {

/// Max-subtracted softmax along `axis` (0: down columns, 1: across rows).
template <typename Derived>
MatrixT<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& x, int axis) {
  using Scalar = typename Derived::Scalar;
  if (axis != 0 && axis != 1) throw UsageError("softmax axis must be 0 or 1");
  MatrixT<Scalar> y(x.rows(), x.cols());
  if (axis == 1) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      auto e = (x.row(i).array() - x.row(i).maxCoeff()).exp();
      y.row(i) = e / e.sum();
    }
  } else {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      auto e = (x.col(j).array() - x.col(j).maxCoeff()).exp();
      y.col(j) = e / e.sum();
    }
  }
  return y;
}

/// Per-row normalization statistics used by layer_norm and its adjoint.
template <typename Scalar>
struct LayerNormCache {
  MatrixT<Scalar> normalized;        // (x - mean) / sqrt(var + eps)
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std;
};

template <typename Derived>
LayerNormCache<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& x,
                                                        typename Derived::Scalar eps) {
  using Scalar = typename Derived::Scalar;
  if (x.cols() == 0) throw UsageError("layer_norm over a zero-length axis");
  if (!(eps > Scalar(0))) throw UsageError("layer_norm eps must be positive");
  LayerNormCache<Scalar> c;
  c.normalized.resize(x.rows(), x.cols());
  c.inv_std.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Scalar mean = x.row(i).mean();
    auto centered = (x.row(i).array() - mean).eval();
    Scalar var = centered.square().mean();
    c.inv_std(i) = Scalar(1) / std::sqrt(var + eps);
    c.normalized.row(i) = centered * c.inv_std(i);
  }
  return c;
}

template <typename Derived, typename G, typename B>
MatrixT<typename Derived::Scalar> layer_norm(const Eigen::MatrixBase<Derived>& x,
                                             const Eigen::MatrixBase<G>& gamma,
                                             const Eigen::MatrixBase<B>& beta,
                                             typename Derived::Scalar eps) {
  if (gamma.size() != x.cols() || beta.size() != x.cols()) {
    throw UsageError("layer_norm gamma/beta must match the last axis");
  }
  auto c = normalize_rows(x, eps);
  MatrixT<typename Derived::Scalar> y = c.normalized;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    y.row(i) = y.row(i).cwiseProduct(gamma.reshaped().transpose()) + beta.reshaped().transpose();
  }
  return y;
}

/// Fixed sinusoidal encoding of an integer distance:
/// P[2k] = sin(pos / 10000^(2k/d)), P[2k+1] = cos(pos / 10000^(2k/d)).
template <typename Scalar = double>
RowVectorT<Scalar> sinusoidal_position(long position, Eigen::Index dim) {
  RowVectorT<Scalar> p(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    Eigen::Index k2 = i - (i % 2);
    Scalar rate = std::pow(Scalar(10000), Scalar(k2) / Scalar(dim));
    Scalar angle = Scalar(position) / rate;
    p(i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return p;
}

}  // namespace ksm::kernels
