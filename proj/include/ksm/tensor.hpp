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

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace ksm {

/// Row-major dense matrix; the storage of every tensor in the library.
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorT = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Mat = MatrixT<double>;
using RowVec = RowVectorT<double>;

using Shape = std::vector<Eigen::Index>;

/// Dense real array of rank 1 or 2. Rank-1 tensors of length n are stored as
/// a 1 x n row so that `values` is always a row-major matrix.
struct Tensor {
  Shape shape;
  Mat values;
  Mat grad;  // empty until a gradient has been written
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, Mat values, bool requires_grad = false);

  Eigen::Index size() const { return values.size(); }
  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  bool has_grad() const { return grad.size() == values.size() && grad.size() > 0; }

  /// Allocates a zero gradient if absent, otherwise zero-fills it.
  void zero_grad();
};

/// Storage shape for a logical tensor shape ({n} -> 1 x n).
std::pair<Eigen::Index, Eigen::Index> storage_dims(const Shape& shape);

/// Ordered, name-addressed set of trainable tensors. Iteration order is the
/// lexicographic order of names, so it is deterministic across runs.
class ParameterStore {
 public:
  using Map = std::map<std::string, Tensor>;

  /// Registers a zero-initialized parameter. Throws UsageError on duplicates.
  Tensor& add(const std::string& name, Shape shape);
  Tensor& add(const std::string& name, Shape shape, const Mat& init);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  void zero_grad();
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

  /// name -> {shape, values} mapping; values are row-major.
  nlohmann::json to_json() const;
  /// Overwrites values of existing entries. Names and shapes must match
  /// exactly in both directions.
  void load_json(const nlohmann::json& j);

 private:
  Map entries_;
};

nlohmann::json tensor_to_json(const Shape& shape, const Mat& values);
/// Parses {shape, values}; throws UsageError on malformed content.
Mat tensor_from_json(const nlohmann::json& j, Shape* shape_out = nullptr);

}  // namespace ksm
