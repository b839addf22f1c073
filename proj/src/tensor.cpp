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

#include "ksm/tensor.hpp"

#include <numeric>
#include <utility>

#include "ksm/errors.hpp"

namespace ksm {

std::pair<Eigen::Index, Eigen::Index> storage_dims(const Shape& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw UsageError("tensor rank must be 1 or 2");
  }
  for (auto n : shape) {
    if (n <= 0) throw UsageError("tensor dimensions must be positive");
  }
  if (shape.size() == 1) return {1, shape[0]};
  return {shape[0], shape[1]};
}

Tensor::Tensor(Shape s, bool rg) : shape(std::move(s)), requires_grad(rg) {
  auto [r, c] = storage_dims(shape);
  values = Mat::Zero(r, c);
}

Tensor::Tensor(Shape s, Mat v, bool rg) : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
  auto [r, c] = storage_dims(shape);
  if (values.rows() != r || values.cols() != c) {
    throw UsageError("tensor values do not match shape");
  }
}

void Tensor::zero_grad() {
  if (grad.rows() != values.rows() || grad.cols() != values.cols()) {
    grad = Mat::Zero(values.rows(), values.cols());
  } else {
    grad.setZero();
  }
}

Tensor& ParameterStore::add(const std::string& name, Shape shape) {
  if (contains(name)) throw UsageError("duplicate parameter name: " + name);
  auto [it, _] = entries_.emplace(name, Tensor(std::move(shape), true));
  return it->second;
}

Tensor& ParameterStore::add(const std::string& name, Shape shape, const Mat& init) {
  Tensor& t = add(name, std::move(shape));
  if (init.rows() != t.rows() || init.cols() != t.cols()) {
    entries_.erase(name);
    throw UsageError("initializer shape mismatch for " + name);
  }
  t.values = init;
  return t;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw UsageError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw UsageError("unknown parameter: " + name);
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += static_cast<std::size_t>(t.size());
  return n;
}

nlohmann::json tensor_to_json(const Shape& shape, const Mat& values) {
  nlohmann::json j;
  j["shape"] = shape;
  j["values"] = std::vector<double>(values.data(), values.data() + values.size());
  return j;
}

Mat tensor_from_json(const nlohmann::json& j, Shape* shape_out) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("values")) {
    throw UsageError("tensor record needs shape and values");
  }
  Shape shape = j.at("shape").get<Shape>();
  auto [r, c] = storage_dims(shape);
  auto vals = j.at("values").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(vals.size()) != r * c) {
    throw UsageError("tensor value count does not match shape");
  }
  if (shape_out) *shape_out = shape;
  return Eigen::Map<const Mat>(vals.data(), r, c);
}

nlohmann::json ParameterStore::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, t] : entries_) j[name] = tensor_to_json(t.shape, t.values);
  return j;
}

void ParameterStore::load_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("parameter block must be an object");
  if (j.size() != entries_.size()) {
    throw UsageError("parameter count mismatch: checkpoint has " + std::to_string(j.size()) +
                     ", model expects " + std::to_string(entries_.size()));
  }
  for (auto& [name, t] : entries_) {
    if (!j.contains(name)) throw UsageError("checkpoint lacks parameter " + name);
    Shape shape;
    Mat v = tensor_from_json(j.at(name), &shape);
    if (shape != t.shape) throw UsageError("shape mismatch for parameter " + name);
    t.values = std::move(v);
  }
}

}  // namespace ksm
