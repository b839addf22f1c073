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

// Synthetic inputs shared by the training tests and the acceptance runner.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ksm/model.hpp"

namespace ksm::testing {

/// Linearly separable instances: every word row of a positive instance is
/// +margin * u plus small noise, negatives use -margin * u. Labels alternate.
inline std::vector<model::InstanceFeatures> separable_instances(const model::ModelConfig& c, int count,
                                                                std::uint64_t seed, double margin = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowVec u(c.d);
  for (Eigen::Index k = 0; k < c.d; ++k) u(k) = normal(rng);
  u.normalize();
  const double noise = 0.3 / std::sqrt(static_cast<double>(c.d));
  std::vector<model::InstanceFeatures> out;
  for (int i = 0; i < count; ++i) {
    model::InstanceFeatures f;
    f.label = i % 2;
    const Eigen::Index L = 3 + i % 5;
    f.doc_id = "doc" + std::to_string(i);
    f.pair = corpus::EntityPair("a" + std::to_string(i), "b" + std::to_string(i));
    f.words.resize(L, c.d);
    for (Eigen::Index r = 0; r < L; ++r) {
      for (Eigen::Index k = 0; k < c.d; ++k) f.words(r, k) = noise * normal(rng);
      f.words.row(r) += (f.label ? margin : -margin) * u;
      f.pos1.push_back(static_cast<int>(r) + 1);
      f.pos2.push_back(static_cast<int>(L - r));
    }
    f.e1.resize(c.d_kb);
    f.e2.resize(c.d_kb);
    for (Eigen::Index k = 0; k < c.d_kb; ++k) {
      f.e1(k) = 0.1 * normal(rng);
      f.e2(k) = 0.1 * normal(rng);
    }
    f.relation = RowVec::Zero(c.d_kb);
    f.relation_in_kb = false;
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace ksm::testing
