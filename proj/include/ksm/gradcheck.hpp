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

// Central finite-difference checks of the autodiff tape.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ksm/autodiff.hpp"
#include "ksm/model.hpp"
#include "ksm/tensor.hpp"

namespace ksm::gradcheck {

struct Result {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed = false;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Builds a scalar loss over parameters of `params` on a fresh tape.
using LossBuilder = std::function<ad::Var(ad::Tape&, ParameterStore&)>;

/// Compares backward gradients to central differences for every scalar of
/// every parameter.
Result check(const std::string& name, ParameterStore& params, const LossBuilder& loss, double tolerance,
             double step = 1e-5);

/// Fills every parameter with seeded values: gammas near one, others in
/// [-0.5, 0.5].
void randomize(ParameterStore& params, std::uint64_t seed);

/// Random instance with `length` positions, dims taken from `config`.
model::InstanceFeatures random_instance(const model::ModelConfig& config, Eigen::Index length, bool relation_in_kb,
                                        std::uint64_t seed);

/// Toy config used by the suites: d=8, h=2, N=2, d_kb=8, dropout off.
model::ModelConfig toy_config();

/// One check per differentiable op, tolerance 1e-4.
std::vector<Result> op_suites(std::uint64_t seed);
/// Full forward + loss on a 2-instance batch for L in {1, 2, 5} and the
/// architectural variants, tolerance 1e-3.
std::vector<Result> model_suites(std::uint64_t seed, bool variants = true);

}  // namespace ksm::gradcheck
