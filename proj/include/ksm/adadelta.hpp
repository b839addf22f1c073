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

#include <map>
#include <string>

#include "ksm/tensor.hpp"

namespace ksm {

/// Adadelta with a learning-rate multiplier on the update. Per parameter:
///   Eg2  <- rho * Eg2  + (1 - rho) * g^2
///   dx    = -sqrt(Edx2 + eps) / sqrt(Eg2 + eps) * g
///   Edx2 <- rho * Edx2 + (1 - rho) * dx^2
///   x    <- x + lr * dx
class Adadelta {
 public:
  struct Accumulators {
    Mat sq_grad;
    Mat sq_update;
  };

  explicit Adadelta(double lr = 0.02, double rho = 0.95, double eps = 1e-6);

  /// Applies one update to every parameter in `params` and clears their
  /// gradients. Throws UsageError if a parameter has no gradient.
  void step(ParameterStore& params);

  double lr() const { return lr_; }
  double rho() const { return rho_; }
  double eps() const { return eps_; }
  const std::map<std::string, Accumulators>& state() const { return state_; }

 private:
  double lr_, rho_, eps_;
  std::map<std::string, Accumulators> state_;
};

}  // namespace ksm
