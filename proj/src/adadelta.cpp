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

#include "ksm/adadelta.hpp"

#include "ksm/errors.hpp"

namespace ksm {

Adadelta::Adadelta(double lr, double rho, double eps) : lr_(lr), rho_(rho), eps_(eps) {
  if (lr < 0.0) throw UsageError("adadelta lr must be nonnegative");
  if (!(rho > 0.0 && rho < 1.0)) throw UsageError("adadelta rho must lie in (0, 1)");
  if (!(eps > 0.0)) throw UsageError("adadelta eps must be positive");
}

void Adadelta::step(ParameterStore& params) {
  for (auto& [name, p] : params) {
    if (!p.has_grad()) throw UsageError("adadelta: parameter " + name + " has no gradient");
  }
  for (auto& [name, p] : params) {
    auto [it, fresh] = state_.try_emplace(name);
    Accumulators& acc = it->second;
    if (fresh || acc.sq_grad.rows() != p.rows() || acc.sq_grad.cols() != p.cols()) {
      acc.sq_grad = Mat::Zero(p.rows(), p.cols());
      acc.sq_update = Mat::Zero(p.rows(), p.cols());
    }
    auto g = p.grad.array();
    acc.sq_grad = (rho_ * acc.sq_grad.array() + (1.0 - rho_) * g.square()).matrix();
    Mat delta = (-((acc.sq_update.array() + eps_).sqrt() / (acc.sq_grad.array() + eps_).sqrt()) * g).matrix();
    acc.sq_update = (rho_ * acc.sq_update.array() + (1.0 - rho_) * delta.array().square()).matrix();
    p.values += lr_ * delta;
    p.grad.setZero();
  }
}

}  // namespace ksm
