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

#include "ksm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ksm::gradcheck {

using ad::Tape;
using ad::Var;

double relative_error(double analytic, double numeric, double floor) {
  double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

Result check(const std::string& name, ParameterStore& params, const LossBuilder& loss, double tolerance,
             double step) {
  params.zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape, params));
  }
  std::map<std::string, Mat> analytic;
  for (auto& [pname, t] : params) analytic.emplace(pname, t.grad);

  auto eval = [&]() {
    Tape tape;
    return loss(tape, params).scalar();
  };

  Result r;
  r.name = name;
  r.tolerance = tolerance;
  for (auto& [pname, t] : params) {
    for (Eigen::Index i = 0; i < t.values.size(); ++i) {
      double& x = t.values.data()[i];
      const double saved = x;
      x = saved + step;
      const double up = eval();
      x = saved - step;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic.at(pname).data()[i], numeric));
      ++r.checked;
    }
  }
  params.zero_grad();
  r.passed = r.max_rel_error < tolerance;
  return r;
}

void randomize(ParameterStore& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-0.5, 0.5);
  for (auto& [name, t] : params) {
    const bool gamma = name.size() >= 6 && name.compare(name.size() - 6, 6, ".gamma") == 0;
    for (Eigen::Index i = 0; i < t.values.size(); ++i) t.values.data()[i] = (gamma ? 1.0 : 0.0) + uni(rng);
  }
}

model::InstanceFeatures random_instance(const model::ModelConfig& config, Eigen::Index length, bool relation_in_kb,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::uniform_int_distribution<int> pos(0, 12);
  auto row = [&](Eigen::Index n) {
    RowVec v(n);
    for (Eigen::Index k = 0; k < n; ++k) v(k) = uni(rng);
    return v;
  };
  model::InstanceFeatures f;
  f.doc_id = "toy";
  f.pair = corpus::EntityPair("A", "B");
  f.words.resize(length, config.d);
  for (Eigen::Index i = 0; i < f.words.size(); ++i) f.words.data()[i] = uni(rng);
  for (Eigen::Index i = 0; i < length; ++i) {
    f.pos1.push_back(pos(rng));
    f.pos2.push_back(pos(rng));
  }
  f.e1 = row(config.d_kb);
  f.e2 = row(config.d_kb);
  f.relation = row(config.d_kb);
  f.relation_in_kb = relation_in_kb;
  f.label = static_cast<int>(seed % 2);
  return f;
}

model::ModelConfig toy_config() {
  model::ModelConfig c;
  c.d = 8;
  c.n_heads = 2;
  c.d_head = 4;
  c.n_blocks = 2;
  c.d_kb = 8;
  c.dropout_rate = 0.0;
  return c;
}

namespace {

Mat random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> uni(lo, hi);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uni(rng);
  return m;
}

// Scalar read-out that weights every output entry differently.
Var weighted_sum(Tape& tape, const Var& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(out, tape.constant(random_matrix(out.rows(), out.cols(), rng))));
}

}  // namespace

std::vector<Result> op_suites(std::uint64_t seed) {
  std::vector<Result> results;
  std::mt19937_64 rng(seed);
  constexpr double kTol = 1e-4;

  auto run = [&](const std::string& name, std::vector<std::pair<std::string, Mat>> inputs,
                 std::function<Var(Tape&, std::vector<Var>&)> op) {
    ParameterStore params;
    std::vector<std::string> names;
    for (auto& [n, m] : inputs) {
      params.add(n, {m.rows(), m.cols()}, m);
      names.push_back(n);
    }
    const std::uint64_t readout = rng();
    results.push_back(check(name, params, [&, names, readout](Tape& tape, ParameterStore& p) {
      std::vector<Var> vars;
      for (const auto& n : names) vars.push_back(tape.parameter(p.at(n)));
      return weighted_sum(tape, op(tape, vars), readout);
    }, kTol));
  };

  run("matmul", {{"a", random_matrix(3, 4, rng)}, {"b", random_matrix(4, 2, rng)}},
      [](Tape&, std::vector<Var>& v) { return ad::matmul(v[0], v[1]); });
  run("matmul_nt", {{"a", random_matrix(3, 4, rng)}, {"b", random_matrix(5, 4, rng)}},
      [](Tape&, std::vector<Var>& v) { return ad::matmul_nt(v[0], v[1]); });
  run("transpose", {{"a", random_matrix(3, 2, rng)}}, [](Tape&, std::vector<Var>& v) { return ad::transpose(v[0]); });
  run("add", {{"a", random_matrix(3, 4, rng)}, {"b", random_matrix(3, 4, rng)}},
      [](Tape&, std::vector<Var>& v) { return ad::add(v[0], v[1]); });
  run("add_broadcast", {{"a", random_matrix(3, 4, rng)}, {"b", random_matrix(1, 4, rng)}},
      [](Tape&, std::vector<Var>& v) { return ad::add(v[0], v[1]); });
  run("sub", {{"a", random_matrix(2, 3, rng)}, {"b", random_matrix(2, 3, rng)}},
      [](Tape&, std::vector<Var>& v) { return ad::sub(v[0], v[1]); });
  run("mul", {{"a", random_matrix(3, 4, rng)}, {"b", random_matrix(3, 4, rng)}},
      [](Tape&, std::vector<Var>& v) { return ad::mul(v[0], v[1]); });
  run("scale", {{"a", random_matrix(2, 2, rng)}}, [](Tape&, std::vector<Var>& v) { return ad::scale(v[0], -1.7); });
  run("tanh", {{"a", random_matrix(3, 3, rng, -2, 2)}}, [](Tape&, std::vector<Var>& v) { return ad::tanh(v[0]); });
  run("sigmoid", {{"a", random_matrix(3, 3, rng, -3, 3)}},
      [](Tape&, std::vector<Var>& v) { return ad::sigmoid(v[0]); });
  run("relu", {{"a", random_matrix(4, 4, rng)}}, [](Tape&, std::vector<Var>& v) { return ad::relu(v[0]); });
  run("concat_cols", {{"a", random_matrix(2, 3, rng)}, {"b", random_matrix(2, 1, rng)}, {"c", random_matrix(2, 2, rng)}},
      [](Tape&, std::vector<Var>& v) { return ad::concat_cols({v[0], v[1], v[2]}); });
  run("mean_axis0", {{"a", random_matrix(4, 3, rng)}}, [](Tape&, std::vector<Var>& v) { return ad::mean(v[0], 0); });
  run("mean_axis1", {{"a", random_matrix(4, 3, rng)}}, [](Tape&, std::vector<Var>& v) { return ad::mean(v[0], 1); });
  run("max_axis0", {{"a", random_matrix(4, 3, rng)}}, [](Tape&, std::vector<Var>& v) { return ad::max(v[0], 0); });
  run("max_axis1", {{"a", random_matrix(4, 3, rng)}}, [](Tape&, std::vector<Var>& v) { return ad::max(v[0], 1); });
  run("sum", {{"a", random_matrix(2, 5, rng)}}, [](Tape&, std::vector<Var>& v) { return ad::sum(v[0]); });
  run("softmax_axis1", {{"a", random_matrix(3, 5, rng, -2, 2)}},
      [](Tape&, std::vector<Var>& v) { return ad::softmax(v[0], 1); });
  run("softmax_axis0", {{"a", random_matrix(5, 3, rng, -2, 2)}},
      [](Tape&, std::vector<Var>& v) { return ad::softmax(v[0], 0); });
  run("layer_norm",
      {{"x", random_matrix(3, 6, rng)}, {"gamma", random_matrix(1, 6, rng, 0.5, 1.5)}, {"beta", random_matrix(1, 6, rng)}},
      [](Tape&, std::vector<Var>& v) { return ad::layer_norm(v[0], v[1], v[2], 1e-6); });
  run("dropout", {{"a", random_matrix(4, 4, rng)}}, [](Tape&, std::vector<Var>& v) {
    std::mt19937_64 mask_rng(7);
    return ad::dropout(v[0], 0.3, mask_rng, true);
  });
  run("gather_rows", {{"a", random_matrix(4, 3, rng)}}, [](Tape&, std::vector<Var>& v) {
    const Eigen::Index idx[] = {2, 0, 2, 3};
    return ad::gather_rows(v[0], idx);
  });
  run("gather_cols", {{"a", random_matrix(3, 4, rng)}}, [](Tape&, std::vector<Var>& v) {
    const Eigen::Index idx[] = {1, 1, 3};
    return ad::gather_cols(v[0], idx);
  });
  run("repeat_rows", {{"a", random_matrix(1, 4, rng)}},
      [](Tape&, std::vector<Var>& v) { return ad::repeat_rows(v[0], 3); });
  run("log", {{"a", random_matrix(2, 3, rng, 0.2, 2.0)}}, [](Tape&, std::vector<Var>& v) { return ad::log(v[0]); });
  run("reshape", {{"a", random_matrix(2, 6, rng)}}, [](Tape&, std::vector<Var>& v) { return ad::reshape(v[0], 3, 4); });
  return results;
}

std::vector<Result> model_suites(std::uint64_t seed, bool variants) {
  using namespace model;
  std::vector<std::pair<std::string, ModelConfig>> configs;
  ModelConfig base = toy_config();
  configs.push_back({"ksm", base});
  if (variants) {
    auto with = [&](const std::string& name, auto edit) {
      ModelConfig c = base;
      edit(c);
      configs.push_back({name, c});
    };
    with("ksm_r", [](ModelConfig& c) { c.gate_uses_relation = false; });
    with("ksm_sum", [](ModelConfig& c) { c.selector_op = SelectorOp::sum; });
    with("ksm_sigmoid", [](ModelConfig& c) { c.selector_activation = Activation::sigmoid; });
    with("ksm_relu", [](ModelConfig& c) { c.selector_activation = Activation::relu; });
    with("no_selector", [](ModelConfig& c) { c.selector_target = SelectorTarget::none; });
    with("entity_selector", [](ModelConfig& c) { c.selector_target = SelectorTarget::entity; });
    with("entity_and_relation", [](ModelConfig& c) { c.selector_target = SelectorTarget::both; });
    with("average", [](ModelConfig& c) { c.pooling = Pooling::average; });
    with("max", [](ModelConfig& c) { c.pooling = Pooling::max; });
    with("separate_attention", [](ModelConfig& c) { c.pooling = Pooling::separate; });
    with("one_block", [](ModelConfig& c) { c.n_blocks = 1; });
    with("shared_encoder", [](ModelConfig& c) { c.shared_encoder = true; });
    with("learned_positions", [](ModelConfig& c) {
      c.position_encoding = PositionEncoding::learned;
      c.max_position = 16;
    });
  }

  std::vector<Result> results;
  for (const Eigen::Index L : {1, 2, 5}) {
    for (const auto& [name, config] : configs) {
      KsmModel m(config, seed);
      randomize(m.params(), seed + 11);
      // One instance with a KB relation and one that falls back to the null relation.
      std::vector<InstanceFeatures> batch = {random_instance(config, L, true, seed + 2 * L),
                                             random_instance(config, L, false, seed + 2 * L + 1)};
      batch[0].label = 1;
      batch[1].label = 0;
      results.push_back(check(name + "_L" + std::to_string(L), m.params(),
                              [&m, &batch](Tape& tape, ParameterStore&) {
                                std::vector<Var> probs;
                                std::vector<int> labels;
                                for (const auto& f : batch) {
                                  auto out = m.forward(tape, f, true, nullptr);
                                  probs.push_back(out.output.probabilities);
                                  labels.push_back(f.label);
                                }
                                return nll_loss(probs, labels);
                              },
                              1e-3));
    }
  }
  return results;
}

}  // namespace ksm::gradcheck
