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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "ksm/errors.hpp"
#include "ksm/gradcheck.hpp"
#include "ksm/training.hpp"
#include "synthetic.hpp"

using namespace ksm;
using namespace ksm::train;
using corpus::EntityPair;

namespace {

PredictionSet synthetic_set(const std::string& tag, std::size_t n) {
  PredictionSet s;
  for (std::size_t i = 0; i < n; ++i) s["doc" + std::to_string(i % 7)].insert(EntityPair(tag + std::to_string(i), "x"));
  return s;
}

model::ModelConfig small_config() {
  model::ModelConfig c = gradcheck::toy_config();
  c.d = 16;
  c.d_head = 8;
  c.d_kb = 8;
  return c;
}

// Counts by enumerating the union of both sets.
Scores brute_force(const PredictionSet& pred, const GoldSet& gold) {
  std::set<std::pair<std::string, EntityPair>> p, g, all;
  for (const auto& [d, pairs] : pred) {
    for (const auto& x : pairs) p.emplace(d, x);
  }
  for (const auto& [d, pairs] : gold) {
    for (const auto& x : pairs) g.emplace(d, x);
  }
  all.insert(p.begin(), p.end());
  all.insert(g.begin(), g.end());
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& x : all) {
    const bool in_p = p.count(x), in_g = g.count(x);
    tp += in_p && in_g;
    fp += in_p && !in_g;
    fn += !in_p && in_g;
  }
  Scores s{tp, fp, fn, 0, 0, 0};
  s.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
  s.recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
  s.f1 = tp ? 2.0 * double(tp) / double(2 * tp + fp + fn) : 0.0;
  return s;
}

}  // namespace

TEST_CASE("scores from reference counts") {
  Scores s = scores_from_counts(325, 513, 544);
  CHECK(std::abs(100.0 * s.precision - 38.78) < 0.01);
  CHECK(std::abs(100.0 * s.recall - 37.40) < 0.01);
  CHECK(std::abs(100.0 * s.f1 - 38.08) < 0.01);
  PredictionSet pred, gold;
  for (int i = 0; i < 325; ++i) {
    pred["d"].insert(EntityPair("tp" + std::to_string(i), "x"));
    gold["d"].insert(EntityPair("tp" + std::to_string(i), "x"));
  }
  for (int i = 0; i < 513; ++i) pred["e"].insert(EntityPair("fp" + std::to_string(i), "x"));
  for (int i = 0; i < 544; ++i) gold["f"].insert(EntityPair("fn" + std::to_string(i), "x"));
  Scores m = micro_prf(pred, gold);
  CHECK(m.tp == 325);
  CHECK(m.fp == 513);
  CHECK(m.fn == 544);
  CHECK(m.f1 == doctest::Approx(650.0 / 1707.0));
}

TEST_CASE("micro scores agree with a brute-force count on random sets") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> doc(0, 4), ent(0, 5), size(0, 12);
  for (int trial = 0; trial < 1000; ++trial) {
    PredictionSet p, g;
    for (int k = size(rng); k > 0; --k) p["d" + std::to_string(doc(rng))].insert(EntityPair(std::to_string(ent(rng)), std::to_string(ent(rng))));
    for (int k = size(rng); k > 0; --k) g["d" + std::to_string(doc(rng))].insert(EntityPair(std::to_string(ent(rng)), std::to_string(ent(rng))));
    Scores a = micro_prf(p, g), b = brute_force(p, g);
    REQUIRE(a.tp == b.tp);
    REQUIRE(a.fp == b.fp);
    REQUIRE(a.fn == b.fn);
    REQUIRE(a.f1 == doctest::Approx(b.f1));
    REQUIRE(a.f1 >= 0.0);
    REQUIRE(a.f1 <= 1.0);
  }
}

TEST_CASE("empty predictions score zero without dividing by zero") {
  Scores s = micro_prf({}, synthetic_set("g", 5));
  CHECK(s.precision == 0.0);
  CHECK(s.recall == 0.0);
  CHECK(s.f1 == 0.0);
  CHECK(micro_prf({}, {}).f1 == 0.0);
}

TEST_CASE("perfect predictions report 100 percent") {
  auto gold = synthetic_set("p", 9);
  const std::string report = score_report(micro_prf(gold, gold));
  CHECK(report.find("precision: 100.00\nrecall: 100.00\nf1: 100.00\n") != std::string::npos);
  CHECK(report.rfind("schema: 1\n", 0) == 0);
}

TEST_CASE("aggregation: any positive instance makes the pair, order and repeats do not matter") {
  std::vector<InstancePrediction> preds = {
      {"d1", EntityPair("a", "b"), 0, 0.2}, {"d1", EntityPair("b", "a"), 1, 0.9}, {"d1", EntityPair("a", "c"), 0, 0.1},
      {"d2", EntityPair("a", "b"), 0, 0.4}, {"d2", EntityPair("x", "y"), 1, 0.7}};
  PredictionSet once = aggregate_predictions(preds);
  CHECK(once.at("d1") == std::set<EntityPair>{EntityPair("a", "b")});
  CHECK(once.at("d2") == std::set<EntityPair>{EntityPair("x", "y")});
  auto doubled = preds;
  doubled.insert(doubled.end(), preds.begin(), preds.end());
  std::reverse(doubled.begin(), doubled.end());
  CHECK(aggregate_predictions(doubled) == once);
  std::vector<InstancePrediction> again;
  for (const auto& [doc, pairs] : once) {
    for (const auto& p : pairs) again.push_back({doc, p, 1, 1.0});
  }
  CHECK(aggregate_predictions(again) == once);
}

TEST_CASE("prediction files round trip and report malformed lines") {
  auto set = synthetic_set("q", 11);
  std::stringstream buf;
  write_predictions(buf, set);
  CHECK(read_predictions(buf, "p.tsv") == set);
  std::istringstream bad("d\ta\tb\nd\tonly\n");
  try {
    read_predictions(bad, "p.tsv");
    FAIL("expected a FormatError");
  } catch (const FormatError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("held-out assignment is deterministic and near the requested fraction") {
  int held = 0;
  for (int i = 0; i < 5000; ++i) {
    const std::string id = "PMID" + std::to_string(100000 + i);
    CHECK(is_held_out(id, 0.1) == is_held_out(id, 0.1));
    held += is_held_out(id, 0.1);
  }
  CHECK(held > 400);
  CHECK(held < 600);
  CHECK_FALSE(is_held_out("anything", 0.0));
}

TEST_CASE("training rejects empty or unlabeled sets") {
  model::KsmModel m(small_config(), 1);
  CHECK_THROWS_AS(train_model(m, {}, TrainConfig{}), UsageError);
  auto data = testing::separable_instances(small_config(), 4, 1);
  data[0].label = -1;
  CHECK_THROWS_AS(train_model(m, data, TrainConfig{}), UsageError);
}

TEST_CASE("loss decreases every epoch at a small learning rate") {
  auto c = small_config();
  c.dropout_rate = 0.0;
  auto data = testing::separable_instances(c, 16, 5);
  model::KsmModel m(c, 2);
  TrainConfig tc;
  tc.batch_size = 16;  // one full batch per epoch
  tc.lr = 1e-3;
  tc.max_epochs = 10;
  auto log = train_model(m, data, tc);
  REQUIRE(log.epochs.size() == 10);
  for (std::size_t e = 1; e < log.epochs.size(); ++e) CHECK(log.epochs[e].loss < log.epochs[e - 1].loss);
}

TEST_CASE("a zero learning rate leaves the loss unchanged") {
  auto c = small_config();
  c.dropout_rate = 0.0;
  auto data = testing::separable_instances(c, 8, 5);
  model::KsmModel m(c, 2);
  const double before = evaluate_loss(m, data);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.lr = 0.0;
  tc.max_epochs = 3;
  train_model(m, data, tc);
  CHECK(evaluate_loss(m, data) == before);
}

TEST_CASE("training is deterministic per seed") {
  auto c = small_config();
  auto data = testing::separable_instances(c, 12, 9);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_epochs = 3;
  model::KsmModel a(c, 4), b(c, 4);
  auto la = train_model(a, data, tc), lb = train_model(b, data, tc);
  CHECK(la.epochs.back().loss == lb.epochs.back().loss);
  for (const auto& [name, t] : a.params()) CHECK(t.values == b.params().at(name).values);
  tc.seed = 2;
  model::KsmModel d(c, 4);
  auto ld = train_model(d, data, tc);
  CHECK(ld.epochs.back().loss != la.epochs.back().loss);
}

TEST_CASE("a separable set is fitted exactly") {
  model::ModelConfig c;  // default widths
  auto data = testing::separable_instances(c, 40, 42);
  model::KsmModel m(c, 7);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 50;
  tc.seed = 3;
  auto log = train_model(m, data, tc);
  CHECK(evaluate_accuracy(m, data) == 1.0);
  CHECK(log.epochs.back().loss < log.epochs.front().loss);
}

TEST_CASE("held-out selection stops after the patience runs out and logs records") {
  auto c = small_config();
  auto data = testing::separable_instances(c, 8, 3);
  auto held = testing::separable_instances(c, 4, 4);
  GoldSet gold;
  for (const auto& f : held) {
    if (f.label == 1) gold[f.doc_id].insert(f.pair);
  }
  model::KsmModel m(c, 5);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.lr = 1e-9;  // predictions cannot change, so F1 never improves
  tc.max_epochs = 20;
  tc.patience = 2;
  std::vector<nlohmann::json> records;
  auto log = train_model(m, data, tc, HeldOut{&held, &gold}, [&](const nlohmann::json& j) { records.push_back(j); });
  CHECK(log.epochs.size() == 3);
  CHECK(log.best_epoch == 1);
  REQUIRE(log.best_heldout_f1);
  REQUIRE(records.size() >= 3);
  for (const auto& r : records) CHECK(r.at("schema") == 1);
  CHECK(records.front().at("event") == "epoch");
  CHECK(records.front().contains("heldout_f1"));
}

TEST_CASE("the best held-out epoch's parameters are restored") {
  auto c = small_config();
  auto data = testing::separable_instances(c, 16, 3);
  auto held = testing::separable_instances(c, 8, 4);
  GoldSet gold;
  for (const auto& f : held) {
    if (f.label == 1) gold[f.doc_id].insert(f.pair);
  }
  model::KsmModel m(c, 5);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_epochs = 6;
  tc.patience = 6;
  auto log = train_model(m, data, tc, HeldOut{&held, &gold});
  REQUIRE(log.best_heldout_f1);
  const double restored = micro_prf(aggregate_predictions(predict_instances(m, held)), gold).f1;
  CHECK(restored == doctest::Approx(*log.best_heldout_f1));
}
