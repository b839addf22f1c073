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

#include "ksm/training.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "ksm/adadelta.hpp"
#include "ksm/errors.hpp"

namespace ksm::train {

using model::InstanceFeatures;
using model::KsmModel;
using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (max_epochs < 0) throw ConfigError("max_epochs must be nonnegative");
  if (patience < 1) throw ConfigError("patience must be at least 1");
}

namespace {

std::map<std::string, Mat> snapshot(const ParameterStore& params) {
  std::map<std::string, Mat> out;
  for (const auto& [name, t] : params) out.emplace(name, t.values);
  return out;
}

void restore(ParameterStore& params, const std::map<std::string, Mat>& snap) {
  for (auto& [name, t] : params) t.values = snap.at(name);
}

}  // namespace

TrainLog train_model(KsmModel& model, const std::vector<InstanceFeatures>& instances, const TrainConfig& config,
                     HeldOut heldout, const LogSink& log) {
  // lr = 0 is accepted here for diagnostics; TrainConfig::validate rejects it
  // for user-facing runs.
  if (config.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (instances.empty()) throw UsageError("train_model: empty training set");
  for (const auto& f : instances) {
    if (f.label != 0 && f.label != 1) throw UsageError("train_model: training instances must be labeled");
  }
  Adadelta optimizer(config.lr, config.rho, config.eps);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  TrainLog result;
  std::map<std::string, Mat> best;
  int since_best = 0;
  const bool use_heldout = heldout.instances && heldout.gold && !heldout.instances->empty();

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0, correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      model.params().zero_grad();
      ad::Tape tape;
      std::vector<ad::Var> probs;
      std::vector<int> labels;
      for (std::size_t k = start; k < stop; ++k) {
        const InstanceFeatures& f = instances[order[k]];
        auto out = model.forward(tape, f, true, &rng);
        probs.push_back(out.output.probabilities);
        labels.push_back(f.label);
        correct += out.output.label == f.label ? 1 : 0;
      }
      int clamped = 0;
      ad::Var loss = model::nll_loss(probs, labels, &clamped);
      if (clamped > 0 && log) {
        log({{"schema", 1}, {"event", "warning"}, {"message", "gold probability clamped at 1e-12"},
             {"count", clamped}, {"epoch", epoch}});
      }
      tape.backward(loss);
      optimizer.step(model.params());
      loss_sum += loss.scalar();
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(batches);
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(instances.size());
    if (use_heldout) {
      auto preds = predict_instances(model, *heldout.instances);
      rec.heldout_f1 = micro_prf(aggregate_predictions(preds), *heldout.gold).f1;
      if (!result.best_heldout_f1 || *rec.heldout_f1 > *result.best_heldout_f1) {
        result.best_heldout_f1 = rec.heldout_f1;
        result.best_epoch = epoch;
        best = snapshot(model.params());
        since_best = 0;
      } else {
        ++since_best;
      }
    } else {
      result.best_epoch = epoch;
    }
    result.epochs.push_back(rec);
    if (log) {
      json j{{"schema", 1}, {"event", "epoch"}, {"epoch", epoch}, {"loss", rec.loss}, {"accuracy", rec.accuracy}};
      if (rec.heldout_f1) j["heldout_f1"] = *rec.heldout_f1;
      log(j);
    }
    if (use_heldout && since_best >= config.patience) break;
  }
  if (use_heldout && !best.empty()) restore(model.params(), best);
  return result;
}

double evaluate_loss(const KsmModel& model, std::span<const InstanceFeatures> instances) {
  if (instances.empty()) throw UsageError("evaluate_loss: no instances");
  double total = 0.0;
  for (const auto& f : instances) {
    if (f.label != 0 && f.label != 1) throw UsageError("evaluate_loss: instance is unlabeled");
    ad::Tape tape;
    auto out = model.forward(tape, f);
    int label = f.label;
    total += model::nll_loss(std::span<const ad::Var>(&out.output.probabilities, 1), std::span<const int>(&label, 1))
                 .scalar();
  }
  return total / static_cast<double>(instances.size());
}

double evaluate_accuracy(const KsmModel& model, std::span<const InstanceFeatures> instances) {
  if (instances.empty()) throw UsageError("evaluate_accuracy: no instances");
  std::size_t correct = 0;
  for (const auto& f : instances) correct += model.predict(f).second == f.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(instances.size());
}

std::vector<InstancePrediction> predict_instances(const KsmModel& model, std::span<const InstanceFeatures> instances) {
  std::vector<InstancePrediction> out;
  out.reserve(instances.size());
  for (const auto& f : instances) {
    auto [p, label] = model.predict(f);
    out.push_back({f.doc_id, f.pair, label, p});
  }
  return out;
}

PredictionSet aggregate_predictions(std::span<const InstancePrediction> predictions) {
  PredictionSet out;
  for (const auto& p : predictions) {
    if (p.label == 1) out[p.doc_id].insert(p.pair);
  }
  return out;
}

Scores scores_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  Scores s{tp, fp, fn, 0.0, 0.0, 0.0};
  if (tp + fp > 0) s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) s.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

Scores micro_prf(const PredictionSet& predictions, const GoldSet& gold) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& [doc, pairs] : predictions) {
    auto g = gold.find(doc);
    for (const auto& p : pairs) {
      if (g != gold.end() && g->second.count(p)) {
        ++tp;
      } else {
        ++fp;
      }
    }
  }
  for (const auto& [doc, pairs] : gold) {
    auto pr = predictions.find(doc);
    for (const auto& p : pairs) {
      if (pr == predictions.end() || !pr->second.count(p)) ++fn;
    }
  }
  return scores_from_counts(tp, fp, fn);
}

void write_predictions(std::ostream& out, const PredictionSet& predictions) {
  for (const auto& [doc, pairs] : predictions) {
    for (const auto& p : pairs) out << doc << '\t' << p.first << '\t' << p.second << '\n';
  }
}

PredictionSet read_predictions(std::istream& in, const std::string& source) {
  PredictionSet out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 3 || f[0].empty() || f[1].empty() || f[2].empty()) {
      throw FormatError(source, lineno, "expected doc_id<TAB>entity1<TAB>entity2");
    }
    out[f[0]].emplace(f[1], f[2]);
  }
  return out;
}

std::string score_report(const Scores& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "schema: 1\nprecision: %.2f\nrecall: %.2f\nf1: %.2f\ntp: %zu\nfp: %zu\nfn: %zu\n",
                100.0 * s.precision, 100.0 * s.recall, 100.0 * s.f1, s.tp, s.fp, s.fn);
  return buf;
}

bool is_held_out(const std::string& doc_id, double fraction) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : doc_id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return static_cast<double>(h % 10000) < fraction * 10000.0;
}

}  // namespace ksm::train
