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

// Training loop, document-level aggregation and exact-match scoring.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ksm/corpus.hpp"
#include "ksm/model.hpp"

namespace ksm::train {

struct TrainConfig {
  int batch_size = 64;
  double lr = 0.02;
  double rho = 0.95;
  double eps = 1e-6;
  int max_epochs = 20;
  int patience = 5;  // epochs without held-out improvement before stopping
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;      // mean training loss over the epoch's batches
  double accuracy = 0.0;  // on the training forwards of the epoch
  std::optional<double> heldout_f1;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  std::optional<double> best_heldout_f1;
};

/// doc_id -> unordered pairs.
using PredictionSet = std::map<std::string, std::set<corpus::EntityPair>>;
using GoldSet = PredictionSet;

/// Receives one structured log record per event.
using LogSink = std::function<void(const nlohmann::json&)>;

struct HeldOut {
  const std::vector<model::InstanceFeatures>* instances = nullptr;
  const GoldSet* gold = nullptr;
};

/// Adadelta over seeded per-epoch shuffles of `instances`. With a held-out
/// set the parameters of the best held-out F1 epoch are restored at the end
/// and training stops after `patience` epochs without improvement.
TrainLog train_model(model::KsmModel& model, const std::vector<model::InstanceFeatures>& instances,
                     const TrainConfig& config, HeldOut heldout = {}, const LogSink& log = {});

/// Mean NLL over labeled instances with dropout off.
double evaluate_loss(const model::KsmModel& model, std::span<const model::InstanceFeatures> instances);
double evaluate_accuracy(const model::KsmModel& model, std::span<const model::InstanceFeatures> instances);

struct InstancePrediction {
  std::string doc_id;
  corpus::EntityPair pair;
  int label = 0;
  double probability = 0.0;
};

std::vector<InstancePrediction> predict_instances(const model::KsmModel& model,
                                                  std::span<const model::InstanceFeatures> instances);

/// A pair is predicted for a document when any of its instances is positive.
PredictionSet aggregate_predictions(std::span<const InstancePrediction> predictions);

struct Scores {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

Scores scores_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);
/// Micro-averaged exact-match scores, pooling counts over documents.
Scores micro_prf(const PredictionSet& predictions, const GoldSet& gold);

/// `doc_id<TAB>entity1<TAB>entity2` per line, sorted.
void write_predictions(std::ostream& out, const PredictionSet& predictions);
PredictionSet read_predictions(std::istream& in, const std::string& source);

/// Plain-text report with percentages to two decimals.
std::string score_report(const Scores& s);

/// Deterministic held-out assignment by hash of doc_id.
bool is_held_out(const std::string& doc_id, double fraction);

}  // namespace ksm::train
