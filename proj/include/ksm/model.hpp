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

// The knowledge-selection relation classifier: entity-conditioned encoders,
// mutual attention pooling, gated knowledge selection and the softmax head.

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ksm/autodiff.hpp"
#include "ksm/corpus.hpp"
#include "ksm/knowledge.hpp"
#include "ksm/tensor.hpp"

namespace ksm::model {

enum class Activation { tanh, sigmoid, relu };
enum class SelectorOp { hadamard, sum };
enum class SelectorTarget { relation, entity, both, none };
enum class Pooling { mutual, separate, average, max };
enum class PositionEncoding { sinusoidal, learned, none };

const char* to_string(Activation v);
const char* to_string(SelectorOp v);
const char* to_string(SelectorTarget v);
const char* to_string(Pooling v);
const char* to_string(PositionEncoding v);
Activation activation_from_string(const std::string& s);
SelectorOp selector_op_from_string(const std::string& s);
SelectorTarget selector_target_from_string(const std::string& s);
Pooling pooling_from_string(const std::string& s);
PositionEncoding position_encoding_from_string(const std::string& s);

struct ModelConfig {
  int d = 100;
  int n_blocks = 2;
  int n_heads = 4;
  int d_head = 25;
  int d_kb = 100;
  double dropout_rate = 0.1;
  double layer_norm_eps = 1e-6;
  Activation selector_activation = Activation::tanh;
  SelectorOp selector_op = SelectorOp::hadamard;
  SelectorTarget selector_target = SelectorTarget::relation;
  /// false drops the relation term from the gate (context-only gate).
  bool gate_uses_relation = true;
  Pooling pooling = Pooling::mutual;
  bool shared_encoder = false;
  PositionEncoding position_encoding = PositionEncoding::sinusoidal;
  int max_position = 256;  // learned table size; larger distances clip

  /// Throws ConfigError when the fields are inconsistent.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Frozen word lookup table. Row 0 is the unknown-word vector.
class WordTable {
 public:
  static constexpr const char* kUnknown = "<unk>";

  WordTable() = default;
  explicit WordTable(kb::EmbeddingTable table);

  /// Rows for every token in `instances`: pretrained vectors where present,
  /// small seeded uniform rows otherwise.
  static WordTable build(const std::vector<corpus::CandidateInstance>& instances, const kb::EmbeddingTable& pretrained,
                         Eigen::Index dim, std::uint64_t seed, const std::vector<std::string>& extra_tokens = {});

  /// Adds pretrained rows for tokens not yet in the table; returns how many.
  std::size_t extend(const std::vector<corpus::CandidateInstance>& instances, const kb::EmbeddingTable& pretrained);

  Eigen::Index dim() const { return table_.dim(); }
  std::size_t size() const { return table_.size(); }
  /// L x dim matrix of token rows.
  Mat lookup(const std::vector<std::string>& tokens) const;
  const kb::EmbeddingTable& table() const { return table_; }

 private:
  kb::EmbeddingTable table_;
};

/// Numeric inputs of one candidate instance.
struct InstanceFeatures {
  std::string doc_id;
  corpus::EntityPair pair;
  Mat words;  // L x d
  std::vector<int> pos1;
  std::vector<int> pos2;
  RowVec e1;
  RowVec e2;
  RowVec relation;
  bool relation_in_kb = false;
  int label = -1;  // 1 positive, 0 negative, -1 unlabeled

  Eigen::Index length() const { return words.rows(); }
};

/// Fallback counters gathered while featurizing.
struct KnowledgeStats {
  std::size_t instances = 0;
  std::size_t entity_fallbacks = 0;
  std::size_t relation_fallbacks = 0;
};

InstanceFeatures featurize(const corpus::CandidateInstance& instance, const WordTable& words,
                           const kb::KnowledgeStore& store, const kb::EmbeddingTable& fallback_words,
                           const kb::MentionLexicon& lexicon, KnowledgeStats* stats = nullptr);

/// Resolves parameter names to tape leaves: trainable leaves when bound to a
/// mutable store, constants when bound to a const store.
class Binder {
 public:
  Binder(ad::Tape& tape, ParameterStore& params) : tape_(&tape), mutable_(&params), params_(&params) {}
  Binder(ad::Tape& tape, const ParameterStore& params) : tape_(&tape), params_(&params) {}

  ad::Var operator()(const std::string& name);
  ad::Var constant(Mat value) { return tape_->constant(std::move(value)); }
  ad::Tape& tape() { return *tape_; }

 private:
  ad::Tape* tape_;
  ParameterStore* mutable_ = nullptr;
  const ParameterStore* params_;
  std::map<std::string, ad::Var> constants_;
};

struct Dropout {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
  bool active = false;

  ad::Var operator()(const ad::Var& x) const;
};

/// Per-block intermediates for inspection and tests.
struct BlockTrace {
  std::vector<Mat> attention;  // per head, L x L (rows sum to one)
  Mat multi_head;              // attention output before the residual, L x d
};

/// Positional vector for a distance (sinusoidal or learned table).
ad::Var position_rows(Binder& bind, std::span<const int> positions, const ModelConfig& config);

/// Word rows plus position encodings for both focal mentions.
std::pair<ad::Var, ad::Var> embed_context(Binder& bind, const InstanceFeatures& features, const ModelConfig& config);

ad::Var entity_conditioned_block(Binder& bind, const std::string& prefix, const ad::Var& x, const ad::Var& entity,
                                 const ModelConfig& config, const Dropout& dropout, BlockTrace* trace = nullptr);

ad::Var encode(Binder& bind, const std::string& prefix, const ad::Var& x, const ad::Var& entity,
               const ModelConfig& config, const Dropout& dropout, std::vector<BlockTrace>* traces = nullptr);

struct PooledFeatures {
  ad::Var s1;  // 1 x d
  ad::Var s2;
  Mat p1;  // attention weights over positions (empty for average/max)
  Mat p2;
  Mat scores;  // pairwise scores for mutual attention, L x L
};

PooledFeatures mutual_attention(Binder& bind, const ad::Var& v1, const ad::Var& v2);
PooledFeatures separate_attention(Binder& bind, const ad::Var& v1, const ad::Var& v2);
PooledFeatures pool(Binder& bind, const ad::Var& v1, const ad::Var& v2, const ModelConfig& config);

ad::Var activate(const ad::Var& x, Activation a);

/// Gate over the relation vector from the pooled context (and optionally the
/// relation itself). Identity when the selector target excludes relations.
ad::Var knowledge_select(Binder& bind, const ad::Var& s1, const ad::Var& s2, const ad::Var& relation,
                         const ModelConfig& config);

/// Gate over an entity vector from the mean of its input sequence. Both
/// entities use the same parameters.
ad::Var entity_knowledge_select(Binder& bind, const ad::Var& x, const ad::Var& entity, const ModelConfig& config);

struct Classification {
  ad::Var probabilities;  // 1 x 2, column 1 is the positive class
  int label = 0;          // ties go to the negative class
};

Classification classify(Binder& bind, const ad::Var& s1, const ad::Var& s2, const ad::Var& relation);

/// Mean negative log-likelihood of the gold classes. Gold probabilities below
/// 1e-12 are clamped; the number of clamped entries goes to `clamped`.
ad::Var nll_loss(std::span<const ad::Var> probabilities, std::span<const int> labels, int* clamped = nullptr);

/// Parameter names and shapes implied by a config.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config);

struct ForwardResult {
  Classification output;
  PooledFeatures pooled;
  ad::Var v1;
  ad::Var v2;
  ad::Var relation;  // after selection
};

class KsmModel {
 public:
  KsmModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// Full forward pass recorded on `tape`. `training` enables dropout and
  /// binds trainable leaves; otherwise parameters enter as constants.
  ForwardResult forward(ad::Tape& tape, const InstanceFeatures& features, bool training,
                        std::mt19937_64* rng = nullptr);
  ForwardResult forward(ad::Tape& tape, const InstanceFeatures& features) const;

  /// Positive-class probability and predicted label without recording gradients.
  std::pair<double, int> predict(const InstanceFeatures& features) const;

 private:
  ForwardResult run(Binder& bind, const InstanceFeatures& features, const Dropout& dropout) const;

  ModelConfig config_;
  ParameterStore params_;
};

/// Checkpoint: JSON with format_version, model config, parameters and the
/// word table.
inline constexpr int kCheckpointVersion = 1;
void save_checkpoint(const std::string& path, const KsmModel& model, const WordTable& words);
/// Throws UsageError when the file lacks a config, the version differs, or
/// `expected` is given and differs from the stored config.
std::pair<KsmModel, WordTable> load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr);

}  // namespace ksm::model
