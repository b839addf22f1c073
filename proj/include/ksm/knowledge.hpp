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

// KB triples, TransE embeddings and pair -> knowledge resolution.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ksm/corpus.hpp"
#include "ksm/tensor.hpp"

namespace ksm::kb {

struct Triple {
  std::string head;
  std::string relation;
  std::string tail;

  auto operator<=>(const Triple&) const = default;
};

/// `head<TAB>relation<TAB>tail` per line; blank lines are skipped.
std::vector<Triple> read_triples(std::istream& in, const std::string& source);
std::vector<Triple> load_triples(const std::string& path);

/// Id -> dense row. Row order is insertion order.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(Eigen::Index dim) : dim_(dim) {}

  Eigen::Index dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }

  /// Appends a row; throws UsageError on duplicate id or width mismatch.
  std::size_t add(const std::string& id, const RowVec& v);
  std::optional<std::size_t> find(const std::string& id) const;
  const std::string& id(std::size_t i) const { return ids_[i]; }
  const std::vector<std::string>& ids() const { return ids_; }

  auto row(std::size_t i) { return vectors_.row(static_cast<Eigen::Index>(i)); }
  auto row(std::size_t i) const { return vectors_.row(static_cast<Eigen::Index>(i)); }
  Mat& matrix() { return vectors_; }
  const Mat& matrix() const { return vectors_; }

 private:
  Eigen::Index dim_ = 0;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
  Mat vectors_;
};

/// Text format: first line `count dim`, then `id v1 ... v_dim` per line.
EmbeddingTable read_embeddings(std::istream& in, const std::string& source);
EmbeddingTable load_embeddings(const std::string& path);
void write_embeddings(std::ostream& out, const EmbeddingTable& table);

enum class MultiRelationPolicy { mean, first };
MultiRelationPolicy multi_relation_from_string(const std::string& s);

/// Label under which the null relation is exported.
inline constexpr const char* kNullRelationId = "<null>";

struct KnowledgeStore {
  Eigen::Index d_kb = 100;
  EmbeddingTable entities;
  EmbeddingTable relations;
  RowVec null_relation;
  /// Relation labels observed for each unordered pair (either direction).
  std::map<corpus::EntityPair, std::set<std::string>> pair_relations;
  MultiRelationPolicy policy = MultiRelationPolicy::mean;

  /// Store with no KB content; every lookup falls back.
  static KnowledgeStore empty(Eigen::Index d_kb);
  void index_pairs(const std::vector<Triple>& triples);
};

using MentionLexicon = std::map<std::string, std::vector<std::string>>;

/// Entity rows from averaged mention-word vectors (small deterministic
/// random rows when no word is known); relation rows ~ N(0, 1/d_kb);
/// null relation zero. `words` may be empty; otherwise its width must be d_kb.
KnowledgeStore init_embeddings(const std::vector<Triple>& triples, const EmbeddingTable& words,
                               const MentionLexicon& lexicon, Eigen::Index d_kb, std::uint64_t seed);

/// ||h + r - t||_2
double transe_energy(const RowVec& h, const RowVec& r, const RowVec& t);

struct TransEConfig {
  double margin = 1.0;
  int epochs = 100;
  double lr = 0.01;
  std::uint64_t seed = 1;
};

struct TransELog {
  std::vector<double> epoch_loss;  // mean hinge loss over the epoch's triples
};

/// SGD on max(0, margin + E(h,r,t) - E(h',r,t')) with head-or-tail corruption,
/// projecting entity rows back into the unit ball after every epoch.
TransELog transe_train(const std::vector<Triple>& triples, KnowledgeStore& store, const TransEConfig& config);

struct PairKnowledge {
  RowVec e1;
  RowVec e2;
  RowVec relation;
  bool e1_in_kb = false;
  bool e2_in_kb = false;
  bool relation_in_kb = false;
};

/// Entity rows fall back to averaged mention words; the relation row is the
/// pooled relation of all triples between the pair in either direction, or
/// the null relation when there is none.
PairKnowledge resolve_pair_knowledge(const KnowledgeStore& store, const std::string& id1, const std::string& id2,
                                     const EmbeddingTable& words, const MentionLexicon& lexicon);

/// Entity vector for an id absent from the KB.
RowVec fallback_entity(const std::string& id, const EmbeddingTable& words, const MentionLexicon& lexicon,
                       Eigen::Index dim);

/// Writes `<prefix>.entities.txt` and `<prefix>.relations.txt` (the latter ends
/// with the null relation row).
void export_store(const KnowledgeStore& store, const std::string& prefix);
/// Inverse of export_store; pair relations come from `triples`.
KnowledgeStore import_store(const std::string& prefix, const std::vector<Triple>& triples);

}  // namespace ksm::kb
